#![allow(dead_code)]

use omni_core::numerics::gradcheck::{check_gradients, GradReport};
use omni_core::numerics::{Graph, SplitMix64, Tensor, Var};
use omni_core::Result;

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub f: OpFn,
}

/// Scalar `sum(out * w)` with fixed pseudo-random `w`, so every output
/// element gets a distinct upstream gradient.
pub fn reduce(g: &mut Graph, v: Var) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let n = shape.iter().product();
    let mut r = SplitMix64::new(0xFEED);
    let w = g.constant(Tensor::new(shape, r.normal_vec(n, 1.0))?);
    let p = g.mul(v, w)?;
    g.sum(p)
}

fn case(name: &'static str, shapes: &[&[usize]], f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        f: Box::new(f),
    }
}

/// One case per differentiable graph op.
pub fn op_suite() -> Vec<OpCase> {
    vec![
        case("add", &[&[3, 4], &[3, 4]], |g, v| { let y = g.add(v[0], v[1])?; reduce(g, y) }),
        case("sub", &[&[3, 4], &[3, 4]], |g, v| { let y = g.sub(v[0], v[1])?; reduce(g, y) }),
        case("mul", &[&[3, 4], &[3, 4]], |g, v| { let y = g.mul(v[0], v[1])?; reduce(g, y) }),
        case("add_row", &[&[3, 4], &[4]], |g, v| { let y = g.add_row(v[0], v[1])?; reduce(g, y) }),
        case("mul_row", &[&[3, 4], &[4]], |g, v| { let y = g.mul_row(v[0], v[1])?; reduce(g, y) }),
        case("add_col", &[&[3, 5], &[3]], |g, v| { let y = g.add_col(v[0], v[1])?; reduce(g, y) }),
        case("mul_col", &[&[3, 5], &[3]], |g, v| { let y = g.mul_col(v[0], v[1])?; reduce(g, y) }),
        case("scale", &[&[2, 3]], |g, v| { let y = g.scale(v[0], -1.7)?; reduce(g, y) }),
        case("matmul", &[&[3, 4], &[4, 2]], |g, v| { let y = g.matmul(v[0], v[1])?; reduce(g, y) }),
        case("transpose", &[&[3, 4]], |g, v| { let y = g.transpose(v[0])?; reduce(g, y) }),
        case("conv1d", &[&[3, 9], &[4, 3, 3]], |g, v| { let y = g.conv1d(v[0], v[1], 1)?; reduce(g, y) }),
        case("conv1d_stride2", &[&[2, 10], &[3, 2, 3]], |g, v| { let y = g.conv1d(v[0], v[1], 2)?; reduce(g, y) }),
        case("pad_replicate", &[&[2, 5]], |g, v| { let y = g.pad_replicate(v[0], 2, 1)?; reduce(g, y) }),
        case("upsample", &[&[2, 4]], |g, v| { let y = g.upsample(v[0], 2)?; reduce(g, y) }),
        case("mean_pool", &[&[3, 8]], |g, v| { let y = g.mean_pool(v[0], 2)?; reduce(g, y) }),
        case("relu", &[&[4, 5]], |g, v| { let y = g.relu(v[0])?; reduce(g, y) }),
        case("gelu", &[&[4, 5]], |g, v| { let y = g.gelu(v[0])?; reduce(g, y) }),
        case("layernorm", &[&[3, 6]], |g, v| { let y = g.layernorm(v[0], 1e-5)?; reduce(g, y) }),
        case("softmax", &[&[3, 5]], |g, v| { let y = g.softmax(v[0])?; reduce(g, y) }),
        case("causal_softmax", &[&[3, 5]], |g, v| { let y = g.causal_softmax(v[0])?; reduce(g, y) }),
        case("cross_entropy", &[&[4, 6]], |g, v| g.cross_entropy(v[0], &[0, 5, 2, 2])),
        case("l1_loss", &[&[3, 4], &[3, 4]], |g, v| g.l1_loss(v[0], v[1])),
        case("mse_loss", &[&[3, 4], &[3, 4]], |g, v| g.mse_loss(v[0], v[1])),
        case("sum", &[&[3, 4]], |g, v| { let y = g.mul(v[0], v[0])?; g.sum(y) }),
        case("mean", &[&[3, 4]], |g, v| { let y = g.mul(v[0], v[0])?; g.mean(y) }),
        case("concat_rows", &[&[2, 3], &[1, 3]], |g, v| { let y = g.concat(&[v[0], v[1]], 0)?; reduce(g, y) }),
        case("concat_cols", &[&[2, 3], &[2, 2]], |g, v| { let y = g.concat(&[v[0], v[1]], 1)?; reduce(g, y) }),
        case("slice_rows", &[&[5, 3]], |g, v| { let y = g.slice_rows(v[0], 1, 3)?; reduce(g, y) }),
        case("slice_cols", &[&[3, 5]], |g, v| { let y = g.slice_cols(v[0], 2, 2)?; reduce(g, y) }),
        case("reshape", &[&[3, 4]], |g, v| { let y = g.reshape(v[0], &[2, 6])?; reduce(g, y) }),
        case("gather", &[&[5, 3]], |g, v| { let y = g.gather(v[0], &[4, 0, 2, 2])?; reduce(g, y) }),
    ]
}

pub fn random_inputs(shapes: &[Vec<usize>], seed: u64) -> Vec<Tensor> {
    let mut r = SplitMix64::new(seed);
    shapes
        .iter()
        .map(|s| Tensor::new(s.clone(), r.normal_vec(s.iter().product(), 1.0)).unwrap())
        .collect()
}

pub fn check_case(c: &OpCase, seed: u64) -> Result<GradReport> {
    check_gradients(|g, v| (c.f)(g, v), &random_inputs(&c.shapes, seed), 1e-6)
}

/// Two-layer MLP with cross-entropy, parameters as inputs
/// `[x, w1, b1, w2, b2]`.
pub fn mlp_loss(g: &mut Graph, v: &[Var]) -> Result<Var> {
    let h = g.matmul(v[0], v[1])?;
    let h = g.add_row(h, v[2])?;
    let h = g.gelu(h)?;
    let o = g.matmul(h, v[3])?;
    let o = g.add_row(o, v[4])?;
    g.cross_entropy(o, &[0, 2, 1, 2, 0])
}

pub const MLP_SHAPES: [&[usize]; 5] = [&[5, 4], &[4, 6], &[6], &[6, 3], &[3]];
