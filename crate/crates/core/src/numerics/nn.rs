//! Small layer helpers built on [`Graph`]. Layers only hold parameter names;
//! values live in a [`ParamStore`] and are looked up through [`Bound`].

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use super::rng::SplitMix64;
use super::tensor::Tensor;
use crate::error::Result;

pub const LAYERNORM_EPS: f64 = 1e-5;

/// `x[n, in] @ w[in, out] + b[out]`
#[derive(Debug, Clone)]
pub struct Linear {
    w: String,
    b: String,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        group: &str,
        input: usize,
        output: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        Self::init_scaled(store, prefix, group, input, output, 1.0, rng)
    }

    /// Like [`Linear::init`] with the weight std multiplied by `gain`.
    pub fn init_scaled(
        store: &mut ParamStore,
        prefix: &str,
        group: &str,
        input: usize,
        output: usize,
        gain: f64,
        rng: &mut SplitMix64,
    ) -> Self {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        store.insert_normal(&w, group, &[input, output], gain / (input as f64).sqrt(), rng);
        store.insert_full(&b, group, &[output], 0.0);
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.matmul(x, p.get(&self.w)?)?;
        g.add_row(h, p.get(&self.b)?)
    }
}

/// Convolution over `[channels, time]` with replicate padding and bias.
/// Stride 1 preserves length; stride 2 halves an even length.
#[derive(Debug, Clone)]
pub struct Conv1d {
    w: String,
    b: String,
    kernel: usize,
    stride: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        group: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut SplitMix64,
    ) -> Self {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        let std = gain / ((cin * kernel) as f64).sqrt();
        store.insert_normal(&w, group, &[cout, cin, kernel], std, rng);
        store.insert_full(&b, group, &[cout], 0.0);
        Self {
            w,
            b,
            kernel,
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let left = (self.kernel - 1) / 2;
        let right = self.kernel - 1 - left;
        let xp = if self.kernel > 1 {
            g.pad_replicate(x, left, right)?
        } else {
            x
        };
        let y = g.conv1d(xp, p.get(&self.w)?, self.stride)?;
        g.add_col(y, p.get(&self.b)?)
    }
}

/// Layer norm over the last dim with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: String,
    bias: String,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, prefix: &str, group: &str, dim: usize) -> Self {
        let gain = format!("{prefix}.g");
        let bias = format!("{prefix}.b");
        store.insert_full(&gain, group, &[dim], 1.0);
        store.insert_full(&bias, group, &[dim], 0.0);
        Self { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.layernorm(x, LAYERNORM_EPS)?;
        let s = g.mul_row(n, p.get(&self.gain)?)?;
        g.add_row(s, p.get(&self.bias)?)
    }
}

/// Multi-head causal self-attention over `[positions, width]`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
}

impl SelfAttention {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        group: &str,
        dim: usize,
        heads: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        assert!(dim.is_multiple_of(heads), "width {dim} not divisible by {heads} heads");
        Self {
            q: Linear::init(store, &format!("{prefix}.q"), group, dim, dim, rng),
            k: Linear::init(store, &format!("{prefix}.k"), group, dim, dim, rng),
            v: Linear::init(store, &format!("{prefix}.v"), group, dim, dim, rng),
            o: Linear::init(store, &format!("{prefix}.o"), group, dim, dim, rng),
            heads,
            head_dim: dim / heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * self.head_dim;
            let qh = g.slice_cols(q, start, self.head_dim)?;
            let kh = g.slice_cols(k, start, self.head_dim)?;
            let vh = g.slice_cols(v, start, self.head_dim)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.causal_softmax(scores)?;
            outs.push(g.matmul(attn, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat(&outs, 1)?
        };
        self.o.forward(g, p, merged)
    }
}

/// Causal transformer block. With `norm` it is pre-LN; without, the residual
/// stream is never normalized.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: Option<LayerNorm>,
    attn: SelfAttention,
    ln2: Option<LayerNorm>,
    up: Linear,
    down: Linear,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        group: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        norm: bool,
        rng: &mut SplitMix64,
    ) -> Self {
        Self {
            ln1: norm.then(|| LayerNorm::init(store, &format!("{prefix}.ln1"), group, dim)),
            attn: SelfAttention::init(store, &format!("{prefix}.attn"), group, dim, heads, rng),
            ln2: norm.then(|| LayerNorm::init(store, &format!("{prefix}.ln2"), group, dim)),
            up: Linear::init(store, &format!("{prefix}.up"), group, dim, hidden, rng),
            down: Linear::init(store, &format!("{prefix}.down"), group, hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = match &self.ln1 {
            Some(ln) => ln.forward(g, p, x)?,
            None => x,
        };
        let a = self.attn.forward(g, p, h)?;
        let x = g.add(x, a)?;
        let h = match &self.ln2 {
            Some(ln) => ln.forward(g, p, x)?,
            None => x,
        };
        let h = self.up.forward(g, p, h)?;
        let h = g.gelu(h)?;
        let h = self.down.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Fixed sinusoidal position table `[positions, dim]`.
pub fn sinusoidal_positions(positions: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; positions * dim];
    for pos in 0..positions {
        for i in 0..dim {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![positions, dim], data).expect("shape")
}

/// Sinusoidal embedding of a scalar time `t` in `[0, 1]`, shape `[1, dim]`.
pub fn time_embedding(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for i in 0..half {
        let freq = (1000f64).powf(i as f64 / half.max(1) as f64);
        data[i] = (t * freq).sin();
        data[half + i] = (t * freq).cos();
    }
    Tensor::new(vec![1, dim], data).expect("shape")
}
