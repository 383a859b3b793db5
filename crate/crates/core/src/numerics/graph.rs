//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value; nodes are created in
//! topological order, so `backward` is a single reverse sweep. Shape
//! conventions per op are documented on each method. Time-series tensors are
//! `[channels, time]`, sequences of vectors are `[positions, width]`.

use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d { x: Var, w: Var, stride: usize, k: usize },
    PadReplicate { x: Var, left: usize, right: usize },
    Upsample { x: Var, factor: usize },
    MeanPool { x: Var, factor: usize },
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    CausalSoftmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    L1(Var, Var),
    Mse(Var, Var),
    Sum(Var),
    Mean(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    Gather { table: Var, ids: Vec<usize> },
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations plus accumulated leaf gradients.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `a[m,k] @ b[k,n]`
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m,k] @ b[n,k]^T`
fn mm_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k,m]^T @ b[k,n]`
fn mm_at(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Unfold `[cin, t]` into `[cin*k, tout]` columns for a strided convolution.
fn im2col(x: &[f64], cin: usize, t: usize, k: usize, stride: usize, tout: usize) -> Vec<f64> {
    let mut cols = vec![0.0; cin * k * tout];
    for c in 0..cin {
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * tout..(c * k + kk + 1) * tout];
            for (to, r) in row.iter_mut().enumerate() {
                *r = x[c * t + to * stride + kk];
            }
        }
    }
    cols
}

fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let th = inner.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input node. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let requires_grad = t.requires_grad;
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable input node.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Untracked input node.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grad(v)
            .map(|g| Tensor::new(self.value(v).shape().to_vec(), g.to_vec()).expect("grad shape"))
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Detached copy of `v` (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFinite {
                op: name.to_string(),
                index,
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary_same(&self, op: &'static str, a: Var, b: Var) -> Result<(&Tensor, &Tensor)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok((ta, tb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("add", a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("sub", a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("mul", a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    fn row_broadcast(&self, op: &'static str, x: Var, b: Var) -> Result<usize> {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = last_dim(tx);
        if tb.rank() != 1 || tb.numel() != n || tx.rank() == 0 {
            return Err(shape_err(op, tx, tb));
        }
        Ok(n)
    }

    /// `x[.., n] + b[n]`, broadcasting `b` over leading dims.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.row_broadcast("add_row", x, b)?;
        let (tx, tb) = (self.value(x), self.value(b));
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % n])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_row", out, Op::AddRow(x, b), &[x, b])
    }

    /// `x[.., n] * s[n]`, broadcasting `s` over leading dims.
    pub fn mul_row(&mut self, x: Var, s: Var) -> Result<Var> {
        let n = self.row_broadcast("mul_row", x, s)?;
        let (tx, ts) = (self.value(x), self.value(s));
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * ts.data()[i % n])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("mul_row", out, Op::MulRow(x, s), &[x, s])
    }

    fn col_broadcast(&self, op: &'static str, x: Var, b: Var) -> Result<(usize, usize)> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (c, t) = tx.dims2().map_err(|_| shape_err(op, tx, tb))?;
        if tb.rank() != 1 || tb.numel() != c {
            return Err(shape_err(op, tx, tb));
        }
        Ok((c, t))
    }

    /// `x[c, t] + b[c]`, broadcasting `b` over time.
    pub fn add_col(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, t) = self.col_broadcast("add_col", x, b)?;
        let (tx, tb) = (self.value(x), self.value(b));
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i / t])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_col", out, Op::AddCol(x, b), &[x, b])
    }

    /// `x[c, t] * s[c]`, broadcasting `s` over time.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (_, t) = self.col_broadcast("mul_col", x, s)?;
        let (tx, ts) = (self.value(x), self.value(s));
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * ts.data()[i / t])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("mul_col", out, Op::MulCol(x, s), &[x, s])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * s).collect())?;
        self.push("scale", out, Op::Scale(x, s), &[x])
    }

    /// `a[m, k] @ b[k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2().map_err(|_| shape_err("matmul", ta, tb))?;
        let (k2, n) = tb.dims2().map_err(|_| shape_err("matmul", ta, tb))?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = Tensor::new(vec![m, n], mm(ta.data(), tb.data(), m, k, n))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    /// Valid (unpadded) strided convolution: `x[cin, t]`, `w[cout, cin, k]`
    /// -> `[cout, (t - k) / stride + 1]`. Pad beforehand with
    /// [`Graph::pad_replicate`].
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let err = || shape_err("conv1d", tx, tw);
        let (cin, t) = tx.dims2().map_err(|_| err())?;
        let &[cout, cin_w, k] = tw.shape() else {
            return Err(err());
        };
        if cin != cin_w || t < k || stride == 0 {
            return Err(err());
        }
        let tout = (t - k) / stride + 1;
        let cols = im2col(tx.data(), cin, t, k, stride, tout);
        let out = Tensor::new(vec![cout, tout], mm(tw.data(), &cols, cout, cin * k, tout))?;
        self.push("conv1d", out, Op::Conv1d { x, w, stride, k }, &[x, w])
    }

    /// Pads the time axis of `x[c, t]` by repeating the edge samples.
    pub fn pad_replicate(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let tx = self.value(x);
        let (c, t) = tx.dims2()?;
        if t == 0 {
            return Err(invalid("pad_replicate on empty time axis"));
        }
        let tn = t + left + right;
        let mut data = vec![0.0; c * tn];
        for ch in 0..c {
            let src = &tx.data()[ch * t..(ch + 1) * t];
            for (j, d) in data[ch * tn..(ch + 1) * tn].iter_mut().enumerate() {
                *d = src[j.saturating_sub(left).min(t - 1)];
            }
        }
        let out = Tensor::new(vec![c, tn], data)?;
        self.push("pad_replicate", out, Op::PadReplicate { x, left, right }, &[x])
    }

    /// Nearest-neighbour upsampling of `x[c, t]` to `[c, t * factor]`.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let tx = self.value(x);
        let (c, t) = tx.dims2()?;
        let data = (0..c * t * factor)
            .map(|i| {
                let ch = i / (t * factor);
                let j = (i % (t * factor)) / factor;
                tx.data()[ch * t + j]
            })
            .collect();
        let out = Tensor::new(vec![c, t * factor], data)?;
        self.push("upsample", out, Op::Upsample { x, factor }, &[x])
    }

    /// Non-overlapping average pooling of `x[c, t]` along time; `t` must be
    /// divisible by `factor`.
    pub fn mean_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let tx = self.value(x);
        let (c, t) = tx.dims2()?;
        if factor == 0 || t % factor != 0 {
            return Err(invalid(format!(
                "mean_pool: time length {t} not divisible by {factor}"
            )));
        }
        let tn = t / factor;
        let data = (0..c * tn)
            .map(|i| {
                let (ch, j) = (i / tn, i % tn);
                tx.data()[ch * t + j * factor..ch * t + (j + 1) * factor]
                    .iter()
                    .sum::<f64>()
                    / factor as f64
            })
            .collect();
        let out = Tensor::new(vec![c, tn], data)?;
        self.push("mean_pool", out, Op::MeanPool { x, factor }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v.max(0.0)).collect())?;
        self.push("relu", out, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh()))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    /// Normalizes over the last dim, without affine parameters.
    pub fn layernorm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let n = last_dim(tx);
        let rows = tx.numel() / n.max(1);
        let mut data = vec![0.0; tx.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let xs = &tx.data()[r * n..(r + 1) * n];
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in data[r * n..(r + 1) * n].iter_mut().zip(xs) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("layernorm", out, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// Softmax over the last dim (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = last_dim(tx);
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Row-wise softmax of `x[n, m]` where row `i` may only attend to columns
    /// `j <= i + (m - n)`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (n, m) = tx.dims2()?;
        if m < n {
            return Err(invalid(format!("causal_softmax needs cols >= rows, got {n}x{m}")));
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let allowed = i + (m - n) + 1;
            let row = &mut data[i * m..i * m + allowed];
            row.copy_from_slice(&tx.data()[i * m..i * m + allowed]);
            softmax_in_place(row);
        }
        let out = Tensor::new(vec![n, m], data)?;
        self.push("causal_softmax", out, Op::CausalSoftmax(x), &[x])
    }

    /// Mean cross-entropy of `logits[n, v]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (n, v) = tl.dims2()?;
        if targets.len() != n {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= v) {
            return Err(invalid(format!("cross_entropy target {bad} >= vocab {v}")));
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(v).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[i]];
            softmax_in_place(row);
        }
        let out = Tensor::scalar(loss / n.max(1) as f64);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("cross_entropy", out, op, &[logits])
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("l1_loss", a, b)?;
        let out = Tensor::scalar(ta.mean_abs_diff(tb));
        self.push("l1_loss", out, Op::L1(a, b), &[a, b])
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.binary_same("mse_loss", a, b)?;
        let n = ta.numel().max(1) as f64;
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum();
        self.push("mse_loss", Tensor::scalar(s / n), Op::Mse(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Concatenation along `axis`: 0 for any rank, 1 for rank-2 tensors.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat of zero tensors"))?;
        let base = self.value(*first).clone();
        match axis {
            0 => {
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let t = self.value(*p);
                    if t.rank() == 0 || t.shape()[1..] != base.shape()[1..] {
                        return Err(shape_err("concat", &base, t));
                    }
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                let mut shape = base.shape().to_vec();
                shape[0] = rows;
                let out = Tensor::new(shape, data)?;
                self.push("concat", out, Op::Concat { parts: parts.to_vec(), axis }, parts)
            }
            1 => {
                let (r, _) = base.dims2()?;
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let t = self.value(*p);
                    match t.dims2() {
                        Ok((rr, c)) if rr == r => widths.push(c),
                        _ => return Err(shape_err("concat", &base, t)),
                    }
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(r * total);
                for i in 0..r {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
                    }
                }
                let out = Tensor::new(vec![r, total], data)?;
                self.push("concat", out, Op::Concat { parts: parts.to_vec(), axis }, parts)
            }
            _ => Err(invalid(format!("concat axis {axis} unsupported"))),
        }
    }

    /// Rows `start..start+len` along dim 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() == 0 || start + len > tx.shape()[0] {
            return Err(invalid(format!(
                "slice_rows {start}..{} out of range for {:?}",
                start + len,
                tx.shape()
            )));
        }
        let inner: usize = tx.shape()[1..].iter().product();
        let data = tx.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = tx.shape().to_vec();
        shape[0] = len;
        let out = Tensor::new(shape, data)?;
        self.push("slice_rows", out, Op::SliceRows { x, start }, &[x])
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2()?;
        if start + len > c {
            return Err(invalid(format!(
                "slice_cols {start}..{} out of range for {:?}",
                start + len,
                tx.shape()
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&tx.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Row lookup: `table[v, d]`, ids -> `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = tt.dims2()?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(invalid(format!("gather id {id} >= table rows {v}")));
            }
            data.extend_from_slice(tt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        self.push("gather", out, op, &[table])
    }

    /// Forward value `quantized`, backward identity into `x`.
    pub fn straight_through(&mut self, x: Var, quantized: Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != quantized.shape() {
            return Err(shape_err("straight_through", tx, &quantized));
        }
        let out = Tensor::new(tx.shape().to_vec(), quantized.into_data())?;
        self.push("straight_through", out, Op::StraightThrough(x), &[x])
    }

    /// Reverse sweep from a single-element `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let n = node.value.numel();
            let acc = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; n]);
            if let Some(Some(g)) = grads.get(i) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut send = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                send(*a, g.iter().zip(tb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(ta).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(x, b) => {
                let n = self.value(*b).numel();
                let mut gb = vec![0.0; n];
                g.iter().enumerate().for_each(|(k, v)| gb[k % n] += v);
                send(*x, g.to_vec());
                send(*b, gb);
            }
            Op::MulRow(x, s) => {
                let (tx, ts) = (self.value(*x).data(), self.value(*s).data());
                let n = ts.len();
                let mut gs = vec![0.0; n];
                let mut gx = vec![0.0; g.len()];
                for (k, gv) in g.iter().enumerate() {
                    gs[k % n] += gv * tx[k];
                    gx[k] = gv * ts[k % n];
                }
                send(*x, gx);
                send(*s, gs);
            }
            Op::AddCol(x, b) => {
                let c = self.value(*b).numel();
                let t = g.len() / c;
                let gb = (0..c).map(|ch| g[ch * t..(ch + 1) * t].iter().sum()).collect();
                send(*x, g.to_vec());
                send(*b, gb);
            }
            Op::MulCol(x, s) => {
                let (tx, ts) = (self.value(*x).data(), self.value(*s).data());
                let c = ts.len();
                let t = g.len() / c;
                let gs = (0..c)
                    .map(|ch| (ch * t..(ch + 1) * t).map(|k| g[k] * tx[k]).sum())
                    .collect();
                let gx = g.iter().enumerate().map(|(k, gv)| gv * ts[k / t]).collect();
                send(*x, gx);
                send(*s, gs);
            }
            Op::Scale(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2().expect("matmul lhs");
                let n = tb.shape()[1];
                if self.nodes[a.0].requires_grad {
                    send(*a, mm_bt(g, tb.data(), m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, mm_at(ta.data(), g, m, k, n));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = out.dims2().expect("transpose");
                let gt = Tensor::new(vec![r, c], g.to_vec()).expect("grad").transpose2();
                send(*x, gt.expect("transpose grad").into_data());
            }
            Op::Conv1d { x, w, stride, k } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (cin, t) = tx.dims2().expect("conv input");
                let cout = tw.shape()[0];
                let tout = out.shape()[1];
                if self.nodes[w.0].requires_grad {
                    let cols = im2col(tx.data(), cin, t, *k, *stride, tout);
                    send(*w, mm_bt(g, &cols, cout, tout, cin * k));
                }
                if self.nodes[x.0].requires_grad {
                    let dcols = mm_at(tw.data(), g, cout, cin * k, tout);
                    let mut gx = vec![0.0; cin * t];
                    for c in 0..cin {
                        for kk in 0..*k {
                            let row = &dcols[(c * k + kk) * tout..(c * k + kk + 1) * tout];
                            for (to, v) in row.iter().enumerate() {
                                gx[c * t + to * stride + kk] += v;
                            }
                        }
                    }
                    send(*x, gx);
                }
            }
            Op::PadReplicate { x, left, right } => {
                let (c, t) = self.value(*x).dims2().expect("pad input");
                let tn = t + left + right;
                let mut gx = vec![0.0; c * t];
                for ch in 0..c {
                    for j in 0..tn {
                        gx[ch * t + j.saturating_sub(*left).min(t - 1)] += g[ch * tn + j];
                    }
                }
                send(*x, gx);
            }
            Op::Upsample { x, factor } => {
                let (c, t) = self.value(*x).dims2().expect("upsample input");
                let mut gx = vec![0.0; c * t];
                for (k, v) in g.iter().enumerate() {
                    let ch = k / (t * factor);
                    let j = (k % (t * factor)) / factor;
                    gx[ch * t + j] += v;
                }
                send(*x, gx);
            }
            Op::MeanPool { x, factor } => {
                let (c, t) = self.value(*x).dims2().expect("pool input");
                let tn = t / factor;
                let gx = (0..c * t)
                    .map(|k| g[(k / t) * tn + (k % t) / factor] / *factor as f64)
                    .collect();
                send(*x, gx);
            }
            Op::Relu(x) => {
                let tx = self.value(*x).data();
                send(*x, g.iter().zip(tx).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Gelu(x) => {
                let tx = self.value(*x).data();
                send(*x, g.iter().zip(tx).map(|(g, v)| g * gelu_grad(*v)).collect());
            }
            Op::LayerNorm { x, inv_std } => {
                let n = last_dim(out);
                let y = out.data();
                let mut gx = vec![0.0; g.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let gs = &g[r * n..(r + 1) * n];
                    let ys = &y[r * n..(r + 1) * n];
                    let mg = gs.iter().sum::<f64>() / n as f64;
                    let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx[r * n + j] = is * (gs[j] - mg - ys[j] * mgy);
                    }
                }
                send(*x, gx);
            }
            Op::Softmax(x) | Op::CausalSoftmax(x) => {
                let n = last_dim(out);
                let y = out.data();
                let mut gx = vec![0.0; g.len()];
                for r in 0..g.len() / n {
                    let gs = &g[r * n..(r + 1) * n];
                    let ys = &y[r * n..(r + 1) * n];
                    let dot: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[r * n + j] = ys[j] * (gs[j] - dot);
                    }
                }
                send(*x, gx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len().max(1);
                let v = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * v + t] -= scale;
                }
                send(*logits, gl);
            }
            Op::L1(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let s = g[0] / ta.len().max(1) as f64;
                let d: Vec<f64> = ta
                    .iter()
                    .zip(tb)
                    .map(|(x, y)| {
                        let diff = x - y;
                        if diff > 0.0 {
                            s
                        } else if diff < 0.0 {
                            -s
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*b, d.iter().map(|v| -v).collect());
                send(*a, d);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let s = 2.0 * g[0] / ta.len().max(1) as f64;
                let d: Vec<f64> = ta.iter().zip(tb).map(|(x, y)| s * (x - y)).collect();
                send(*b, d.iter().map(|v| -v).collect());
                send(*a, d);
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![g[0] / n.max(1) as f64; n]);
            }
            Op::Concat { parts, axis } => match axis {
                0 => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).numel();
                        send(*p, g[off..off + n].to_vec());
                        off += n;
                    }
                }
                _ => {
                    let (r, total) = out.dims2().expect("concat out");
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).shape()[1];
                        let mut gp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            gp.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        send(*p, gp);
                        off += w;
                    }
                }
            },
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let inner: usize = tx.shape()[1..].iter().product();
                let mut gx = vec![0.0; tx.numel()];
                gx[start * inner..start * inner + g.len()].copy_from_slice(g);
                send(*x, gx);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2().expect("slice input");
                let len = out.shape()[1];
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                send(*x, gx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Gather { table, ids } => {
                let tt = self.value(*table);
                let d = tt.shape()[1];
                let mut gt = vec![0.0; tt.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g[r * d + j];
                    }
                }
                send(*table, gt);
            }
            Op::StraightThrough(x) => send(*x, g.to_vec()),
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shape() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![3, 4]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 4]);
    }

    #[test]
    fn matmul_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 4]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 4]"), "{msg}");
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn layernorm_of_constant_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 8], 3.5));
        let y = g.layernorm(x, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let c = g.constant(Tensor::from_vec(vec![5.0, 6.0]));
        let loss = g.sum(c).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![3.0]));
        let y = g.scale(x, 2.0).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
        g.zero_grads();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1000.0, 1001.0, 999.0]));
        let y = g.softmax(x).unwrap();
        let s: f64 = g.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn causal_softmax_masks_future_exactly() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[0.1, 0.2, 9.0, 0.3, 0.4, 0.5]));
        let y = g.causal_softmax(x).unwrap();
        assert_eq!(g.value(y).data()[2], 0.0);
        let row1: f64 = g.value(y).data()[3..].iter().sum();
        assert!((row1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv_output_length() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 10]));
        let w = g.constant(Tensor::zeros(vec![3, 2, 3]));
        let y = g.conv1d(x, w, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 4]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![f64::MAX, 1.0]));
        let err = g.scale(x, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
