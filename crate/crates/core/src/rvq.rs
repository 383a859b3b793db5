//! Residual vector quantization with EMA codebooks.
//!
//! Entry 0 of every codebook is pinned to the zero vector. Because the zero
//! entry is always a candidate, greedy residual quantization can never make
//! the residual longer, so per-layer residual norms are non-increasing for
//! every input.

use crate::error::{invalid, Result};
use crate::numerics::{Graph, SplitMix64, Tensor, Var};

pub const DEFAULT_DEPTH: usize = 8;
pub const DEFAULT_CODEBOOK_SIZE: usize = 64;
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_COMMITMENT_WEIGHT: f64 = 0.25;
/// Consecutive unused EMA updates after which an entry is re-seeded.
pub const DEAD_CODE_PATIENCE: u32 = 2;
const EMA_EPS: f64 = 1e-5;

/// One token per RVQ layer for a single frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeFrame {
    pub codes: Vec<usize>,
}

impl CodeFrame {
    pub fn new(codes: Vec<usize>) -> Self {
        Self { codes }
    }

    pub fn zeros(depth: usize) -> Self {
        Self {
            codes: vec![0; depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.codes.len()
    }
}

/// Output of [`RvqStack::quantize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub frame: CodeFrame,
    /// Sum of the chosen entries.
    pub vector: Vec<f64>,
    /// Norm of the residual left after each layer.
    pub residual_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f64>,
    ema_counts: Vec<f64>,
    ema_sums: Vec<f64>,
    unused: Vec<u32>,
}

impl Codebook {
    /// Random `N(0, std^2)` entries with entry 0 pinned to zero.
    pub fn random(size: usize, dim: usize, std: f64, rng: &mut SplitMix64) -> Self {
        let mut vectors = rng.normal_vec(size * dim, std);
        vectors[..dim].iter_mut().for_each(|v| *v = 0.0);
        Self::from_vectors(size, dim, vectors).expect("sizes agree")
    }

    pub fn from_vectors(size: usize, dim: usize, mut vectors: Vec<f64>) -> Result<Self> {
        if size == 0 || dim == 0 || vectors.len() != size * dim {
            return Err(invalid(format!(
                "codebook {size}x{dim} given {} values",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(invalid("codebook contains non-finite values"));
        }
        vectors[..dim].iter_mut().for_each(|v| *v = 0.0);
        Ok(Self {
            size,
            dim,
            ema_counts: vec![1.0; size],
            ema_sums: vectors.clone(),
            vectors,
            unused: vec![0; size],
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    /// Nearest entry by Euclidean distance, lowest index on ties, with the
    /// squared distance.
    pub fn nearest(&self, r: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.size {
            let d: f64 = self
                .entry(k)
                .iter()
                .zip(r)
                .map(|(c, x)| (x - c) * (x - c))
                .sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}

/// Ordered stack of codebooks sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqStack {
    layers: Vec<Codebook>,
    pub commitment_weight: f64,
}

impl RvqStack {
    pub fn new(layers: Vec<Codebook>, commitment_weight: f64) -> Result<Self> {
        let first = layers.first().ok_or_else(|| invalid("RVQ stack needs at least one layer"))?;
        if layers.iter().any(|l| l.dim != first.dim) {
            return Err(invalid("all RVQ layers must share one dimension"));
        }
        Ok(Self {
            layers,
            commitment_weight,
        })
    }

    pub fn random(depth: usize, size: usize, dim: usize, std: f64, rng: &mut SplitMix64) -> Self {
        let layers = (0..depth).map(|_| Codebook::random(size, dim, std, rng)).collect();
        Self::new(layers, DEFAULT_COMMITMENT_WEIGHT).expect("uniform dims")
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim
    }

    pub fn codebook_size(&self) -> usize {
        self.layers[0].size
    }

    pub fn layers(&self) -> &[Codebook] {
        &self.layers
    }

    pub fn quantize(&self, x: &[f64]) -> Result<Quantized> {
        self.quantize_prefix(x, self.depth())
    }

    /// Greedy quantization through the first `depth` layers only.
    pub fn quantize_prefix(&self, x: &[f64], depth: usize) -> Result<Quantized> {
        if x.len() != self.dim() {
            return Err(invalid(format!(
                "quantize: vector has dimension {}, stack expects {}",
                x.len(),
                self.dim()
            )));
        }
        let depth = depth.min(self.depth());
        let mut residual = x.to_vec();
        let mut vector = vec![0.0; x.len()];
        let mut codes = Vec::with_capacity(depth);
        let mut norms = Vec::with_capacity(depth);
        for layer in &self.layers[..depth] {
            let (k, d2) = layer.nearest(&residual);
            let e = layer.entry(k);
            for ((r, v), c) in residual.iter_mut().zip(vector.iter_mut()).zip(e) {
                *r -= c;
                *v += c;
            }
            codes.push(k);
            norms.push(d2.sqrt());
        }
        Ok(Quantized {
            frame: CodeFrame { codes },
            vector,
            residual_norms: norms,
        })
    }

    /// Sum of the referenced entries. Frames shorter than the stack use only
    /// the leading layers.
    pub fn dequantize(&self, cf: &CodeFrame) -> Result<Vec<f64>> {
        if cf.depth() > self.depth() {
            return Err(invalid(format!(
                "code frame has {} codes, stack depth is {}",
                cf.depth(),
                self.depth()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        for (i, (&k, layer)) in cf.codes.iter().zip(&self.layers).enumerate() {
            if k >= layer.size {
                return Err(invalid(format!(
                    "code {k} at layer {i} out of range for codebook size {}",
                    layer.size
                )));
            }
            out.iter_mut().zip(layer.entry(k)).for_each(|(o, c)| *o += c);
        }
        Ok(out)
    }

    /// Quantizes every column of `x[dim, n]`.
    pub fn quantize_columns(&self, x: &Tensor) -> Result<(Vec<CodeFrame>, Tensor)> {
        let (d, n) = x.dims2()?;
        if d != self.dim() {
            return Err(invalid(format!(
                "quantize: features have {d} channels, stack expects {}",
                self.dim()
            )));
        }
        let mut frames = Vec::with_capacity(n);
        let mut q = vec![0.0; d * n];
        let mut col = vec![0.0; d];
        for t in 0..n {
            for (c, v) in col.iter_mut().enumerate() {
                *v = x.data()[c * n + t];
            }
            let qz = self.quantize(&col)?;
            for c in 0..d {
                q[c * n + t] = qz.vector[c];
            }
            frames.push(qz.frame);
        }
        Ok((frames, Tensor::new(vec![d, n], q)?))
    }

    /// `[dim, n]` tensor of dequantized frames.
    pub fn dequantize_columns(&self, frames: &[CodeFrame]) -> Result<Tensor> {
        let (d, n) = (self.dim(), frames.len());
        let mut q = vec![0.0; d * n];
        for (t, f) in frames.iter().enumerate() {
            for (c, v) in self.dequantize(f)?.into_iter().enumerate() {
                q[c * n + t] = v;
            }
        }
        Tensor::new(vec![d, n], q)
    }

    /// Straight-through quantization of `x[dim, n]` on the graph: the forward
    /// value is the dequantized code, the backward pass is the identity.
    pub fn straight_through(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<CodeFrame>)> {
        let (frames, q) = self.quantize_columns(g.value(x))?;
        let y = g.straight_through(x, q)?;
        Ok((y, frames))
    }

    /// `commitment_weight * mean((x - stopgrad(q))^2)`.
    pub fn commitment_loss(&self, g: &mut Graph, x: Var, quantized: Var) -> Result<Var> {
        let q = g.detach(quantized);
        let l = g.mse_loss(x, q)?;
        g.scale(l, self.commitment_weight)
    }

    /// EMA codebook update from a batch of input vectors.
    ///
    /// Per layer, residuals are assigned greedily; each assigned entry other
    /// than the pinned zero gets `counts = decay * counts + (1 - decay) * n`
    /// and `sums = decay * sums + (1 - decay) * Σ residuals`, then becomes
    /// `sums / max(counts, eps)`. Entries unused for [`DEAD_CODE_PATIENCE`]
    /// consecutive updates are re-seeded from a random residual of the batch.
    pub fn ema_update(&mut self, batch: &[Vec<f64>], decay: f64, rng: &mut SplitMix64) -> Result<()> {
        if batch.is_empty() {
            return Err(invalid("ema_update: empty batch"));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(invalid(format!("ema_update: decay {decay} outside (0, 1)")));
        }
        let dim = self.dim();
        if let Some(v) = batch.iter().find(|v| v.len() != dim) {
            return Err(invalid(format!(
                "ema_update: vector of dimension {}, stack expects {dim}",
                v.len()
            )));
        }
        let mut residuals: Vec<Vec<f64>> = batch.to_vec();
        for layer in &mut self.layers {
            let mut counts = vec![0usize; layer.size];
            let mut sums = vec![0.0; layer.size * dim];
            let assigned: Vec<usize> = residuals.iter().map(|r| layer.nearest(r).0).collect();
            for (r, &k) in residuals.iter_mut().zip(&assigned) {
                counts[k] += 1;
                for (j, v) in r.iter_mut().enumerate() {
                    sums[k * dim + j] += *v;
                    *v -= layer.vectors[k * dim + j];
                }
            }
            // `residuals` now hold what the next layer sees; reseeding draws
            // from the residuals this layer was fitted to.
            for k in 1..layer.size {
                layer.ema_counts[k] = decay * layer.ema_counts[k] + (1.0 - decay) * counts[k] as f64;
                let denom = layer.ema_counts[k].max(EMA_EPS);
                for j in 0..dim {
                    let s = &mut layer.ema_sums[k * dim + j];
                    *s = decay * *s + (1.0 - decay) * sums[k * dim + j];
                    layer.vectors[k * dim + j] = *s / denom;
                }
                if counts[k] == 0 {
                    layer.unused[k] += 1;
                } else {
                    layer.unused[k] = 0;
                }
            }
            for k in 1..layer.size {
                if layer.unused[k] >= DEAD_CODE_PATIENCE {
                    let pick = rng.below(residuals.len());
                    let src = &residuals[pick];
                    let fitted: Vec<f64> = src
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v + layer.vectors[assigned[pick] * dim + j])
                        .collect();
                    layer.vectors[k * dim..(k + 1) * dim].copy_from_slice(&fitted);
                    layer.ema_sums[k * dim..(k + 1) * dim].copy_from_slice(&fitted);
                    layer.ema_counts[k] = 1.0;
                    layer.unused[k] = 0;
                }
            }
        }
        Ok(())
    }

    /// Checkpoint entries `rvq.layer{i}.{vectors,ema_counts,ema_sums}`.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let shape = vec![l.size, l.dim];
            out.push((
                format!("rvq.layer{i}.vectors"),
                Tensor::new(shape.clone(), l.vectors.clone()).expect("shape"),
            ));
            out.push((
                format!("rvq.layer{i}.ema_counts"),
                Tensor::from_vec(l.ema_counts.clone()),
            ));
            out.push((
                format!("rvq.layer{i}.ema_sums"),
                Tensor::new(shape, l.ema_sums.clone()).expect("shape"),
            ));
        }
        out
    }

    /// Restores codebooks from checkpoint entries (depth inferred).
    pub fn from_entries(entries: &[(String, Tensor)], commitment_weight: f64) -> Result<Self> {
        let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let mut layers = Vec::new();
        while let Some(v) = find(&format!("rvq.layer{}.vectors", layers.len())) {
            let i = layers.len();
            let (k, d) = v.dims2()?;
            let mut cb = Codebook::from_vectors(k, d, v.data().to_vec())?;
            if let (Some(c), Some(s)) = (
                find(&format!("rvq.layer{i}.ema_counts")),
                find(&format!("rvq.layer{i}.ema_sums")),
            ) {
                if c.numel() != k || s.numel() != k * d {
                    return Err(invalid(format!("rvq.layer{i}: EMA buffers have wrong size")));
                }
                cb.ema_counts = c.data().to_vec();
                cb.ema_sums = s.data().to_vec();
            }
            layers.push(cb);
        }
        if layers.is_empty() {
            return Err(crate::Error::Checkpoint("no rvq.layer0.vectors entry".into()));
        }
        Self::new(layers, commitment_weight)
    }
}

/// Per-layer code usage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerUsage {
    pub entropy: f64,
    pub perplexity: f64,
}

/// Entropy (nats) and perplexity of the empirical code distribution of each
/// layer over `recent`.
pub fn usage_stats(stack: &RvqStack, recent: &[CodeFrame]) -> Result<Vec<LayerUsage>> {
    if recent.is_empty() {
        return Err(invalid("usage_stats needs a nonempty code history"));
    }
    let n = recent.len() as f64;
    (0..stack.depth())
        .map(|layer| {
            let mut counts = vec![0usize; stack.layers[layer].size];
            for f in recent {
                let k = *f
                    .codes
                    .get(layer)
                    .ok_or_else(|| invalid("code frame shorter than the stack"))?;
                *counts
                    .get_mut(k)
                    .ok_or_else(|| invalid(format!("code {k} out of range")))? += 1;
            }
            let entropy: f64 = counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.ln()
                })
                .sum();
            Ok(LayerUsage {
                entropy,
                perplexity: entropy.exp(),
            })
        })
        .collect()
}
