//! 2×2 token merge followed by a two-layer MLP.

use crate::error::{invalid, Result};
use crate::numerics::nn::Linear;
use crate::numerics::{Bound, Graph, ParamStore, SplitMix64, Tensor, Var};

/// Concatenates each non-overlapping 2×2 neighbourhood of `grid[H, W, D]`
/// into one `4D` row, in order (r, c), (r, c+1), (r+1, c), (r+1, c+1).
/// Output `[(H/2)(W/2), 4D]`, row-major over the merged grid.
pub fn merge_2x2(grid: &Tensor) -> Result<Tensor> {
    let &[h, w, d] = grid.shape() else {
        return Err(invalid(format!("visual grid must be [H, W, D], got {:?}", grid.shape())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid(format!("visual grid {h}x{w} has an odd side; 2x2 merge needs even H and W")));
    }
    let x = grid.data();
    let mut out = Vec::with_capacity(h * w * d);
    for r in (0..h).step_by(2) {
        for c in (0..w).step_by(2) {
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let at = ((r + dr) * w + c + dc) * d;
                out.extend_from_slice(&x[at..at + d]);
            }
        }
    }
    Tensor::new(vec![h * w / 4, 4 * d], out)
}

#[derive(Debug, Clone)]
pub struct VisualProjector {
    mlp: Option<(Linear, Linear)>,
}

impl VisualProjector {
    pub fn init(
        store: &mut ParamStore,
        group: &str,
        feature_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        Self {
            mlp: Some((
                Linear::init(store, "projector.fc1", group, 4 * feature_dim, hidden, rng),
                Linear::init(store, "projector.fc2", group, hidden, out_dim, rng),
            )),
        }
    }

    /// Merge-only stand-in: outputs are the concatenated neighbourhoods.
    pub fn identity() -> Self {
        Self { mlp: None }
    }

    /// Projects merged rows `[n, 4D]` on the graph.
    pub fn forward_merged(&self, g: &mut Graph, p: &Bound, merged: Var) -> Result<Var> {
        match &self.mlp {
            None => Ok(merged),
            Some((a, b)) => {
                let h = a.forward(g, p, merged)?;
                let h = g.gelu(h)?;
                b.forward(g, p, h)
            }
        }
    }

    /// `[H, W, D]` features to `[(H/2)(W/2), D']` tokens.
    pub fn project(&self, store: &ParamStore, grid: &Tensor) -> Result<Tensor> {
        let merged = merge_2x2(grid)?;
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let m = g.constant(merged);
        let y = self.forward_merged(&mut g, &p, m)?;
        Ok(g.value(y).clone())
    }
}
