//! Central finite-difference oracle for gradient tests.
//!
//! The oracle only ever evaluates forward values; it shares no code with the
//! reverse sweep it is used to check.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    /// Largest per-element relative error, see [`check_gradients`].
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` with respect to every input
/// against central differences of step `h`.
///
/// Per element the error is `|a - n| / max(|a|, |n|, 1e-3 * max|n|)`: plain
/// relative error, with the denominator floored relative to the gradient's
/// overall scale so entries that are structurally near zero do not divide by
/// rounding noise.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| g.grad(*v).map(|s| s.to_vec()).unwrap_or_default())
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            col.push((plus - minus) / (2.0 * h));
        }
        numeric.push(col);
    }

    let scale = numeric
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut report = GradReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    for (a, n) in analytic.iter().zip(&numeric) {
        for (x, y) in a.iter().zip(n) {
            let abs = (x - y).abs();
            let rel = abs / x.abs().max(y.abs()).max(floor);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
