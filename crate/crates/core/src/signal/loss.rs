//! Multi-scale Mel reconstruction loss.
//!
//! Two entry points share one definition, the sum over scales of the mean
//! absolute log-Mel difference:
//!
//! * [`multi_scale_mel_loss`] analyses two waveforms at several
//!   `(n_fft, hop)` resolutions.
//! * [`multi_scale_mel_loss_graph`] works on predicted Mels already on the
//!   autodiff graph. A Mel cannot be re-analysed at a different STFT size, so
//!   coarser scales are formed by non-overlapping time averaging, with pool
//!   factors `1, 2, 4` mirroring the `128 : 256 : 512` hop ratios of the
//!   waveform scales.

use super::mel::mel_with;
use super::stft::StftPlan;
use super::{MelFilterbank, Waveform};
use crate::error::{invalid, Result};
use crate::numerics::{Graph, Var};

/// Default `(n_fft, hop)` analysis scales.
pub const DEFAULT_SCALES: [(usize, usize); 3] = [(512, 128), (1024, 256), (2048, 512)];

/// Default time-pooling factors for the graph variant.
pub const DEFAULT_POOL_FACTORS: [usize; 3] = [1, 2, 4];

pub const LOSS_MELS: usize = 80;

pub fn multi_scale_mel_loss(a: &Waveform, b: &Waveform, scales: &[(usize, usize)]) -> Result<f64> {
    if scales.is_empty() {
        return Err(invalid("multi_scale_mel_loss needs at least one scale"));
    }
    if a.sample_rate() != b.sample_rate() || a.samples().len() != b.samples().len() {
        return Err(invalid(format!(
            "multi_scale_mel_loss inputs differ: {} samples @ {} Hz vs {} samples @ {} Hz",
            a.samples().len(),
            a.sample_rate(),
            b.samples().len(),
            b.sample_rate()
        )));
    }
    let mut total = 0.0;
    for &(n_fft, hop) in scales {
        if a.samples().len() < n_fft {
            return Err(invalid(format!(
                "scale n_fft={n_fft} longer than the {}-sample input",
                a.samples().len()
            )));
        }
        let plan = StftPlan::new(n_fft, hop)?;
        let fb = MelFilterbank::new(a.sample_rate(), n_fft, LOSS_MELS)?;
        let ma = mel_with(&plan, &fb, a)?;
        let mb = mel_with(&plan, &fb, b)?;
        total += ma.frames.mean_abs_diff(&mb.frames);
    }
    Ok(total)
}

/// Graph variant over `[n_mels, T]` Mels; `T` must divide by every factor.
pub fn multi_scale_mel_loss_graph(
    g: &mut Graph,
    pred: Var,
    target: Var,
    pool_factors: &[usize],
) -> Result<Var> {
    if pool_factors.is_empty() {
        return Err(invalid("multi_scale_mel_loss needs at least one scale"));
    }
    let mut terms = Vec::with_capacity(pool_factors.len());
    for &f in pool_factors {
        let (p, t) = if f == 1 {
            (pred, target)
        } else {
            (g.mean_pool(pred, f)?, g.mean_pool(target, f)?)
        };
        terms.push(g.l1_loss(p, t)?);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = g.add(total, *t)?;
    }
    Ok(total)
}
