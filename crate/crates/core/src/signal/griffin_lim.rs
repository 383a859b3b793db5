//! Griffin-Lim phase reconstruction from a log-Mel spectrogram.
//!
//! Mel energies are expanded to linear-frequency power with the filterbank's
//! Moore-Penrose pseudo-inverse (negative values clipped to zero), the
//! magnitude is its square root, and phase is recovered by alternating
//! projections between the consistent-STFT set and the target magnitude.

use rustfft::num_complex::Complex64;

use super::mel::MelFilterbank;
use super::stft::StftPlan;
use super::{MelSpectrogram, Waveform};
use crate::error::{invalid, Result};
use crate::numerics::SplitMix64;

/// Fixed seed for the initial random phase.
const PHASE_SEED: u64 = 0x6772_6966_6669_6e6c;

/// Linear magnitude `[frames][bins]` implied by a log-Mel spectrogram.
pub fn mel_to_magnitude(m: &MelSpectrogram) -> Result<Vec<Vec<f64>>> {
    let fb = MelFilterbank::new(m.sample_rate, m.n_fft, m.n_mels)?;
    let pinv = fb.pseudo_inverse()?;
    let bins = fb.n_bins();
    let t = m.n_frames();
    let mut out = vec![vec![0.0; bins]; t];
    for (ti, row) in out.iter_mut().enumerate() {
        let mel_power: Vec<f64> = (0..m.n_mels)
            .map(|b| m.frames.data()[b * t + ti].exp())
            .collect();
        for (k, o) in row.iter_mut().enumerate() {
            let p: f64 = pinv[k * m.n_mels..(k + 1) * m.n_mels]
                .iter()
                .zip(&mel_power)
                .map(|(a, b)| a * b)
                .sum();
            *o = p.max(0.0).sqrt();
        }
    }
    Ok(out)
}

pub fn griffin_lim(m: &MelSpectrogram, iters: usize) -> Result<Waveform> {
    if iters == 0 {
        return Err(invalid("griffin_lim needs at least one iteration"));
    }
    let plan = StftPlan::new(m.n_fft, m.hop_length)?;
    let mag = mel_to_magnitude(m)?;
    let mut rng = SplitMix64::new(PHASE_SEED);
    let mut spec: Vec<Vec<Complex64>> = mag
        .iter()
        .map(|row| {
            row.iter()
                .map(|a| Complex64::from_polar(*a, rng.uniform(-std::f64::consts::PI, std::f64::consts::PI)))
                .collect()
        })
        .collect();
    let mut x = plan.istft(&spec);
    for _ in 0..iters {
        let rebuilt = plan.stft(&x)?;
        for (row, (target, est)) in spec.iter_mut().zip(mag.iter().zip(rebuilt)) {
            for (s, (a, e)) in row.iter_mut().zip(target.iter().zip(est)) {
                let phase = if e.norm() > 0.0 { e / e.norm() } else { Complex64::new(1.0, 0.0) };
                *s = phase * *a;
            }
        }
        x = plan.istft(&spec);
    }
    for v in x.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Waveform::new(m.sample_rate, x)
}
