//! Short-time Fourier transform with a periodic Hann window.
//!
//! Framing convention: the signal is reflect-padded by `n_fft / 2` on both
//! sides and frame `t` is centred on sample `t * hop`. The frame count is
//! `len / hop` (the trailing frame that would be centred past the last
//! sample is dropped), so a signal of `d` seconds at hop `sr / 100` yields
//! exactly `100 d` frames.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

pub struct StftPlan {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames for `len` samples under the crate's framing convention.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop
}

impl StftPlan {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        if n_fft < 2 || hop == 0 || !n_fft.is_multiple_of(2) {
            return Err(invalid(format!("bad STFT geometry n_fft={n_fft} hop={hop}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_fft,
            hop,
            window: hann_window(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    fn padded(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.n_fft / 2;
        if x.len() <= pad {
            return Err(invalid(format!(
                "signal of {} samples too short for reflect padding of {pad}",
                x.len()
            )));
        }
        let n = x.len();
        let mut out = Vec::with_capacity(n + 2 * pad);
        out.extend((1..=pad).rev().map(|i| x[i]));
        out.extend_from_slice(x);
        out.extend((1..=pad).map(|i| x[n - 1 - i]));
        Ok(out)
    }

    /// Complex spectra, one `n_bins` row per frame.
    pub fn stft(&self, x: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        let padded = self.padded(x)?;
        let frames = frame_count(x.len(), self.hop);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + i] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            out.push(buf[..self.n_bins()].to_vec());
        }
        Ok(out)
    }

    /// Power spectrogram `[frames][bins]`.
    pub fn power(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .stft(x)?
            .into_iter()
            .map(|row| row.iter().map(|c| c.norm_sqr()).collect())
            .collect())
    }

    /// Weighted overlap-add inverse of [`StftPlan::stft`]; returns
    /// `frames * hop` samples.
    pub fn istft(&self, spec: &[Vec<Complex64>]) -> Vec<f64> {
        let frames = spec.len();
        let pad = self.n_fft / 2;
        let total = (frames.saturating_sub(1)) * self.hop + self.n_fft;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let bins = self.n_bins();
        for (t, row) in spec.iter().enumerate() {
            buf[..bins].copy_from_slice(&row[..bins]);
            buf[0].im = 0.0;
            buf[bins - 1].im = 0.0;
            for k in bins..self.n_fft {
                buf[k] = buf[self.n_fft - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                acc[start + i] += buf[i].re / self.n_fft as f64 * w;
                norm[start + i] += w * w;
            }
        }
        (0..frames * self.hop)
            .map(|i| {
                let j = i + pad;
                if j < total && norm[j] > 1e-8 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rate_is_sr_over_hop() {
        assert_eq!(frame_count(32000, 160), 200);
        assert_eq!(frame_count(24000 * 2, 240), 200);
    }

    #[test]
    fn istft_inverts_stft_in_the_interior() {
        let x: Vec<f64> = (0..4000).map(|i| ((i as f64) * 0.05).sin() * 0.5).collect();
        let plan = StftPlan::new(400, 100).unwrap();
        let y = plan.istft(&plan.stft(&x).unwrap());
        assert_eq!(y.len(), 4000);
        let err = x[400..3600]
            .iter()
            .zip(&y[400..3600])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}
