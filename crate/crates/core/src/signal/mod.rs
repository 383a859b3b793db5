//! Audio substrate: WAV I/O, STFT and log-Mel front end, multi-scale Mel
//! loss and Griffin-Lim inversion.

mod griffin_lim;
mod loss;
mod mel;
pub mod stft;
mod wav;

pub use griffin_lim::{griffin_lim, mel_to_magnitude};
pub use loss::{
    multi_scale_mel_loss, multi_scale_mel_loss_graph, DEFAULT_POOL_FACTORS, DEFAULT_SCALES,
};
pub use mel::{
    mel_spectrogram, mel_spectrogram_with, MelConfig, MelFilterbank, MelSpectrogram, LOG_FLOOR,
};
pub use wav::{encode_wav, parse_wav, wav_read, wav_write};

use crate::error::{invalid, Result};

/// Sample rates a [`Waveform`] may carry.
pub const SUPPORTED_RATES: [u32; 2] = [16_000, 24_000];

/// Mono audio with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    sample_rate: u32,
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(invalid(format!(
                "unsupported sample rate {sample_rate} Hz (expected 16000 or 24000)"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    /// `amplitude * sin(2π f t)` for `seconds`.
    pub fn sine(sample_rate: u32, freq: f64, seconds: f64, amplitude: f64) -> Result<Self> {
        let n = (seconds * sample_rate as f64).round() as usize;
        let samples = (0..n)
            .map(|i| {
                amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin()
            })
            .collect();
        Self::new(sample_rate, samples)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Centre frequency of the strongest bin of the frame-averaged power
    /// spectrum at STFT size `n_fft`, together with the bin spacing in Hz.
    pub fn dominant_frequency(&self, n_fft: usize) -> Result<(f64, f64)> {
        let plan = stft::StftPlan::new(n_fft, n_fft / 4)?;
        let power = plan.power(&self.samples)?;
        let mut mean = vec![0.0; plan.n_bins()];
        for row in &power {
            mean.iter_mut().zip(row).for_each(|(m, p)| *m += p);
        }
        let best = (1..mean.len())
            .max_by(|a, b| mean[*a].total_cmp(&mean[*b]))
            .unwrap_or(0);
        let spacing = self.sample_rate as f64 / n_fft as f64;
        Ok((best as f64 * spacing, spacing))
    }
}
