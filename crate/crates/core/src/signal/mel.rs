use crate::error::{invalid, Result};
use crate::numerics::Tensor;
use crate::signal::stft::StftPlan;
use crate::signal::Waveform;

/// Power floor applied before the log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mel front-end geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl MelConfig {
    /// 16 kHz, 25 ms window, 10 ms hop, 80 bands: 100 frames per second.
    pub const DEFAULT_16K: MelConfig = MelConfig {
        sample_rate: 16_000,
        n_fft: 400,
        hop: 160,
        n_mels: 80,
    };

    /// 24 kHz geometry with the same 100 Hz frame rate.
    pub const PRESET_24K: MelConfig = MelConfig {
        sample_rate: 24_000,
        n_fft: 600,
        hop: 240,
        n_mels: 80,
    };

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

impl Default for MelConfig {
    fn default() -> Self {
        Self::DEFAULT_16K
    }
}

/// Natural-log Mel power spectrogram, `frames` is `[n_mels, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_fft: usize,
    pub hop_length: usize,
    pub sample_rate: u32,
    pub frames: Tensor,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn config(&self) -> MelConfig {
        MelConfig {
            sample_rate: self.sample_rate,
            n_fft: self.n_fft,
            hop: self.hop_length,
            n_mels: self.n_mels,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        (self.n_frames() * self.hop_length) as f64 / self.sample_rate as f64
    }

    /// Band index with the largest mean energy.
    pub fn dominant_band(&self) -> usize {
        let t = self.n_frames().max(1);
        (0..self.n_mels)
            .map(|m| {
                let row = &self.frames.data()[m * t..(m + 1) * t];
                (m, row.iter().sum::<f64>() / t as f64)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney scale: linear below 1 kHz, logarithmic above.
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        MIN_LOG_HZ * (logstep * (m - min_log_mel)).exp()
    } else {
        F_SP * m
    }
}

/// Triangular Slaney-scale filters with area normalization, spanning
/// 0 Hz to Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_fft: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    /// Row-major `[n_mels, n_fft / 2 + 1]`.
    pub weights: Vec<f64>,
    /// Centre frequency of each band in Hz.
    pub centers_hz: Vec<f64>,
    /// `n_mels + 2` band edges in Hz.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize) -> Result<Self> {
        if n_mels == 0 || n_fft < 2 {
            return Err(invalid(format!("bad filterbank n_fft={n_fft} n_mels={n_mels}")));
        }
        let n_bins = n_fft / 2 + 1;
        let fmax = sample_rate as f64 / 2.0;
        let (mlo, mhi) = (hz_to_mel(0.0), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (hi - lo);
            for (k, f) in bin_hz.iter().enumerate() {
                let rise = (f - lo) / (c - lo);
                let fall = (hi - f) / (hi - c);
                weights[m * n_bins + k] = rise.min(fall).max(0.0) * enorm;
            }
        }
        Ok(Self {
            n_fft,
            n_mels,
            sample_rate,
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
            edges_hz: edges,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let n = self.n_bins();
        &self.weights[m * n..(m + 1) * n]
    }

    /// Band whose centre frequency is closest to `hz`.
    pub fn nearest_band(&self, hz: f64) -> usize {
        self.centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Applies the filterbank to one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }

    /// Moore-Penrose pseudo-inverse, `[n_bins, n_mels]` row-major. Used to
    /// expand Mel energies back to linear-frequency bins.
    pub fn pseudo_inverse(&self) -> Result<Vec<f64>> {
        let m = nalgebra::DMatrix::from_row_slice(self.n_mels, self.n_bins(), &self.weights);
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| invalid(format!("filterbank pseudo-inverse: {e}")))?;
        let (r, c) = pinv.shape();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = pinv[(i, j)];
            }
        }
        Ok(out)
    }
}

/// Log-Mel spectrogram `log(max(filterbank @ |STFT|^2, 1e-10))`.
pub fn mel_spectrogram(w: &Waveform, n_fft: usize, hop: usize, n_mels: usize) -> Result<MelSpectrogram> {
    if w.samples().len() < n_fft {
        return Err(invalid(format!(
            "waveform has {} samples, mel_spectrogram needs at least n_fft = {n_fft}",
            w.samples().len()
        )));
    }
    let plan = StftPlan::new(n_fft, hop)?;
    let fb = MelFilterbank::new(w.sample_rate(), n_fft, n_mels)?;
    mel_with(&plan, &fb, w)
}

pub fn mel_spectrogram_with(w: &Waveform, cfg: MelConfig) -> Result<MelSpectrogram> {
    if w.sample_rate() != cfg.sample_rate {
        return Err(invalid(format!(
            "waveform at {} Hz, mel config expects {} Hz",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    mel_spectrogram(w, cfg.n_fft, cfg.hop, cfg.n_mels)
}

pub(crate) fn mel_with(plan: &StftPlan, fb: &MelFilterbank, w: &Waveform) -> Result<MelSpectrogram> {
    let power = plan.power(w.samples())?;
    let t = power.len();
    let mut data = vec![0.0; fb.n_mels * t];
    for (ti, spec) in power.iter().enumerate() {
        for (m, e) in fb.apply(spec).into_iter().enumerate() {
            data[m * t + ti] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        n_mels: fb.n_mels,
        n_fft: plan.n_fft,
        hop_length: plan.hop,
        sample_rate: w.sample_rate(),
        frames: Tensor::new(vec![fb.n_mels, t], data)?,
    })
}
