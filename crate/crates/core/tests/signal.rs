use omni_core::signal::{
    griffin_lim, mel_spectrogram, MelConfig, MelFilterbank, MelSpectrogram, Waveform, LOG_FLOOR,
};

fn mel_l1(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
    a.frames.mean_abs_diff(&b.frames)
}

#[test]
fn tone_peaks_in_nearest_band() {
    let fb = MelFilterbank::new(16000, 400, 80).unwrap();
    for freq in [220.0, 440.0, 1000.0, 2500.0] {
        let w = Waveform::sine(16000, freq, 1.0, 0.5).unwrap();
        let m = mel_spectrogram(&w, 400, 160, 80).unwrap();
        assert_eq!(m.dominant_band(), fb.nearest_band(freq), "{freq} Hz");
    }
}

#[test]
fn frame_rate_identity() {
    for (cfg, secs) in [(MelConfig::DEFAULT_16K, 1.5), (MelConfig::PRESET_24K, 2.0)] {
        let n = (secs * cfg.sample_rate as f64) as usize;
        let w = Waveform::new(cfg.sample_rate, vec![0.0; n]).unwrap();
        let m = mel_spectrogram(&w, cfg.n_fft, cfg.hop, cfg.n_mels).unwrap();
        assert_eq!(cfg.frame_rate(), 100.0);
        assert_eq!(m.n_frames() as f64, secs * cfg.frame_rate());
    }
}

#[test]
fn griffin_lim_recovers_tone_peak() {
    let w = Waveform::sine(16000, 440.0, 1.0, 0.5).unwrap();
    let m = mel_spectrogram(&w, 400, 160, 80).unwrap();
    let y = griffin_lim(&m, 32).unwrap();
    assert_eq!(y.samples().len(), 16000);
    let (peak, spacing) = y.dominant_frequency(400).unwrap();
    assert!((peak - 440.0).abs() <= spacing, "peak {peak} Hz (bin {spacing} Hz)");
}

#[test]
fn griffin_lim_of_floor_is_silent() {
    let m = MelSpectrogram {
        n_mels: 80,
        n_fft: 400,
        hop_length: 160,
        sample_rate: 16000,
        frames: omni_core::numerics::Tensor::full(vec![80, 50], LOG_FLOOR.ln()),
    };
    let y = griffin_lim(&m, 8).unwrap();
    assert!(y.rms() < 1e-3, "{}", y.rms());
}

#[test]
fn more_iterations_do_not_hurt() {
    let a = Waveform::sine(16000, 440.0, 0.5, 0.4).unwrap();
    let b = Waveform::sine(16000, 1200.0, 0.5, 0.2).unwrap();
    let mix: Vec<f64> = a.samples().iter().zip(b.samples()).map(|(x, y)| x + y).collect();
    let w = Waveform::new(16000, mix).unwrap();
    let m = mel_spectrogram(&w, 400, 160, 80).unwrap();
    let e1 = mel_l1(&m, &mel_spectrogram(&griffin_lim(&m, 1).unwrap(), 400, 160, 80).unwrap());
    let e32 = mel_l1(&m, &mel_spectrogram(&griffin_lim(&m, 32).unwrap(), 400, 160, 80).unwrap());
    assert!(e32 <= e1, "iters=32 {e32} > iters=1 {e1}");
}
