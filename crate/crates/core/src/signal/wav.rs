//! RIFF/WAVE PCM-16 mono reader and writer.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Waveform;

fn wav_err(msg: impl Into<String>) -> Error {
    Error::Wav(msg.into())
}

/// Parses a PCM-16 mono RIFF/WAVE byte buffer.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        match id {
            b"fmt " => {
                if size < 16 || body_start + 16 > bytes.len() {
                    return Err(wav_err("fmt chunk truncated"));
                }
                let b = &bytes[body_start..];
                let format = u16::from_le_bytes([b[0], b[1]]);
                let channels = u16::from_le_bytes([b[2], b[3]]);
                let rate = u32::from_le_bytes([b[4], b[5], b[6], b[7]]);
                let bits = u16::from_le_bytes([b[14], b[15]]);
                if format != 1 {
                    return Err(wav_err(format!("fmt chunk: format tag {format} is not PCM")));
                }
                if channels != 1 {
                    return Err(wav_err(format!(
                        "fmt chunk: {channels} channels, only mono is supported"
                    )));
                }
                if bits != 16 {
                    return Err(wav_err(format!(
                        "fmt chunk: {bits}-bit samples, only 16-bit PCM is supported"
                    )));
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                let (_, _, rate, _) = fmt.ok_or_else(|| wav_err("data chunk before fmt chunk"))?;
                if body_start + size > bytes.len() {
                    return Err(wav_err(format!(
                        "data chunk truncated: header declares {size} bytes, {} present",
                        bytes.len() - body_start
                    )));
                }
                if !size.is_multiple_of(2) {
                    return Err(wav_err("data chunk has an odd byte count"));
                }
                let samples = bytes[body_start..body_start + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Waveform::new(rate, samples);
            }
            _ => {
                if body_start + size > bytes.len() {
                    return Err(wav_err(format!("{name:?} chunk truncated")));
                }
            }
        }
        pos = body_start + size + (size & 1);
    }
    Err(match fmt {
        None => wav_err("missing fmt chunk"),
        Some(_) => wav_err("missing data chunk"),
    })
}

/// Encodes as PCM-16 mono. Samples are clamped to `[-1, 1]`.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = w.samples().len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| wav_err(format!("cannot read {}: {e}", path.display())))?;
    parse_wav(&bytes)
}

pub fn wav_write(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    std::fs::write(path, encode_wav(w))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_round_trip() {
        let w = Waveform::new(16000, vec![0.0; 16000]).unwrap();
        let back = parse_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.samples().len(), 16000);
        assert!(back.samples().iter().all(|s| *s == 0.0));
    }

    #[test]
    fn sine_round_trip_within_quantization() {
        let w = Waveform::sine(16000, 440.0, 0.5, 0.9).unwrap();
        let back = parse_wav(&encode_wav(&w)).unwrap();
        let err = w
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1.0 / 32768.0, "{err}");
    }

    #[test]
    fn rifx_rejected() {
        let w = Waveform::new(16000, vec![0.0; 10]).unwrap();
        let mut bytes = encode_wav(&w);
        bytes[3] = b'X';
        let msg = parse_wav(&bytes).unwrap_err().to_string();
        assert!(msg.contains("not a RIFF/WAVE file"), "{msg}");
    }

    #[test]
    fn stereo_rejected_naming_fmt() {
        let w = Waveform::new(16000, vec![0.0; 10]).unwrap();
        let mut bytes = encode_wav(&w);
        bytes[22] = 2;
        let msg = parse_wav(&bytes).unwrap_err().to_string();
        assert!(msg.contains("fmt chunk") && msg.contains("mono"), "{msg}");
    }

    #[test]
    fn non_pcm_rejected() {
        let w = Waveform::new(16000, vec![0.0; 10]).unwrap();
        let mut bytes = encode_wav(&w);
        bytes[20] = 3;
        let msg = parse_wav(&bytes).unwrap_err().to_string();
        assert!(msg.contains("not PCM"), "{msg}");
    }

    #[test]
    fn truncated_data_rejected() {
        let w = Waveform::new(16000, vec![0.1; 100]).unwrap();
        let mut bytes = encode_wav(&w);
        bytes.truncate(bytes.len() - 10);
        let msg = parse_wav(&bytes).unwrap_err().to_string();
        assert!(msg.contains("data chunk truncated"), "{msg}");
    }
}
