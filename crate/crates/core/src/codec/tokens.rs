//! Binary token files.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "OMNITOK1"
//! 8       4           u32 depth (codes per frame)
//! 12      4           u32 frame count N
//! 16      2*depth*N   u16 codes, frame-major (frame 0 layer 0, frame 0 layer 1, ...)
//! ```
//! All integers little-endian. Frames are at 12.5 per second.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rvq::CodeFrame;

use super::AudioTokenSeq;

pub const TOKEN_MAGIC: &[u8; 8] = b"OMNITOK1";

pub fn encode_tokens(seq: &AudioTokenSeq) -> Result<Vec<u8>> {
    let depth = seq.frames.first().map_or(0, |f| f.depth());
    let mut out = Vec::with_capacity(16 + 2 * depth * seq.frames.len());
    out.extend_from_slice(TOKEN_MAGIC);
    out.extend_from_slice(&(depth as u32).to_le_bytes());
    out.extend_from_slice(&(seq.frames.len() as u32).to_le_bytes());
    for (i, f) in seq.frames.iter().enumerate() {
        if f.depth() != depth {
            return Err(Error::TokenFile(format!(
                "frame {i} has {} codes, expected {depth}",
                f.depth()
            )));
        }
        for &c in &f.codes {
            let c = u16::try_from(c)
                .map_err(|_| Error::TokenFile(format!("code {c} in frame {i} exceeds u16")))?;
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_tokens(bytes: &[u8]) -> Result<AudioTokenSeq> {
    if bytes.len() < 16 || &bytes[..8] != TOKEN_MAGIC {
        return Err(Error::TokenFile("missing OMNITOK1 header".into()));
    }
    let depth = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let n = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let need = 16 + 2 * depth * n;
    if bytes.len() != need {
        return Err(Error::TokenFile(format!(
            "{depth} x {n} codes need {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let codes: Vec<usize> = bytes[16..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect();
    let frames = if depth == 0 {
        vec![CodeFrame::new(Vec::new()); n]
    } else {
        codes.chunks(depth).map(|c| CodeFrame::new(c.to_vec())).collect()
    };
    Ok(AudioTokenSeq::from_frames(frames))
}

pub fn write_tokens(path: impl AsRef<Path>, seq: &AudioTokenSeq) -> Result<()> {
    std::fs::write(path, encode_tokens(seq)?)?;
    Ok(())
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<AudioTokenSeq> {
    parse_tokens(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let seq = AudioTokenSeq::from_frames(vec![
            CodeFrame::new(vec![1, 2, 3]),
            CodeFrame::new(vec![4, 5, 63]),
        ]);
        let b = encode_tokens(&seq).unwrap();
        assert_eq!(&b[..8], b"OMNITOK1");
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..18], &1u16.to_le_bytes());
        assert_eq!(b.len(), 16 + 12);
        assert_eq!(parse_tokens(&b).unwrap().frames, seq.frames);
    }

    #[test]
    fn truncated_file_rejected() {
        let seq = AudioTokenSeq::from_frames(vec![CodeFrame::new(vec![1, 2])]);
        let b = encode_tokens(&seq).unwrap();
        assert!(parse_tokens(&b[..b.len() - 1]).is_err());
        assert!(parse_tokens(b"OMNITOK0\0\0\0\0\0\0\0\0").is_err());
    }
}
