//! Synthetic stage data: seeded samples for each mixture source.

use crate::datapipe::{quarter_count, toy_corpus, video_frame_sample, MixtureSampler, MixtureSpec};
use crate::error::{invalid, Result};
use crate::interleave::{InterleavedSequence, Item, SwitchKind, TokenScheme};
use crate::numerics::{SplitMix64, Tensor};
use crate::rvq::CodeFrame;

pub const SOURCE_TEXT: &str = "text";
pub const SOURCE_IMAGE: &str = "image";
pub const SOURCE_VIDEO: &str = "video";
pub const SOURCE_AUDIO: &str = "audio";
pub const SOURCE_IMAGE_AUDIO: &str = "image-audio";
pub const SOURCE_VIDEO_AUDIO: &str = "video-audio";

pub const SOURCES: [&str; 6] = [
    SOURCE_TEXT,
    SOURCE_IMAGE,
    SOURCE_VIDEO,
    SOURCE_AUDIO,
    SOURCE_IMAGE_AUDIO,
    SOURCE_VIDEO_AUDIO,
];

/// Side of the synthetic patch grid; each frame yields `(GRID/2)^2` tokens.
pub const GRID: usize = 4;

/// One training example: visual frames (raw patches `[GRID*GRID, patch_dim]`)
/// placed before a validated token stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub source: String,
    pub frames: Vec<Tensor>,
    pub items: Vec<Item>,
}

impl TrainSample {
    pub fn visual_tokens(&self) -> usize {
        self.frames.len() * GRID * GRID / 4
    }

    /// Positions seen by the backbone.
    pub fn seq_len(&self) -> usize {
        self.visual_tokens() + self.items.len()
    }
}

pub trait DataStream {
    fn sources(&self) -> Vec<String>;
    fn next_sample(&mut self) -> Result<TrainSample>;
}

/// Seeded stream drawing sources by mixture weight.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    sampler: MixtureSampler,
    scheme: TokenScheme,
    patch_dim: usize,
    max_seq_len: usize,
    rng: SplitMix64,
}

impl SyntheticStream {
    pub fn new(
        mixture: &MixtureSpec,
        scheme: TokenScheme,
        patch_dim: usize,
        max_seq_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let names: Vec<&str> = mixture.sources().collect();
        if let Some(s) = names.iter().find(|s| !SOURCES.contains(s)) {
            return Err(invalid(format!("no synthetic generator for source {s:?}")));
        }
        Ok(Self {
            sampler: MixtureSampler::new(mixture, &names, seed)?,
            scheme,
            patch_dim,
            max_seq_len,
            rng: SplitMix64::derive(seed, 0xDA7A),
        })
    }

    fn caption(&mut self) -> Vec<String> {
        toy_corpus(1, self.rng.next_u64()).remove(0).sentences
    }

    fn frames(&mut self, source: &str) -> Vec<Tensor> {
        let n = match source {
            SOURCE_IMAGE | SOURCE_IMAGE_AUDIO => 1,
            SOURCE_VIDEO | SOURCE_VIDEO_AUDIO => {
                let dur = self.rng.uniform(1.0, 4.0);
                video_frame_sample(dur, 1.0, 32).map_or(1, |t| t.len())
            }
            _ => 0,
        };
        (0..n)
            .map(|_| {
                Tensor::new(vec![GRID * GRID, self.patch_dim], self.rng.normal_vec(GRID * GRID * self.patch_dim, 1.0))
                    .expect("shape matches")
            })
            .collect()
    }

    fn text_ids(&self, s: &str) -> Vec<u32> {
        s.bytes().map(|b| b as u32 % self.scheme.text_vocab_size).collect()
    }

    /// Stand-in tokenizer output: a deterministic function of the text so
    /// the audio head has something learnable.
    fn audio_frames(&self, s: &str) -> Vec<CodeFrame> {
        let sc = &self.scheme;
        s.as_bytes()
            .chunks(4)
            .enumerate()
            .map(|(t, chunk)| {
                let codes = (0..sc.depth)
                    .map(|l| {
                        let b = chunk[l % chunk.len()] as usize;
                        (b * (l + 1) + t) % sc.codebook_size
                    })
                    .collect();
                CodeFrame::new(codes)
            })
            .collect()
    }

    fn items(&mut self, source: &str, sentences: &[String]) -> Vec<Item> {
        let sc = self.scheme;
        let mut items = vec![Item::Text(sc.bos())];
        let with_audio = matches!(source, SOURCE_AUDIO | SOURCE_IMAGE_AUDIO | SOURCE_VIDEO_AUDIO);
        let spoken: Vec<usize> = if with_audio {
            let k = quarter_count(sentences.len()).max(1);
            self.rng.choose_distinct(sentences.len(), k)
        } else {
            Vec::new()
        };
        for (i, s) in sentences.iter().enumerate() {
            if spoken.contains(&i) {
                items.push(Item::Switch(SwitchKind::TextToAudio));
                items.extend(self.audio_frames(s).into_iter().map(Item::Audio));
                items.push(Item::Switch(SwitchKind::AudioToText));
            } else {
                items.extend(self.text_ids(s).into_iter().map(Item::Text));
            }
        }
        items.push(Item::Text(sc.eos()));
        items
    }

    pub fn sample(&mut self, source: &str) -> Result<TrainSample> {
        let frames = self.frames(source);
        let visual = frames.len() * GRID * GRID / 4;
        let mut sentences = self.caption();
        loop {
            let items = self.items(source, &sentences);
            if visual + items.len() <= self.max_seq_len {
                InterleavedSequence::new(self.scheme, items.clone())
                    .map_err(|v| invalid(format!("synthetic sample invalid: {v}")))?;
                return Ok(TrainSample {
                    source: source.to_string(),
                    frames,
                    items,
                });
            }
            if sentences.len() > 1 {
                sentences.pop();
                continue;
            }
            let s = &mut sentences[0];
            if s.len() <= 1 {
                return Err(invalid(format!(
                    "max sequence length {} too small for a {source} sample",
                    self.max_seq_len
                )));
            }
            let keep = s.len() / 2;
            s.truncate(keep);
        }
    }
}

impl DataStream for SyntheticStream {
    fn sources(&self) -> Vec<String> {
        self.sampler.sources().to_vec()
    }

    fn next_sample(&mut self) -> Result<TrainSample> {
        let k = self.sampler.draw();
        let source = self.sampler.sources()[k].clone();
        self.sample(&source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_source_yields_valid_capped_samples() {
        let spec = MixtureSpec::new(SOURCES.iter().map(|s| (*s, 1.0 / 6.0))).unwrap();
        for cap in [40, 512] {
            let mut st = SyntheticStream::new(&spec, TokenScheme::default(), 12, cap, 4).unwrap();
            for _ in 0..60 {
                let s = st.next_sample().unwrap();
                assert!(s.seq_len() <= cap);
                InterleavedSequence::new(TokenScheme::default(), s.items.clone()).unwrap();
                let audio = s.items.iter().any(|i| matches!(i, Item::Audio(_)));
                assert_eq!(audio, s.source.contains("audio"), "{}", s.source);
            }
        }
    }

    #[test]
    fn unknown_source_rejected() {
        let spec = MixtureSpec::single("speech");
        assert!(SyntheticStream::new(&spec, TokenScheme::default(), 12, 64, 0).is_err());
    }
}
