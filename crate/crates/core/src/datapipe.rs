//! Cross-modal data synthesis: sentence segmentation, quarter audification
//! with a stub multi-voice TTS, video frame sampling and mixture sampling.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::SplitMix64;
use crate::signal::{wav_write, Waveform};

pub const VOICE_COUNT: usize = 44;
pub const TTS_SAMPLE_RATE: u32 = 16_000;
pub const TERMINALS: [char; 6] = ['.', '!', '?', '。', '！', '？'];
pub const TASK_PROMPT: &str = "Please listen to the following audio describing the content of the image. \
Your task is to supplement additional information by combining the audio with the image upon completion of listening";

pub const FRAME_FPS: f64 = 1.0;
pub const MAX_FRAMES: usize = 32;
/// Long and short side of the frame size cap.
pub const MAX_LONG_SIDE: u32 = 1120;
pub const MAX_SHORT_SIDE: u32 = 560;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<String>,
    pub source: String,
}

impl Document {
    pub fn text(&self) -> String {
        self.sentences.concat()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Splits after a terminal mark that is followed by whitespace or the end of
/// the text. The mark and the whitespace after it stay with the sentence, so
/// the pieces concatenate back to the input.
pub fn segment_sentences(text: &str) -> Result<Vec<String>> {
    if text.is_empty() {
        return Err(invalid("cannot segment empty text"));
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        let next_ws = chars.get(i + 1).is_none_or(|&(_, n)| n.is_whitespace());
        if TERMINALS.contains(&c) && next_ws {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
            out.push(text[start..end].to_string());
            start = end;
            i = j;
        } else {
            i += 1;
        }
    }
    if start < text.len() {
        out.push(text[start..].to_string());
    }
    Ok(out)
}

pub fn document(id: impl Into<String>, source: impl Into<String>, text: &str) -> Result<Document> {
    Ok(Document {
        id: id.into(),
        sentences: segment_sentences(text)?,
        source: source.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub id: usize,
    pub base_pitch: f64,
    pub formants: [f64; 2],
    /// Characters per second.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceBank {
    voices: Vec<Voice>,
}

impl Default for VoiceBank {
    fn default() -> Self {
        Self::new()
    }
}

impl VoiceBank {
    pub fn new() -> Self {
        let voices = (0..VOICE_COUNT)
            .map(|id| {
                let mut r = SplitMix64::derive(0x0070_15CE, id as u64);
                Voice {
                    id,
                    base_pitch: 90.0 + 3.0 * id as f64 + r.uniform(0.0, 2.0),
                    formants: [r.uniform(500.0, 900.0), r.uniform(1100.0, 2400.0)],
                    rate: r.uniform(11.0, 16.0),
                }
            })
            .collect();
        Self { voices }
    }

    pub fn len(&self) -> usize {
        self.voices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voices.is_empty()
    }

    pub fn voice(&self, id: usize) -> Result<&Voice> {
        self.voices
            .get(id)
            .ok_or_else(|| invalid(format!("voice {id} out of range; the bank has {} voices", self.voices.len())))
    }

    /// Stub TTS: each character becomes a short voiced segment whose pitch
    /// and second formant depend on the character; whitespace is silence.
    pub fn synthesize(&self, voice_id: usize, text: &str) -> Result<Waveform> {
        let v = self.voice(voice_id)?;
        let sr = TTS_SAMPLE_RATE as f64;
        let seg = ((sr / v.rate).round() as usize).max(1);
        let n_chars = text.chars().count().max(1);
        let mut samples = Vec::with_capacity(seg * n_chars);
        let mut phase = [0.0f64; 3];
        for c in text.chars() {
            if c.is_whitespace() {
                samples.extend(std::iter::repeat_n(0.0, seg));
                continue;
            }
            let k = (c as u32 % 29) as f64;
            let f0 = v.base_pitch * (1.0 + k / 58.0);
            let freqs = [f0, v.formants[0], v.formants[1] + 20.0 * k];
            let amps = [0.5, 0.25, 0.15];
            for n in 0..seg {
                let env = (std::f64::consts::PI * (n as f64 + 0.5) / seg as f64).sin();
                let mut s = 0.0;
                for j in 0..3 {
                    phase[j] = (phase[j] + TAU * freqs[j] / sr) % TAU;
                    s += amps[j] * phase[j].sin();
                }
                samples.push(env * s);
            }
        }
        if samples.is_empty() {
            samples = vec![0.0; seg];
        }
        Waveform::new(TTS_SAMPLE_RATE, samples)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleItem {
    Text(String),
    Audio {
        waveform: Waveform,
        transcript: String,
        voice: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalSample {
    pub id: String,
    pub items: Vec<SampleItem>,
    pub task_prompt: String,
}

impl CrossModalSample {
    pub fn audio_count(&self) -> usize {
        self.items
            .iter()
            .filter(|i| matches!(i, SampleItem::Audio { .. }))
            .count()
    }

    /// Concatenation of text spans and audio transcripts.
    pub fn transcript(&self) -> String {
        self.items
            .iter()
            .map(|i| match i {
                SampleItem::Text(s) => s.as_str(),
                SampleItem::Audio { transcript, .. } => transcript.as_str(),
            })
            .collect()
    }
}

/// Number of sentences audified out of `n`: `round(n / 4)`, halves rounded up.
pub fn quarter_count(n: usize) -> usize {
    (n as f64 / 4.0).round() as usize
}

/// Replaces `round(n/4)` uniformly chosen sentences with stub-TTS audio.
pub fn audify_quarter(doc: &Document, bank: &VoiceBank, seed: u64) -> Result<CrossModalSample> {
    if doc.is_empty() {
        return Err(invalid("document has no sentences"));
    }
    let mut rng = SplitMix64::new(seed);
    let n = doc.len();
    let picked: BTreeSet<usize> = rng.choose_distinct(n, quarter_count(n)).into_iter().collect();
    let mut items = Vec::with_capacity(n);
    for (i, s) in doc.sentences.iter().enumerate() {
        if picked.contains(&i) {
            let voice = rng.below(bank.len());
            items.push(SampleItem::Audio {
                waveform: bank.synthesize(voice, s)?,
                transcript: s.clone(),
                voice,
            });
        } else {
            items.push(SampleItem::Text(s.clone()));
        }
    }
    Ok(CrossModalSample {
        id: doc.id.clone(),
        items,
        task_prompt: TASK_PROMPT.to_string(),
    })
}

/// Timestamps (seconds) of sampled frames. Past `max_frames` the frames are
/// spread evenly over the whole clip instead of truncated.
pub fn video_frame_sample(duration_s: f64, fps: f64, max_frames: usize) -> Result<Vec<f64>> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(invalid(format!("video duration must be positive, got {duration_s}")));
    }
    if !(fps > 0.0 && fps.is_finite()) || max_frames == 0 {
        return Err(invalid("frame rate and frame cap must be positive"));
    }
    let n = (duration_s * fps - 1e-9).ceil().max(1.0) as usize;
    if n <= max_frames {
        Ok((0..n).map(|i| i as f64 / fps).collect())
    } else {
        let step = duration_s / max_frames as f64;
        Ok((0..max_frames).map(|i| i as f64 * step).collect())
    }
}

/// Largest aspect-preserving size fitting 1120×560 (landscape) or 560×1120
/// (portrait). Never upscales.
pub fn frame_resize(w: u32, h: u32) -> Result<(u32, u32)> {
    if w == 0 || h == 0 {
        return Err(invalid(format!("frame size {w}x{h} has a zero side")));
    }
    let (bw, bh) = if w >= h {
        (MAX_LONG_SIDE, MAX_SHORT_SIDE)
    } else {
        (MAX_SHORT_SIDE, MAX_LONG_SIDE)
    };
    let s = (bw as f64 / w as f64).min(bh as f64 / h as f64).min(1.0);
    let fit = |x: u32, cap: u32| ((x as f64 * s).round() as u32).clamp(1, cap);
    Ok((fit(w, bw), fit(h, bh)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    weights: Vec<(String, f64)>,
}

impl MixtureSpec {
    pub fn new<S: Into<String>>(weights: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let weights: Vec<(String, f64)> = weights.into_iter().map(|(s, w)| (s.into(), w)).collect();
        if weights.is_empty() {
            return Err(invalid("mixture has no sources"));
        }
        let names: BTreeSet<&str> = weights.iter().map(|(s, _)| s.as_str()).collect();
        if names.len() != weights.len() {
            return Err(invalid("mixture lists a source twice"));
        }
        if let Some((s, w)) = weights.iter().find(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
            return Err(invalid(format!("mixture weight for {s:?} is {w}")));
        }
        let sum: f64 = weights.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn single(source: &str) -> Self {
        Self {
            weights: vec![(source.to_string(), 1.0)],
        }
    }

    pub fn weights(&self) -> &[(String, f64)] {
        &self.weights
    }

    pub fn weight(&self, source: &str) -> f64 {
        self.weights
            .iter()
            .find(|(s, _)| s == source)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.weights.iter().map(|(s, _)| s.as_str())
    }
}

/// Seeded i.i.d. stream of source indices drawn by weight.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    sources: Vec<String>,
    weights: Vec<f64>,
    rng: SplitMix64,
}

impl MixtureSampler {
    /// `sources` must name exactly the sources of `spec`, in any order;
    /// draws index into `sources`.
    pub fn new(spec: &MixtureSpec, sources: &[&str], seed: u64) -> Result<Self> {
        let given: BTreeSet<&str> = sources.iter().copied().collect();
        let wanted: BTreeSet<&str> = spec.sources().collect();
        if given != wanted || given.len() != sources.len() {
            return Err(invalid(format!(
                "sources {sources:?} do not match mixture sources {:?}",
                wanted.iter().collect::<Vec<_>>()
            )));
        }
        Ok(Self {
            sources: sources.iter().map(|s| s.to_string()).collect(),
            weights: sources.iter().map(|s| spec.weight(s)).collect(),
            rng: SplitMix64::derive(seed, 0x3117),
        })
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn draw(&mut self) -> usize {
        self.rng.categorical(&self.weights)
    }
}

impl Iterator for MixtureSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.draw())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum ManifestItem {
    Text { s: String },
    Audio { wav: String, transcript: String, voice: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub items: Vec<ManifestItem>,
    pub prompt: String,
}

/// Writes each sample's audio as `<id>_<k>.wav` in `dir` and appends one
/// JSON line per sample to `dir/manifest.jsonl`.
pub fn write_manifest(dir: &Path, samples: &[CrossModalSample]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir)?;
    let mut out = fs::File::create(dir.join("manifest.jsonl"))?;
    let mut entries = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut items = Vec::with_capacity(sample.items.len());
        let mut k = 0;
        for item in &sample.items {
            items.push(match item {
                SampleItem::Text(s) => ManifestItem::Text { s: s.clone() },
                SampleItem::Audio {
                    waveform,
                    transcript,
                    voice,
                } => {
                    let name = format!("{}_{k}.wav", sample.id);
                    k += 1;
                    wav_write(dir.join(&name), waveform)?;
                    ManifestItem::Audio {
                        wav: name,
                        transcript: transcript.clone(),
                        voice: *voice,
                    }
                }
            });
        }
        let entry = ManifestEntry {
            id: sample.id.clone(),
            items,
            prompt: sample.task_prompt.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&entry)?)?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Small built-in corpus of caption-like documents for synthetic runs.
pub fn toy_corpus(n_docs: usize, seed: u64) -> Vec<Document> {
    const SUBJECTS: [&str; 6] = ["A red kite", "The old bridge", "One dog", "A quiet street", "The market", "A small boat"];
    const VERBS: [&str; 5] = ["rests near", "moves past", "faces", "sits beside", "leans over"];
    const OBJECTS: [&str; 5] = ["the river.", "a stone wall!", "the hills.", "an open gate?", "the harbour."];
    let mut rng = SplitMix64::new(seed);
    (0..n_docs)
        .map(|d| {
            let n = 1 + rng.below(10);
            let sentences: Vec<String> = (0..n)
                .map(|i| {
                    let s = format!(
                        "{} {} {}",
                        SUBJECTS[rng.below(SUBJECTS.len())],
                        VERBS[rng.below(VERBS.len())],
                        OBJECTS[rng.below(OBJECTS.len())]
                    );
                    if i + 1 < n { s + " " } else { s }
                })
                .collect();
            Document {
                id: format!("doc{d:04}"),
                sentences,
                source: "toy".to_string(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_sentences() {
        let s = segment_sentences("A. B! C?").unwrap();
        assert_eq!(s, vec!["A. ", "B! ", "C?"]);
    }

    #[test]
    fn no_terminal_is_one_sentence() {
        assert_eq!(segment_sentences("just words here").unwrap().len(), 1);
        assert!(segment_sentences("").is_err());
    }

    #[test]
    fn inner_dots_do_not_split() {
        assert_eq!(segment_sentences("v1.2 is out. Yes").unwrap(), vec!["v1.2 is out. ", "Yes"]);
        assert_eq!(segment_sentences("好。 对！").unwrap().len(), 2);
    }

    #[test]
    fn bank_has_44_distinct_deterministic_voices() {
        let bank = VoiceBank::new();
        assert_eq!(bank.len(), 44);
        let a = bank.synthesize(3, "hello").unwrap();
        assert_eq!(a, VoiceBank::new().synthesize(3, "hello").unwrap());
        assert_ne!(a, bank.synthesize(4, "hello").unwrap());
        assert!(bank.synthesize(44, "x").is_err());
    }

    #[test]
    fn quarter_rounding() {
        assert_eq!(quarter_count(1), 0);
        assert_eq!(quarter_count(2), 1);
        assert_eq!(quarter_count(8), 2);
        assert_eq!(quarter_count(10), 3);
    }

    #[test]
    fn audify_eight_and_one() {
        let bank = VoiceBank::new();
        let doc = document("d", "t", "A. B. C. D. E. F. G. H.").unwrap();
        let s = audify_quarter(&doc, &bank, 5).unwrap();
        assert_eq!(s.audio_count(), 2);
        assert_eq!(s.transcript(), doc.text());
        assert_eq!(s.task_prompt, TASK_PROMPT);
        assert_eq!(s, audify_quarter(&doc, &bank, 5).unwrap());
        let one = document("e", "t", "Only one.").unwrap();
        assert_eq!(audify_quarter(&one, &bank, 5).unwrap().audio_count(), 0);
    }

    #[test]
    fn frames() {
        assert_eq!(video_frame_sample(10.0, 1.0, 32).unwrap().len(), 10);
        let long = video_frame_sample(100.0, 1.0, 32).unwrap();
        assert_eq!(long.len(), 32);
        assert!(long.windows(2).all(|w| (w[1] - w[0] - 100.0 / 32.0).abs() < 1e-12));
        assert!(video_frame_sample(0.0, 1.0, 32).is_err());
        assert_eq!(frame_resize(2240, 1120).unwrap(), (1120, 560));
        assert_eq!(frame_resize(1120, 2240).unwrap(), (560, 1120));
        assert_eq!(frame_resize(320, 240).unwrap(), (320, 240));
    }

    #[test]
    fn mixture_validation() {
        assert!(MixtureSpec::new([("a", 0.5), ("b", 0.6)]).is_err());
        assert!(MixtureSpec::new([("a", -0.5), ("b", 1.5)]).is_err());
        let spec = MixtureSpec::new([("audio", 0.2), ("image", 0.4), ("text", 0.4)]).unwrap();
        assert!(MixtureSampler::new(&spec, &["audio", "image"], 0).is_err());
        let only = MixtureSpec::single("text");
        let mut s = MixtureSampler::new(&only, &["text"], 1).unwrap();
        assert!((0..100).all(|_| s.draw() == 0));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bank = VoiceBank::new();
        let docs = toy_corpus(3, 2);
        let samples: Vec<_> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| audify_quarter(d, &bank, i as u64).unwrap())
            .collect();
        let written = write_manifest(dir.path(), &samples).unwrap();
        let read = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(written, read);
        let line = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        assert!(line.contains("\"t\":\"text\""));
    }
}
