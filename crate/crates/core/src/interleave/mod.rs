//! Interleaved text/audio token streams.
//!
//! A sequence starts in text mode. `TEXT_TO_AUDIO` opens an audio span whose
//! positions are whole RVQ code frames; `AUDIO_TO_TEXT` closes it. Two
//! distinct switch tokens keep validation context-free.

mod model;
mod visual;

use std::fmt;

pub use model::{
    GenerationPolicy, GenerationStats, InterleaveConfig, OmniModel, SequenceLoss, GROUP_AUDIO_EMBED,
    GROUP_AUDIO_HEAD, GROUP_AUDIO_TOKENIZER, GROUP_LLM, GROUP_VISUAL_ENCODER,
    GROUP_VISUAL_PROJECTOR, MODEL_GROUPS,
};
pub use visual::{merge_2x2, VisualProjector};

use crate::error::{invalid, Result};
use crate::rvq::CodeFrame;

/// Text vocabulary plus four reserved ids placed after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenScheme {
    pub text_vocab_size: u32,
    pub depth: usize,
    pub codebook_size: usize,
}

impl Default for TokenScheme {
    fn default() -> Self {
        Self {
            text_vocab_size: 256,
            depth: 8,
            codebook_size: 64,
        }
    }
}

impl TokenScheme {
    pub fn bos(&self) -> u32 {
        self.text_vocab_size
    }

    pub fn eos(&self) -> u32 {
        self.text_vocab_size + 1
    }

    pub fn text_to_audio(&self) -> u32 {
        self.text_vocab_size + 2
    }

    pub fn audio_to_text(&self) -> u32 {
        self.text_vocab_size + 3
    }

    /// Size of the text-side output vocabulary, specials included.
    pub fn total_vocab(&self) -> u32 {
        self.text_vocab_size + 4
    }

    pub fn switch_id(&self, kind: SwitchKind) -> u32 {
        match kind {
            SwitchKind::TextToAudio => self.text_to_audio(),
            SwitchKind::AudioToText => self.audio_to_text(),
        }
    }

    /// Byte-level text tokens.
    pub fn text_ids(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchKind {
    TextToAudio,
    AudioToText,
}

/// One position of an interleaved stream. `Text` also carries `BOS`/`EOS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Item {
    Text(u32),
    Audio(CodeFrame),
    Switch(SwitchKind),
}

/// First protocol violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn violation(index: usize, what: impl fmt::Display) -> Violation {
    Violation {
        index,
        message: format!("{what} at index {index}"),
    }
}

/// Checks the alternation protocol and token ranges.
pub fn validate(scheme: &TokenScheme, items: &[Item]) -> Result<(), Violation> {
    let mut open: Option<usize> = None;
    for (i, item) in items.iter().enumerate() {
        match item {
            Item::Text(id) => {
                if let Some(start) = open {
                    if *id == scheme.eos() {
                        return Err(violation(start, "unclosed audio span"));
                    }
                    return Err(violation(i, "text token inside audio span"));
                }
                if *id == scheme.bos() && i != 0 {
                    return Err(violation(i, "BOS after the start"));
                }
                if *id == scheme.text_to_audio() || *id == scheme.audio_to_text() {
                    return Err(violation(i, "switch id used as a text token"));
                }
                if *id >= scheme.total_vocab() {
                    return Err(violation(i, format_args!("text id {id} out of range")));
                }
                if *id == scheme.eos() && i + 1 != items.len() {
                    return Err(violation(i + 1, "item after EOS"));
                }
            }
            Item::Audio(frame) => {
                if open.is_none() {
                    return Err(violation(i, "audio frame outside an audio span"));
                }
                if frame.depth() != scheme.depth {
                    return Err(violation(
                        i,
                        format_args!("audio frame of depth {} (expected {})", frame.depth(), scheme.depth),
                    ));
                }
                if let Some(c) = frame.codes.iter().find(|&&c| c >= scheme.codebook_size) {
                    return Err(violation(i, format_args!("audio code {c} out of range")));
                }
            }
            Item::Switch(SwitchKind::TextToAudio) => {
                if open.is_some() {
                    return Err(violation(i, "TEXT_TO_AUDIO inside audio span"));
                }
                open = Some(i);
            }
            Item::Switch(SwitchKind::AudioToText) => {
                if open.is_none() {
                    return Err(violation(i, "AUDIO_TO_TEXT outside audio span"));
                }
                open = None;
            }
        }
    }
    match open {
        Some(start) => Err(violation(start, "unclosed audio span")),
        None => Ok(()),
    }
}

/// A validated interleaved stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedSequence {
    scheme: TokenScheme,
    items: Vec<Item>,
}

impl InterleavedSequence {
    pub fn new(scheme: TokenScheme, items: Vec<Item>) -> Result<Self, Violation> {
        validate(&scheme, &items)?;
        Ok(Self { scheme, items })
    }

    pub fn scheme(&self) -> &TokenScheme {
        &self.scheme
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Item> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Maximal single-modality runs of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(Vec<u32>),
    Audio(Vec<CodeFrame>),
}

pub fn to_segments(seq: &InterleavedSequence) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut text = Vec::new();
    let mut audio: Option<Vec<CodeFrame>> = None;
    for item in seq.items() {
        match item {
            Item::Text(id) => text.push(*id),
            Item::Switch(SwitchKind::TextToAudio) => {
                if !text.is_empty() {
                    out.push(Segment::Text(std::mem::take(&mut text)));
                }
                audio = Some(Vec::new());
            }
            Item::Audio(f) => audio.as_mut().expect("validated").push(f.clone()),
            Item::Switch(SwitchKind::AudioToText) => {
                out.push(Segment::Audio(audio.take().expect("validated")));
            }
        }
    }
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    out
}

pub fn from_segments(scheme: TokenScheme, segments: &[Segment]) -> Result<InterleavedSequence> {
    let mut items = Vec::new();
    for s in segments {
        match s {
            Segment::Text(ids) => items.extend(ids.iter().map(|&id| Item::Text(id))),
            Segment::Audio(frames) => {
                items.push(Item::Switch(SwitchKind::TextToAudio));
                items.extend(frames.iter().cloned().map(Item::Audio));
                items.push(Item::Switch(SwitchKind::AudioToText));
            }
        }
    }
    InterleavedSequence::new(scheme, items).map_err(|v| invalid(v.message))
}

/// One item per line: `T:<id>`, `A:<c0,...>`, `S:>A`, `S:>T`.
pub fn to_text(seq: &InterleavedSequence) -> String {
    let mut out = String::new();
    for item in seq.items() {
        match item {
            Item::Text(id) => out.push_str(&format!("T:{id}\n")),
            Item::Audio(f) => {
                let codes: Vec<String> = f.codes.iter().map(|c| c.to_string()).collect();
                out.push_str(&format!("A:{}\n", codes.join(",")));
            }
            Item::Switch(SwitchKind::TextToAudio) => out.push_str("S:>A\n"),
            Item::Switch(SwitchKind::AudioToText) => out.push_str("S:>T\n"),
        }
    }
    out
}

pub fn from_text(scheme: TokenScheme, text: &str) -> Result<InterleavedSequence> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line = line.trim();
        let bad = || invalid(format!("line {}: cannot parse {line:?}", n + 1));
        let item = match line.split_once(':').ok_or_else(bad)? {
            ("T", id) => Item::Text(id.parse().map_err(|_| bad())?),
            ("A", codes) => Item::Audio(CodeFrame::new(
                codes
                    .split(',')
                    .map(|c| c.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            )),
            ("S", ">A") => Item::Switch(SwitchKind::TextToAudio),
            ("S", ">T") => Item::Switch(SwitchKind::AudioToText),
            _ => return Err(bad()),
        };
        items.push(item);
    }
    InterleavedSequence::new(scheme, items).map_err(|v| invalid(v.message))
}
