//! Audio tokenizer: Mel front end, ×8 downsampling conv encoder, RVQ
//! bottleneck, upsampling Mel decoder and a frozen-LM transcript head.
//!
//! The networks operate on Whisper-style normalized log-Mels:
//! `y = (max(log10 m, max(log10 m) - 8) + 4) / 4`. [`denormalize_mel`] maps
//! decoder output back to natural-log Mel energies.

mod net;
mod tokens;

use std::collections::BTreeMap;
use std::f64::consts::LN_10;
use std::path::Path;

pub use net::{ADAPTER_GROUP, DECODER_GROUP, ENCODER_GROUP, LM_GROUP, LM_WIDTH};
pub use tokens::{encode_tokens, parse_tokens, read_tokens, write_tokens, TOKEN_MAGIC};

use crate::error::{invalid, Error, Result};
use crate::numerics::nn::Linear;
use crate::numerics::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Bound, Graph, ParamStore,
    SplitMix64, Tensor, Var,
};
use crate::rvq::{CodeFrame, RvqStack, DEFAULT_COMMITMENT_WEIGHT, DEFAULT_DECAY};
use crate::signal::{
    mel_spectrogram_with, multi_scale_mel_loss_graph, MelConfig, MelSpectrogram, Waveform,
    DEFAULT_POOL_FACTORS,
};
use net::{Decoder, Encoder, FrozenLm};

pub const TOKEN_RATE_HZ: f64 = 12.5;
pub const DOWNSAMPLE: usize = 8;
/// Shortest accepted input: 64 Mel frames, i.e. 8 token frames.
pub const MIN_DURATION_S: f64 = 0.64;

/// Transcript alphabet: `^` (BOS), space, `a`..`z`.
pub const VOCAB: &str = "^ abcdefghijklmnopqrstuvwxyz";
pub const VOCAB_SIZE: usize = 28;
pub const BOS: usize = 0;

/// Character ids of a transcript over [`VOCAB`].
pub fn transcript_ids(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .map(|c| {
            VOCAB[1..]
                .find(c)
                .map(|i| i + 1)
                .ok_or_else(|| invalid(format!("character {c:?} is not in the transcript vocabulary")))
        })
        .collect()
}

/// Lowercases and maps anything outside `a`..`z` to single spaces.
pub fn sanitize_transcript(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_lowercase() {
            out.push(c);
        } else if !out.ends_with(' ') && !out.is_empty() {
            out.push(' ');
        }
    }
    out.trim_end().to_string()
}

pub fn normalize_mel(m: &Tensor) -> Tensor {
    let top = m.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) / LN_10;
    let data = m
        .data()
        .iter()
        .map(|v| ((v / LN_10).max(top - 8.0) + 4.0) / 4.0)
        .collect();
    Tensor::new(m.shape().to_vec(), data).expect("same shape")
}

pub fn denormalize_mel(y: &Tensor) -> Tensor {
    let data = y.data().iter().map(|v| (4.0 * v - 4.0) * LN_10).collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

/// Token frames for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTokenSeq {
    pub frames: Vec<CodeFrame>,
    pub source_duration: f64,
}

impl AudioTokenSeq {
    pub fn from_frames(frames: Vec<CodeFrame>) -> Self {
        let source_duration = frames.len() as f64 / TOKEN_RATE_HZ;
        Self {
            frames,
            source_duration,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        TOKEN_RATE_HZ
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mel: f64,
    pub commit: f64,
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 1.0,
            commit: DEFAULT_COMMITMENT_WEIGHT,
            ce: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub mel: MelConfig,
    pub channels: usize,
    pub dim: usize,
    pub codebook_size: usize,
    pub depth: usize,
    /// Stride-2 stages; `2^n_blocks` must equal [`DOWNSAMPLE`].
    pub n_blocks: usize,
    pub weights: LossWeights,
    pub lr: f64,
    pub ema_decay: f64,
    /// Share of interleaved text/audio samples in codec training batches.
    pub interleaved_fraction: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::DEFAULT_16K,
            channels: 64,
            dim: 64,
            codebook_size: 64,
            depth: 8,
            n_blocks: 3,
            weights: LossWeights::default(),
            lr: 2e-3,
            ema_decay: DEFAULT_DECAY,
            interleaved_fraction: 0.2,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if 1usize << self.n_blocks != DOWNSAMPLE {
            return Err(Error::Config(format!(
                "{} stride-2 blocks give ×{} downsampling, need ×{DOWNSAMPLE}",
                self.n_blocks,
                1usize << self.n_blocks
            )));
        }
        if self.mel.frame_rate() / DOWNSAMPLE as f64 != TOKEN_RATE_HZ {
            return Err(Error::Config(format!(
                "mel frame rate {} Hz does not give {TOKEN_RATE_HZ} Hz tokens",
                self.mel.frame_rate()
            )));
        }
        let w = self.weights;
        if [w.mel, w.commit, w.ce].iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if self.channels == 0 || self.dim == 0 || self.codebook_size == 0 || self.depth == 0 {
            return Err(Error::Config("codec sizes must be positive".into()));
        }
        Ok(())
    }

    fn to_tensor(self) -> Tensor {
        Tensor::from_vec(vec![
            self.channels as f64,
            self.dim as f64,
            self.codebook_size as f64,
            self.depth as f64,
            self.n_blocks as f64,
            self.mel.sample_rate as f64,
            self.mel.n_fft as f64,
            self.mel.hop as f64,
            self.mel.n_mels as f64,
        ])
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != 9 {
            return Err(Error::Checkpoint("codec.config has the wrong length".into()));
        }
        Ok(Self {
            channels: d[0] as usize,
            dim: d[1] as usize,
            codebook_size: d[2] as usize,
            depth: d[3] as usize,
            n_blocks: d[4] as usize,
            mel: MelConfig {
                sample_rate: d[5] as u32,
                n_fft: d[6] as usize,
                hop: d[7] as usize,
                n_mels: d[8] as usize,
            },
            ..Self::default()
        })
    }
}

/// Per-component losses of one step; `total` is the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecLosses {
    pub mel_recon: f64,
    pub commitment: f64,
    pub transcript_ce: f64,
    pub total: f64,
}

/// Graph handles for one forward pass over a batch.
struct Forward {
    total: Var,
    mel: Var,
    commit: Var,
    ce: Var,
    latents: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Codec {
    config: CodecConfig,
    params: ParamStore,
    rvq: RvqStack,
    encoder: Encoder,
    decoder: Decoder,
    adapter: Linear,
    lm: FrozenLm,
    adam: AdamState,
    rng: SplitMix64,
}

const CONFIG_ENTRY: &str = "codec.config";

impl Codec {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::derive(seed, 0xC0DEC);
        let mut params = ParamStore::new();
        let n_mels = config.mel.n_mels;
        let encoder = Encoder::init(&mut params, n_mels, config.channels, config.dim, config.n_blocks, &mut rng);
        let decoder = Decoder::init(&mut params, config.dim, config.channels, n_mels, config.n_blocks, &mut rng);
        let adapter = Linear::init(&mut params, "adapter", ADAPTER_GROUP, config.dim, LM_WIDTH, &mut rng);
        let lm = FrozenLm::init(&mut params, VOCAB_SIZE, &mut rng);
        let rvq = RvqStack::random(config.depth, config.codebook_size, config.dim, 0.1, &mut rng);
        Ok(Self {
            config,
            params,
            rvq,
            encoder,
            decoder,
            adapter,
            lm,
            adam: AdamState::new(AdamConfig::with_lr(config.lr)),
            rng,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn rvq(&self) -> &RvqStack {
        &self.rvq
    }

    /// Errors if any transcript-LM parameter is flagged trainable.
    pub fn check_frozen(&self) -> Result<()> {
        if let Some((name, _)) = self
            .params
            .iter()
            .find(|(_, p)| p.group == LM_GROUP && p.tensor.requires_grad)
        {
            return Err(Error::Freeze(format!("transcript LM parameter {name} is trainable")));
        }
        Ok(())
    }

    /// Normalized Mel `[n_mels, 8N]` of `w`, trimmed to whole token frames.
    pub fn input_mel(&self, w: &Waveform) -> Result<Tensor> {
        if w.sample_rate() != self.config.mel.sample_rate {
            return Err(invalid(format!(
                "codec expects {} Hz audio, got {} Hz",
                self.config.mel.sample_rate,
                w.sample_rate()
            )));
        }
        let min_frames = (MIN_DURATION_S * self.config.mel.frame_rate()).round() as usize;
        let min_samples = min_frames * self.config.mel.hop;
        if w.samples().len() < min_samples {
            return Err(invalid(format!(
                "audio too short: {:.3} s, encoding needs at least {MIN_DURATION_S} s",
                w.duration_seconds()
            )));
        }
        let m = mel_spectrogram_with(w, self.config.mel)?;
        let t = m.n_frames() / DOWNSAMPLE * DOWNSAMPLE;
        let n_mels = m.n_mels;
        let full = m.n_frames();
        let mut data = Vec::with_capacity(n_mels * t);
        for b in 0..n_mels {
            data.extend_from_slice(&m.frames.data()[b * full..b * full + t]);
        }
        Ok(normalize_mel(&Tensor::new(vec![n_mels, t], data)?))
    }

    /// Continuous encoder output `[dim, N]` before quantization.
    pub fn latents(&self, w: &Waveform) -> Result<Tensor> {
        let y = self.input_mel(w)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let x = g.constant(y);
        let z = self.encoder.forward(&mut g, &b, x)?;
        Ok(g.value(z).clone())
    }

    pub fn encode(&self, w: &Waveform) -> Result<AudioTokenSeq> {
        let z = self.latents(w)?;
        let (frames, _) = self.rvq.quantize_columns(&z)?;
        Ok(AudioTokenSeq {
            frames,
            source_duration: w.duration_seconds(),
        })
    }

    /// Dequantized token vectors `[dim, N]`.
    pub fn token_vectors(&self, t: &AudioTokenSeq) -> Result<Tensor> {
        if t.is_empty() {
            return Err(invalid("empty token sequence"));
        }
        self.rvq.dequantize_columns(&t.frames)
    }

    /// Normalized decoder output `[n_mels, 8N]`.
    pub fn decode_normalized(&self, t: &AudioTokenSeq) -> Result<Tensor> {
        let q = self.token_vectors(t)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let x = g.constant(q);
        let y = self.decoder.forward(&mut g, &b, x)?;
        Ok(g.value(y).clone())
    }

    pub fn decode_mel(&self, t: &AudioTokenSeq) -> Result<MelSpectrogram> {
        let y = self.decode_normalized(t)?;
        let c = self.config.mel;
        Ok(MelSpectrogram {
            n_mels: c.n_mels,
            n_fft: c.n_fft,
            hop_length: c.hop,
            sample_rate: c.sample_rate,
            frames: denormalize_mel(&y),
        })
    }

    /// Mean absolute normalized-Mel error of `decode(encode(w))`.
    pub fn roundtrip_mel_l1(&self, w: &Waveform) -> Result<f64> {
        let target = self.input_mel(w)?;
        let pred = self.decode_normalized(&self.encode(w)?)?;
        Ok(pred.mean_abs_diff(&target))
    }

    /// Next-character logits `[len, VOCAB_SIZE]`: row `i` predicts character
    /// `i` of `text` after the audio prefix, BOS and the first `i` characters.
    pub fn transcript_logits(&self, t: &AudioTokenSeq, text: &str) -> Result<Tensor> {
        self.check_frozen()?;
        let ids = lm_inputs(&transcript_ids(text)?);
        let q = self.token_vectors(t)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let x = g.constant(q);
        let logits = self.transcript_head(&mut g, &b, x, &ids)?;
        Ok(g.value(logits).clone())
    }

    /// Mean transcript cross-entropy for `text` given tokens.
    pub fn transcript_ce(&self, t: &AudioTokenSeq, text: &str) -> Result<f64> {
        self.check_frozen()?;
        let targets = transcript_ids(text)?;
        let q = self.token_vectors(t)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let x = g.constant(q);
        let logits = self.transcript_head(&mut g, &b, x, &lm_inputs(&targets))?;
        let ce = g.cross_entropy(logits, &targets)?;
        g.value(ce).item()
    }

    fn transcript_head(&self, g: &mut Graph, b: &Bound, q: Var, ids: &[usize]) -> Result<Var> {
        let qt = g.transpose(q)?;
        let prefix = self.adapter.forward(g, b, qt)?;
        self.lm.forward(g, b, prefix, ids)
    }

    fn forward_batch(&self, g: &mut Graph, b: &Bound, batch: &[(Tensor, Vec<usize>)]) -> Result<Forward> {
        let w = self.config.weights;
        let mut mel_terms = Vec::new();
        let mut commit_terms = Vec::new();
        let mut ce_terms = Vec::new();
        let mut latents = Vec::new();
        for (y, targets) in batch {
            let x = g.constant(y.clone());
            let z = self.encoder.forward(g, b, x)?;
            latents.push(g.value(z).clone());
            let (q, _) = self.rvq.straight_through(g, z)?;
            let pred = self.decoder.forward(g, b, q)?;
            mel_terms.push(multi_scale_mel_loss_graph(g, pred, x, &DEFAULT_POOL_FACTORS)?);
            let qd = g.detach(q);
            commit_terms.push(g.mse_loss(z, qd)?);
            let logits = self.transcript_head(g, b, q, &lm_inputs(targets))?;
            ce_terms.push(g.cross_entropy(logits, targets)?);
        }
        let inv = 1.0 / batch.len() as f64;
        let mel = mean_of(g, &mel_terms, inv)?;
        let commit = mean_of(g, &commit_terms, inv)?;
        let ce = mean_of(g, &ce_terms, inv)?;
        let parts = [g.scale(mel, w.mel)?, g.scale(commit, w.commit)?, g.scale(ce, w.ce)?];
        let s = g.add(parts[0], parts[1])?;
        let total = g.add(s, parts[2])?;
        Ok(Forward {
            total,
            mel,
            commit,
            ce,
            latents,
        })
    }

    fn prepare(&self, batch: &[(Waveform, String)]) -> Result<Vec<(Tensor, Vec<usize>)>> {
        if batch.is_empty() {
            return Err(invalid("empty training batch"));
        }
        batch
            .iter()
            .map(|(w, text)| {
                let ids = transcript_ids(text)?;
                if ids.is_empty() {
                    return Err(invalid("empty transcript"));
                }
                Ok((self.input_mel(w)?, ids))
            })
            .collect()
    }

    /// Losses on `batch` without updating anything.
    pub fn evaluate(&self, batch: &[(Waveform, String)]) -> Result<CodecLosses> {
        self.check_frozen()?;
        let prepared = self.prepare(batch)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let f = self.forward_batch(&mut g, &b, &prepared)?;
        losses(&g, &f)
    }

    /// One optimisation step: weighted loss, backward, Adam on trainable
    /// parameters, then an EMA codebook update from the batch latents.
    /// Returns the losses measured before the update.
    pub fn train_step(&mut self, batch: &[(Waveform, String)]) -> Result<CodecLosses> {
        self.check_frozen()?;
        let prepared = self.prepare(batch)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let f = self.forward_batch(&mut g, &b, &prepared)?;
        let out = losses(&g, &f)?;
        g.backward(f.total)?;
        self.params.zero_grads();
        self.params.pull_grads(&g, &b);
        adam_step(&mut self.params, &mut self.adam)?;
        self.params.zero_grads();
        let mut vectors = Vec::new();
        for z in &f.latents {
            let t = z.transpose2()?;
            let d = t.shape()[1];
            vectors.extend(t.data().chunks(d).map(|c| c.to_vec()));
        }
        self.rvq.ema_update(&vectors, self.config.ema_decay, &mut self.rng)?;
        Ok(out)
    }

    /// Losses and a copy of the parameters holding the gradients of the
    /// weighted total, without stepping.
    pub fn gradients(&self, batch: &[(Waveform, String)]) -> Result<(CodecLosses, ParamStore)> {
        self.check_frozen()?;
        let prepared = self.prepare(batch)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let f = self.forward_batch(&mut g, &b, &prepared)?;
        let out = losses(&g, &f)?;
        g.backward(f.total)?;
        let mut p = self.params.clone();
        p.zero_grads();
        p.pull_grads(&g, &b);
        Ok((out, p))
    }

    /// Gradient L2 norm per parameter group for one batch, without stepping.
    pub fn grad_norms(&self, batch: &[(Waveform, String)]) -> Result<BTreeMap<String, f64>> {
        let (_, p) = self.gradients(batch)?;
        Ok(p.groups()
            .into_iter()
            .map(|grp| {
                let n = p.grad_norm(Some(&grp));
                (grp, n)
            })
            .collect())
    }

    pub fn set_weights(&mut self, w: LossWeights) {
        self.config.weights = w;
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let mut e = self.params.entries();
        e.extend(self.rvq.to_entries());
        e.push((CONFIG_ENTRY.to_string(), self.config.to_tensor()));
        e
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.entries())
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let cfg = entries
            .iter()
            .find(|(n, _)| n == CONFIG_ENTRY)
            .ok_or_else(|| Error::Checkpoint(format!("missing {CONFIG_ENTRY} entry")))?;
        let mut codec = Self::new(CodecConfig::from_tensor(&cfg.1)?, 0)?;
        let loaded = codec.params.load_entries(entries)?;
        if loaded != codec.params.len() {
            return Err(Error::Checkpoint(format!(
                "codec checkpoint holds {loaded} of {} parameters",
                codec.params.len()
            )));
        }
        codec.rvq = RvqStack::from_entries(entries, DEFAULT_COMMITMENT_WEIGHT)?;
        Ok(codec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_entries(&load_checkpoint(path)?)
    }
}

/// LM inputs for teacher forcing: BOS followed by all but the last target.
fn lm_inputs(targets: &[usize]) -> Vec<usize> {
    let mut ids = vec![BOS];
    ids.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
    ids
}

fn mean_of(g: &mut Graph, terms: &[Var], inv: f64) -> Result<Var> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = g.add(acc, *t)?;
    }
    g.scale(acc, inv)
}

fn losses(g: &Graph, f: &Forward) -> Result<CodecLosses> {
    let out = CodecLosses {
        mel_recon: g.value(f.mel).item()?,
        commitment: g.value(f.commit).item()?,
        transcript_ce: g.value(f.ce).item()?,
        total: g.value(f.total).item()?,
    };
    if !out.total.is_finite() {
        return Err(Error::NonFinite {
            op: "codec total loss".into(),
            index: 0,
        });
    }
    Ok(out)
}

/// The synthetic training set: `n` one-second tones at distinct pitches,
/// labelled `a`, `b`, ...
pub fn tone_dataset(n: usize, seconds: f64) -> Result<Vec<(Waveform, String)>> {
    if n > 26 {
        return Err(invalid("tone dataset supports at most 26 labels"));
    }
    (0..n)
        .map(|i| {
            let f = 220.0 * 2f64.powf(i as f64 / 2.0);
            let label = ((b'a' + i as u8) as char).to_string();
            Ok((Waveform::sine(16_000, f, seconds, 0.5)?, label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Codec {
        Codec::new(
            CodecConfig {
                channels: 16,
                dim: 16,
                codebook_size: 16,
                ..CodecConfig::default()
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn vocab_has_28_symbols() {
        assert_eq!(VOCAB.chars().count(), VOCAB_SIZE);
        assert_eq!(transcript_ids("ab z").unwrap(), vec![2, 3, 1, 27]);
        assert!(transcript_ids("A").is_err());
        assert_eq!(sanitize_transcript("Hello, World!"), "hello world");
    }

    #[test]
    fn normalization_inverts_above_the_clamp() {
        let m = Tensor::from_vec(vec![-3.0, 0.0, 2.0]);
        let back = denormalize_mel(&normalize_mel(&m));
        assert!(back.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn two_seconds_gives_25_frames() {
        let c = small();
        let w = Waveform::sine(16000, 440.0, 2.0, 0.5).unwrap();
        let t = c.encode(&w).unwrap();
        assert_eq!(t.len(), 25);
        assert_eq!(c.decode_mel(&t).unwrap().frames.shape(), &[80, 200]);
    }

    #[test]
    fn short_audio_rejected() {
        let c = small();
        let w = Waveform::sine(16000, 440.0, 0.5, 0.5).unwrap();
        let e = c.encode(&w).unwrap_err().to_string();
        assert!(e.contains("0.64"), "{e}");
    }

    #[test]
    fn zero_frames_decode_constant_in_time() {
        let c = small();
        let t = AudioTokenSeq::from_frames(vec![CodeFrame::zeros(8); 5]);
        let y = c.decode_normalized(&t).unwrap();
        let (m, n) = y.dims2().unwrap();
        assert_eq!(n, 40);
        for b in 0..m {
            let row = y.row(b);
            assert!(row.iter().all(|v| (v - row[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn empty_tokens_rejected() {
        assert!(small().decode_mel(&AudioTokenSeq::from_frames(vec![])).is_err());
    }

    #[test]
    fn trainable_lm_is_a_freeze_violation() {
        let mut c = small();
        c.params_mut().set_group_trainable(LM_GROUP, true);
        let w = Waveform::sine(16000, 440.0, 1.0, 0.5).unwrap();
        let t = c.encode(&w).unwrap();
        assert!(matches!(c.transcript_logits(&t, "a"), Err(Error::Freeze(_))));
        assert!(matches!(c.train_step(&[(w, "a".into())]), Err(Error::Freeze(_))));
    }

    #[test]
    fn total_is_weighted_sum() {
        let c = small();
        let data = tone_dataset(2, 1.0).unwrap();
        let l = c.evaluate(&data).unwrap();
        let w = c.config().weights;
        let s = w.mel * l.mel_recon + w.commit * l.commitment + w.ce * l.transcript_ce;
        assert!((l.total - s).abs() < 1e-12);
        assert!(l.mel_recon >= 0.0 && l.commitment >= 0.0 && l.transcript_ce >= 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = small();
        let back = Codec::from_entries(&c.entries()).unwrap();
        let w = Waveform::sine(16000, 330.0, 1.0, 0.5).unwrap();
        assert_eq!(back.encode(&w).unwrap(), c.encode(&w).unwrap());
        assert_eq!(back.params().checksums(), c.params().checksums());
    }
}
