//! Encoder, decoder and frozen transcript LM of the audio tokenizer.

use crate::error::Result;
use crate::numerics::nn::{sinusoidal_positions, Conv1d, Linear, TransformerBlock};
use crate::numerics::{Bound, Graph, ParamStore, SplitMix64, Var};

pub const ENCODER_GROUP: &str = "codec.encoder";
pub const DECODER_GROUP: &str = "codec.decoder";
pub const ADAPTER_GROUP: &str = "codec.adapter";
pub const LM_GROUP: &str = "codec.lm";

/// Residual conv stack with stride-2 stages: `[n_mels, T] -> [dim, T / 2^blocks]`.
#[derive(Debug, Clone)]
pub struct Encoder {
    input: Conv1d,
    blocks: Vec<(Conv1d, Conv1d)>,
    output: Conv1d,
}

impl Encoder {
    pub fn init(
        store: &mut ParamStore,
        n_mels: usize,
        channels: usize,
        dim: usize,
        blocks: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let g = ENCODER_GROUP;
        Self {
            input: Conv1d::init(store, "enc.in", g, n_mels, channels, 3, 1, 1.0, rng),
            blocks: (0..blocks)
                .map(|i| {
                    (
                        Conv1d::init(store, &format!("enc.b{i}.res"), g, channels, channels, 3, 1, 0.5, rng),
                        Conv1d::init(store, &format!("enc.b{i}.down"), g, channels, channels, 3, 2, 1.0, rng),
                    )
                })
                .collect(),
            output: Conv1d::init(store, "enc.out", g, channels, dim, 1, 1, 1.0, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, mel: Var) -> Result<Var> {
        let mut h = self.input.forward(g, p, mel)?;
        for (res, down) in &self.blocks {
            let a = g.gelu(h)?;
            let r = res.forward(g, p, a)?;
            h = g.add(h, r)?;
            let a = g.gelu(h)?;
            h = down.forward(g, p, a)?;
        }
        let a = g.gelu(h)?;
        self.output.forward(g, p, a)
    }
}

/// Mirror of [`Encoder`]: nearest-neighbour ×2 upsampling followed by a
/// convolution at each stage. Replicate padding keeps a time-constant input
/// time-constant at the output.
#[derive(Debug, Clone)]
pub struct Decoder {
    input: Conv1d,
    blocks: Vec<(Conv1d, Conv1d)>,
    output: Conv1d,
}

impl Decoder {
    pub fn init(
        store: &mut ParamStore,
        dim: usize,
        channels: usize,
        n_mels: usize,
        blocks: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let g = DECODER_GROUP;
        Self {
            input: Conv1d::init(store, "dec.in", g, dim, channels, 3, 1, 1.0, rng),
            blocks: (0..blocks)
                .map(|i| {
                    (
                        Conv1d::init(store, &format!("dec.b{i}.up"), g, channels, channels, 3, 1, 1.0, rng),
                        Conv1d::init(store, &format!("dec.b{i}.res"), g, channels, channels, 3, 1, 0.5, rng),
                    )
                })
                .collect(),
            output: Conv1d::init(store, "dec.out", g, channels, n_mels, 3, 1, 1.0, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, q: Var) -> Result<Var> {
        let mut h = self.input.forward(g, p, q)?;
        for (up, res) in &self.blocks {
            let u = g.upsample(h, 2)?;
            let a = g.gelu(u)?;
            h = up.forward(g, p, a)?;
            let a = g.gelu(h)?;
            let r = res.forward(g, p, a)?;
            h = g.add(h, r)?;
        }
        let a = g.gelu(h)?;
        self.output.forward(g, p, a)
    }
}

/// Small causal LM standing in for a pretrained language model. Its weights
/// are random and never trained; audio embeddings are fed as a prefix.
#[derive(Debug, Clone)]
pub struct FrozenLm {
    pub width: usize,
    embed: String,
    blocks: Vec<TransformerBlock>,
    head: Linear,
}

pub const LM_WIDTH: usize = 64;
const LM_LAYERS: usize = 2;
const LM_HEADS: usize = 4;
/// Small head gain keeps the initial predictive distribution near uniform.
const LM_HEAD_GAIN: f64 = 0.25;

impl FrozenLm {
    pub fn init(store: &mut ParamStore, vocab: usize, rng: &mut SplitMix64) -> Self {
        let embed = "lm.embed".to_string();
        store.insert_normal(&embed, LM_GROUP, &[vocab, LM_WIDTH], 1.0, rng);
        let blocks = (0..LM_LAYERS)
            .map(|i| {
                TransformerBlock::init(
                    store,
                    &format!("lm.block{i}"),
                    LM_GROUP,
                    LM_WIDTH,
                    LM_HEADS,
                    2 * LM_WIDTH,
                    false,
                    rng,
                )
            })
            .collect();
        let head = Linear::init_scaled(store, "lm.head", LM_GROUP, LM_WIDTH, vocab, LM_HEAD_GAIN, rng);
        store.set_group_trainable(LM_GROUP, false);
        Self {
            width: LM_WIDTH,
            embed,
            blocks,
            head,
        }
    }

    /// Logits `[ids.len(), vocab]` for each text position given an audio
    /// prefix `[n, width]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, prefix: Var, ids: &[usize]) -> Result<Var> {
        let n = g.value(prefix).shape()[0];
        let e = g.gather(p.get(&self.embed)?, ids)?;
        let x = g.concat(&[prefix, e], 0)?;
        let pos = g.constant(sinusoidal_positions(n + ids.len(), self.width));
        let mut h = g.add(x, pos)?;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        let text = g.slice_rows(h, n, ids.len())?;
        self.head.forward(g, p, text)
    }
}
