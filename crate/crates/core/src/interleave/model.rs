//! Tiny omni model: text/audio embeddings, causal backbone, text head,
//! depth-transformer audio head, and the visual encoder/projector stand-ins.

use crate::error::{invalid, Result};
use crate::numerics::nn::{sinusoidal_positions, LayerNorm, Linear, TransformerBlock};
use crate::numerics::{Bound, Graph, ParamStore, SplitMix64, Tensor, Var};
use crate::rvq::CodeFrame;

use super::visual::VisualProjector;
use super::{InterleavedSequence, Item, SwitchKind, TokenScheme};

pub const GROUP_VISUAL_ENCODER: &str = "visual_encoder";
pub const GROUP_VISUAL_PROJECTOR: &str = "visual_projector";
pub const GROUP_LLM: &str = "llm";
pub const GROUP_AUDIO_EMBED: &str = "audio_embed";
pub const GROUP_AUDIO_HEAD: &str = "audio_head";
pub const GROUP_AUDIO_TOKENIZER: &str = "audio_tokenizer";

pub const MODEL_GROUPS: [&str; 6] = [
    GROUP_VISUAL_ENCODER,
    GROUP_VISUAL_PROJECTOR,
    GROUP_LLM,
    GROUP_AUDIO_EMBED,
    GROUP_AUDIO_HEAD,
    GROUP_AUDIO_TOKENIZER,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterleaveConfig {
    pub scheme: TokenScheme,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_width: usize,
    pub head_layers: usize,
    pub head_heads: usize,
    /// Raw per-patch feature size fed to the visual encoder stand-in.
    pub patch_dim: usize,
    pub visual_dim: usize,
    pub projector_hidden: usize,
    /// Width of the frozen tokenizer codebooks held in the registry.
    pub tokenizer_dim: usize,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        Self {
            scheme: TokenScheme::default(),
            d_model: 128,
            layers: 2,
            heads: 8,
            head_width: 64,
            head_layers: 3,
            head_heads: 8,
            patch_dim: 12,
            visual_dim: 16,
            projector_hidden: 64,
            tokenizer_dim: 64,
        }
    }
}

impl InterleaveConfig {
    /// Narrow widths with the same layer structure, for fuzzing and fast
    /// schedule runs.
    pub fn tiny() -> Self {
        Self {
            scheme: TokenScheme {
                text_vocab_size: 32,
                depth: 8,
                codebook_size: 16,
            },
            d_model: 16,
            layers: 1,
            heads: 2,
            head_width: 16,
            head_layers: 3,
            head_heads: 2,
            patch_dim: 6,
            visual_dim: 8,
            projector_hidden: 16,
            tokenizer_dim: 8,
        }
    }
}

/// Run-length policy for [`OmniModel::generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationPolicy {
    pub text_run: usize,
    pub audio_run: usize,
    /// Maximum number of new items.
    pub max_len: usize,
    pub seed: u64,
    /// `0` decodes greedily.
    pub temperature: f64,
    /// Whether the model may end the sequence with EOS.
    pub stop_on_eos: bool,
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        Self {
            text_run: 4,
            audio_run: 4,
            max_len: 32,
            seed: 0,
            temperature: 1.0,
            stop_on_eos: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub head_calls: usize,
    pub audio_frames: usize,
}

/// Graph handles of a sequence loss: the item-weighted total and the mean
/// cross-entropies of text-side and audio targets.
#[derive(Debug, Clone, Copy)]
pub struct SequenceLoss {
    pub total: Var,
    pub text: Option<Var>,
    pub audio: Option<Var>,
}

#[derive(Debug, Clone)]
struct DepthHead {
    input: Linear,
    code_embed: Vec<String>,
    blocks: Vec<TransformerBlock>,
    outputs: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct OmniModel {
    config: InterleaveConfig,
    params: ParamStore,
    text_embed: String,
    audio_embed: Vec<String>,
    switch_embed: String,
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNorm,
    text_head: Linear,
    head: DepthHead,
    visual_encoder: Linear,
    projector: VisualProjector,
}

impl OmniModel {
    pub fn new(config: InterleaveConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, 0x0A11);
        let s = &mut ParamStore::new();
        let sc = config.scheme;
        let d = config.d_model;
        let v = sc.total_vocab() as usize;

        let text_embed = "llm.embed".to_string();
        s.insert_normal(&text_embed, GROUP_LLM, &[v, d], 0.5, &mut rng);
        let blocks = (0..config.layers)
            .map(|i| {
                TransformerBlock::init(s, &format!("llm.block{i}"), GROUP_LLM, d, config.heads, 2 * d, true, &mut rng)
            })
            .collect();
        let final_ln = LayerNorm::init(s, "llm.ln_f", GROUP_LLM, d);
        let text_head = Linear::init(s, "llm.head", GROUP_LLM, d, v, &mut rng);

        let audio_embed: Vec<String> = (0..sc.depth)
            .map(|i| {
                let name = format!("audio_embed.layer{i}");
                s.insert_normal(&name, GROUP_AUDIO_EMBED, &[sc.codebook_size, d], 0.5, &mut rng);
                name
            })
            .collect();
        let switch_embed = "audio_embed.switch".to_string();
        s.insert_normal(&switch_embed, GROUP_AUDIO_EMBED, &[2, d], 0.5, &mut rng);

        let w = config.head_width;
        let head = DepthHead {
            input: Linear::init(s, "head.in", GROUP_AUDIO_HEAD, d, w, &mut rng),
            code_embed: (0..sc.depth.saturating_sub(1))
                .map(|i| {
                    let name = format!("head.code{i}");
                    s.insert_normal(&name, GROUP_AUDIO_HEAD, &[sc.codebook_size, w], 0.5, &mut rng);
                    name
                })
                .collect(),
            blocks: (0..config.head_layers)
                .map(|i| {
                    TransformerBlock::init(
                        s,
                        &format!("head.block{i}"),
                        GROUP_AUDIO_HEAD,
                        w,
                        config.head_heads,
                        2 * w,
                        true,
                        &mut rng,
                    )
                })
                .collect(),
            outputs: (0..sc.depth)
                .map(|i| Linear::init(s, &format!("head.out{i}"), GROUP_AUDIO_HEAD, w, sc.codebook_size, &mut rng))
                .collect(),
        };

        let visual_encoder = Linear::init(s, "visual.patch", GROUP_VISUAL_ENCODER, config.patch_dim, config.visual_dim, &mut rng);
        let projector = VisualProjector::init(
            s,
            GROUP_VISUAL_PROJECTOR,
            config.visual_dim,
            config.projector_hidden,
            d,
            &mut rng,
        );
        for i in 0..sc.depth {
            s.insert_normal(
                &format!("tokenizer.codebook{i}"),
                GROUP_AUDIO_TOKENIZER,
                &[sc.codebook_size, config.tokenizer_dim],
                0.1,
                &mut rng,
            );
        }

        Self {
            config,
            params: std::mem::take(s),
            text_embed,
            audio_embed,
            switch_embed,
            blocks,
            final_ln,
            text_head,
            head,
            visual_encoder,
            projector,
        }
    }

    pub fn config(&self) -> &InterleaveConfig {
        &self.config
    }

    pub fn scheme(&self) -> &TokenScheme {
        &self.config.scheme
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Input embeddings `[N, d]` (before positions) on the graph.
    pub fn embed_graph(&self, g: &mut Graph, p: &Bound, items: &[Item]) -> Result<Var> {
        if items.is_empty() {
            return Err(invalid("cannot embed an empty sequence"));
        }
        let mut rows = Vec::with_capacity(items.len());
        for item in items {
            let row = match item {
                Item::Text(id) => g.gather(p.get(&self.text_embed)?, &[*id as usize])?,
                Item::Switch(kind) => {
                    let k = match kind {
                        SwitchKind::TextToAudio => 0,
                        SwitchKind::AudioToText => 1,
                    };
                    g.gather(p.get(&self.switch_embed)?, &[k])?
                }
                Item::Audio(frame) => {
                    let mut acc: Option<Var> = None;
                    for (table, &c) in self.audio_embed.iter().zip(&frame.codes) {
                        let r = g.gather(p.get(table)?, &[c])?;
                        acc = Some(match acc {
                            None => r,
                            Some(a) => g.add(a, r)?,
                        });
                    }
                    acc.ok_or_else(|| invalid("audio frame without codes"))?
                }
            };
            rows.push(row);
        }
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            g.concat(&rows, 0)
        }
    }

    /// Embeddings of a validated sequence, one row per item.
    pub fn embed(&self, seq: &InterleavedSequence) -> Result<Tensor> {
        if seq.scheme() != self.scheme() {
            return Err(invalid("sequence uses a different token scheme"));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let e = self.embed_graph(&mut g, &p, seq.items())?;
        Ok(g.value(e).clone())
    }

    /// Causal backbone over input rows `[N, d]`; returns final hidden states.
    pub fn backbone_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.value(x).shape()[0];
        let pos = g.constant(sinusoidal_positions(n, self.config.d_model));
        let mut h = g.add(x, pos)?;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        self.final_ln.forward(g, p, h)
    }

    pub fn text_logits_graph(&self, g: &mut Graph, p: &Bound, hidden: Var) -> Result<Var> {
        self.text_head.forward(g, p, hidden)
    }

    /// Depth-head logits `[codes.len() + 1, K]`: row `i` is head `i` applied
    /// after attending over `[h, code_0 .. code_{i-1}]`.
    fn depth_graph(&self, g: &mut Graph, p: &Bound, h: Var, codes: &[usize]) -> Result<Var> {
        let depth = self.scheme().depth;
        if codes.len() >= depth {
            return Err(invalid(format!(
                "audio head called with {} previous codes; depth is {depth}",
                codes.len()
            )));
        }
        let mut rows = vec![self.head.input.forward(g, p, h)?];
        for (i, &c) in codes.iter().enumerate() {
            rows.push(g.gather(p.get(&self.head.code_embed[i])?, &[c])?);
        }
        let x = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
        let n = rows.len();
        let pos = g.constant(sinusoidal_positions(n, self.config.head_width));
        let mut z = g.add(x, pos)?;
        for b in &self.head.blocks {
            z = b.forward(g, p, z)?;
        }
        let mut outs = Vec::with_capacity(n);
        for i in 0..n {
            let r = g.slice_rows(z, i, 1)?;
            outs.push(self.head.outputs[i].forward(g, p, r)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat(&outs, 0)
        }
    }

    /// Logits over the `K` codes of layer `prev_codes.len()` for hidden state
    /// `h` (`[d]` or `[1, d]`).
    pub fn audio_head_forward(&self, h: &Tensor, prev_codes: &[usize]) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        if h.numel() != d {
            return Err(invalid(format!("hidden state has {} values, expected {d}", h.numel())));
        }
        if let Some(c) = prev_codes.iter().find(|&&c| c >= self.scheme().codebook_size) {
            return Err(invalid(format!("previous code {c} out of range")));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let hv = g.constant(h.clone().reshape(vec![1, d])?);
        let l = self.depth_graph(&mut g, &p, hv, prev_codes)?;
        let k = self.scheme().codebook_size;
        let all = g.value(l).data();
        Ok(all[all.len() - k..].to_vec())
    }

    /// All eight layers' logits in one teacher-forced pass, `[depth, K]`.
    pub fn audio_head_teacher_forced(&self, h: &Tensor, frame: &CodeFrame) -> Result<Tensor> {
        let depth = self.scheme().depth;
        if frame.depth() != depth {
            return Err(invalid("code frame depth does not match the scheme"));
        }
        let d = self.config.d_model;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let hv = g.constant(h.clone().reshape(vec![1, d])?);
        let l = self.depth_graph(&mut g, &p, hv, &frame.codes[..depth - 1])?;
        Ok(g.value(l).clone())
    }

    /// Teacher-forced depth cross-entropy for one frame on the graph.
    fn frame_loss(&self, g: &mut Graph, p: &Bound, h: Var, frame: &CodeFrame) -> Result<Var> {
        let depth = self.scheme().depth;
        let logits = self.depth_graph(g, p, h, &frame.codes[..depth - 1])?;
        g.cross_entropy(logits, &frame.codes)
    }

    /// Mean next-item loss over a sequence, optionally after a prefix of
    /// extra input rows (e.g. projected visual tokens). Text-side targets
    /// (text, BOS/EOS, switches) use the text head; audio frames use the
    /// depth head.
    pub fn sequence_loss_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        items: &[Item],
        prefix: Option<Var>,
    ) -> Result<SequenceLoss> {
        if items.len() < 2 {
            return Err(invalid("sequence loss needs at least two items"));
        }
        let e = self.embed_graph(g, p, items)?;
        let (x, offset) = match prefix {
            Some(pre) => {
                let n = g.value(pre).shape()[0];
                (g.concat(&[pre, e], 0)?, n)
            }
            None => (e, 0),
        };
        let hidden = self.backbone_graph(g, p, x)?;
        let sc = *self.scheme();
        let mut text_rows = Vec::new();
        let mut text_targets = Vec::new();
        let mut audio_terms = Vec::new();
        for (i, next) in items.iter().enumerate().skip(1) {
            let row = offset + i - 1;
            match next {
                Item::Text(id) => {
                    text_rows.push(row);
                    text_targets.push(*id as usize);
                }
                Item::Switch(kind) => {
                    text_rows.push(row);
                    text_targets.push(sc.switch_id(*kind) as usize);
                }
                Item::Audio(frame) => {
                    let h = g.slice_rows(hidden, row, 1)?;
                    audio_terms.push(self.frame_loss(g, p, h, frame)?);
                }
            }
        }
        let text = if text_rows.is_empty() {
            None
        } else {
            let logits = self.text_logits_graph(g, p, hidden)?;
            let picked = g.gather(logits, &text_rows)?;
            Some(g.cross_entropy(picked, &text_targets)?)
        };
        let audio = match audio_terms.split_first() {
            None => None,
            Some((first, rest)) => {
                let mut acc = *first;
                for t in rest {
                    acc = g.add(acc, *t)?;
                }
                Some(g.scale(acc, 1.0 / audio_terms.len() as f64)?)
            }
        };
        let n_text = text_rows.len() as f64;
        let n_audio = audio_terms.len() as f64;
        let total = match (text, audio) {
            (Some(t), None) => t,
            (None, Some(a)) => a,
            (Some(t), Some(a)) => {
                let t = g.scale(t, n_text / (n_text + n_audio))?;
                let a = g.scale(a, n_audio / (n_text + n_audio))?;
                g.add(t, a)?
            }
            (None, None) => unreachable!("at least one target"),
        };
        Ok(SequenceLoss { total, text, audio })
    }

    /// Visual tokens `[(H/2)(W/2), d]` for raw patches `[H*W, patch_dim]`.
    pub fn visual_tokens_graph(&self, g: &mut Graph, p: &Bound, patches: &Tensor, h: usize, w: usize) -> Result<Var> {
        if !h.is_multiple_of(2) || !w.is_multiple_of(2) || patches.shape() != [h * w, self.config.patch_dim] {
            return Err(invalid(format!(
                "patch grid {h}x{w} with shape {:?} cannot be merged 2x2",
                patches.shape()
            )));
        }
        let x = g.constant(patches.clone());
        let f = self.visual_encoder.forward(g, p, x)?;
        let mut order = Vec::with_capacity(h * w);
        for r in (0..h).step_by(2) {
            for c in (0..w).step_by(2) {
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    order.push((r + dr) * w + c + dc);
                }
            }
        }
        let perm = g.gather(f, &order)?;
        let merged = g.reshape(perm, &[h * w / 4, 4 * self.config.visual_dim])?;
        self.projector.forward_merged(g, p, merged)
    }

    /// Final hidden states `[N, d]` of a sequence.
    pub fn hidden_states(&self, items: &[Item]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let e = self.embed_graph(&mut g, &p, items)?;
        let h = self.backbone_graph(&mut g, &p, e)?;
        Ok(g.value(h).clone())
    }

    /// Autoregressive interleaved generation. Switches are injected by the
    /// run-length policy; the stream never ends inside an audio span.
    pub fn generate(
        &self,
        prompt: &InterleavedSequence,
        policy: &GenerationPolicy,
    ) -> Result<(InterleavedSequence, GenerationStats)> {
        if policy.text_run == 0 || policy.audio_run == 0 {
            return Err(invalid("generation policy needs positive text and audio runs"));
        }
        if !(policy.temperature >= 0.0 && policy.temperature.is_finite()) {
            return Err(invalid("temperature must be finite and >= 0"));
        }
        if prompt.is_empty() {
            return Err(invalid("generation needs a nonempty prompt"));
        }
        let sc = *self.scheme();
        let mut rng = SplitMix64::new(policy.seed);
        let mut items = prompt.items().to_vec();
        let mut stats = GenerationStats::default();
        if items.last() == Some(&Item::Text(sc.eos())) {
            return Ok((prompt.clone(), stats));
        }
        let mut audio_mode = false;
        let mut run = 0usize;
        for produced in 0..policy.max_len {
            let remaining = policy.max_len - produced;
            if audio_mode {
                if run >= policy.audio_run || remaining < 2 {
                    items.push(Item::Switch(SwitchKind::AudioToText));
                    audio_mode = false;
                    run = 0;
                    continue;
                }
                let hidden = self.hidden_states(&items)?;
                let last = Tensor::from_vec(hidden.row(hidden.shape()[0] - 1).to_vec());
                let mut codes = Vec::with_capacity(sc.depth);
                for _ in 0..sc.depth {
                    let logits = self.audio_head_forward(&last, &codes)?;
                    stats.head_calls += 1;
                    codes.push(pick(&logits, policy.temperature, &mut rng));
                }
                items.push(Item::Audio(CodeFrame::new(codes)));
                stats.audio_frames += 1;
                run += 1;
            } else {
                if run >= policy.text_run && remaining >= 2 {
                    items.push(Item::Switch(SwitchKind::TextToAudio));
                    audio_mode = true;
                    run = 0;
                    continue;
                }
                let hidden = self.hidden_states(&items)?;
                let n = hidden.shape()[0];
                let mut g = Graph::new();
                let p = self.params.bind(&mut g);
                let hv = g.constant(Tensor::new(vec![1, self.config.d_model], hidden.row(n - 1).to_vec())?);
                let lv = self.text_logits_graph(&mut g, &p, hv)?;
                let mut logits = g.value(lv).data().to_vec();
                logits[sc.bos() as usize] = f64::NEG_INFINITY;
                logits[sc.text_to_audio() as usize] = f64::NEG_INFINITY;
                logits[sc.audio_to_text() as usize] = f64::NEG_INFINITY;
                if !policy.stop_on_eos {
                    logits[sc.eos() as usize] = f64::NEG_INFINITY;
                }
                let id = pick(&logits, policy.temperature, &mut rng) as u32;
                items.push(Item::Text(id));
                if id == sc.eos() {
                    break;
                }
                run += 1;
            }
        }
        let seq = InterleavedSequence::new(sc, items)
            .map_err(|v| invalid(format!("generation produced an invalid stream: {v}")))?;
        Ok((seq, stats))
    }
}

/// Greedy (lowest index on ties) or temperature sampling over logits.
fn pick(logits: &[f64], temperature: f64, rng: &mut SplitMix64) -> usize {
    if temperature == 0.0 {
        return logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|v| ((v - m) / temperature).exp()).collect();
    rng.categorical(&w)
}
