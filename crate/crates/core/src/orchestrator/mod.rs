//! Staged training schedule: freeze masks, per-group learning rates,
//! data mixtures and sequence caps, plus the score normalization helper.

pub mod config;
mod data;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use config::KvConfig;
pub use data::{
    DataStream, SyntheticStream, TrainSample, GRID, SOURCES, SOURCE_AUDIO, SOURCE_IMAGE,
    SOURCE_IMAGE_AUDIO, SOURCE_TEXT, SOURCE_VIDEO, SOURCE_VIDEO_AUDIO,
};

use crate::datapipe::MixtureSpec;
use crate::error::{invalid, Error, Result};
use crate::interleave::{
    OmniModel, GROUP_AUDIO_EMBED, GROUP_AUDIO_HEAD, GROUP_LLM, GROUP_VISUAL_ENCODER,
    GROUP_VISUAL_PROJECTOR,
};
use crate::numerics::{adam_step, AdamConfig, AdamState, Fnv1a, Graph, ParamStore};

pub const FULL_MAX_SEQ_LEN: usize = 65_536;
pub const DESK_MAX_SEQ_LEN: usize = 512;
/// Sequence cap for stages that state none.
pub const DEFAULT_MAX_SEQ_LEN: usize = 4096;
/// Learning rate of the fine-tuning stages, which state none.
pub const SFT_LR: f64 = 1e-5;
pub const DESK_STEPS: usize = 20;
pub const FULL_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?}; expected desk or paper"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub name: String,
    pub trainable: BTreeSet<String>,
    pub lr_overrides: BTreeMap<String, f64>,
    pub mixture: MixtureSpec,
    pub max_seq_len: usize,
    pub steps: usize,
}

impl StageSpec {
    /// Checks the stage against the groups of a model registry.
    pub fn validate(&self, groups: &BTreeSet<String>) -> Result<()> {
        if let Some(g) = self
            .trainable
            .iter()
            .chain(self.lr_overrides.keys())
            .find(|g| !groups.contains(*g))
        {
            return Err(invalid(format!("stage {}: unknown parameter group {g:?}", self.name)));
        }
        if let Some(g) = self.trainable.iter().find(|g| !self.lr_overrides.contains_key(*g)) {
            return Err(invalid(format!("stage {}: trainable group {g:?} has no learning rate", self.name)));
        }
        if let Some((g, lr)) = self.lr_overrides.iter().find(|(_, lr)| !(**lr > 0.0 && lr.is_finite())) {
            return Err(invalid(format!("stage {}: learning rate {lr} for {g:?}", self.name)));
        }
        if self.max_seq_len == 0 {
            return Err(invalid(format!("stage {}: max_seq_len must be positive", self.name)));
        }
        Ok(())
    }
}

fn stage(
    name: &str,
    lrs: &[(&str, f64)],
    mixture: &[(&str, f64)],
    max_seq_len: usize,
    preset: Preset,
) -> StageSpec {
    let (max_seq_len, steps) = match preset {
        Preset::Paper => (max_seq_len, FULL_STEPS),
        Preset::Desk => (DESK_MAX_SEQ_LEN, DESK_STEPS),
    };
    StageSpec {
        name: name.to_string(),
        trainable: lrs.iter().map(|(g, _)| g.to_string()).collect(),
        lr_overrides: lrs.iter().map(|(g, lr)| (g.to_string(), *lr)).collect(),
        mixture: MixtureSpec::new(mixture.iter().copied()).expect("built-in mixture is valid"),
        max_seq_len,
        steps,
    }
}

/// The seven built-in stages in schedule order.
pub fn builtin_stages(preset: Preset) -> Vec<StageSpec> {
    let sft_total = 400e3 + 16e6 + 100e3 + 282e3 + 60e3;
    vec![
        stage("image-I", &[(GROUP_VISUAL_PROJECTOR, 1e-3)], &[(SOURCE_IMAGE, 1.0)], DEFAULT_MAX_SEQ_LEN, preset),
        stage(
            "image-II",
            &[(GROUP_LLM, 1e-5), (GROUP_VISUAL_PROJECTOR, 1e-5), (GROUP_VISUAL_ENCODER, 1e-6)],
            &[(SOURCE_IMAGE, 0.6), (SOURCE_TEXT, 0.4)],
            DEFAULT_MAX_SEQ_LEN,
            preset,
        ),
        stage(
            "audio-I",
            &[(GROUP_AUDIO_EMBED, 1e-4), (GROUP_AUDIO_HEAD, 1e-4)],
            &[(SOURCE_AUDIO, 1.0)],
            DEFAULT_MAX_SEQ_LEN,
            preset,
        ),
        stage(
            "audio-II",
            &[
                (GROUP_LLM, 1e-5),
                (GROUP_VISUAL_PROJECTOR, 1e-5),
                (GROUP_AUDIO_EMBED, 1e-5),
                (GROUP_AUDIO_HEAD, 1e-5),
            ],
            &[(SOURCE_AUDIO, 0.2), (SOURCE_IMAGE, 0.4), (SOURCE_TEXT, 0.4)],
            DEFAULT_MAX_SEQ_LEN,
            preset,
        ),
        stage(
            "omni",
            &[
                (GROUP_VISUAL_ENCODER, 4e-6),
                (GROUP_VISUAL_PROJECTOR, 4e-6),
                (GROUP_LLM, 4e-6),
                (GROUP_AUDIO_EMBED, 4e-6),
                (GROUP_AUDIO_HEAD, 4e-6),
            ],
            &[(SOURCE_IMAGE_AUDIO, 0.5), (SOURCE_VIDEO_AUDIO, 0.5)],
            FULL_MAX_SEQ_LEN,
            preset,
        ),
        stage(
            "4.1",
            &[
                (GROUP_VISUAL_ENCODER, SFT_LR),
                (GROUP_VISUAL_PROJECTOR, SFT_LR),
                (GROUP_LLM, SFT_LR),
                (GROUP_AUDIO_EMBED, SFT_LR),
            ],
            &[
                (SOURCE_TEXT, 400e3 / sft_total),
                (SOURCE_IMAGE, 16e6 / sft_total),
                (SOURCE_VIDEO, 100e3 / sft_total),
                (SOURCE_AUDIO, 282e3 / sft_total),
                (SOURCE_IMAGE_AUDIO, 60e3 / sft_total),
            ],
            FULL_MAX_SEQ_LEN,
            preset,
        ),
        stage(
            "4.2",
            &[(GROUP_AUDIO_HEAD, SFT_LR), (GROUP_AUDIO_EMBED, SFT_LR)],
            &[(SOURCE_AUDIO, 1.0)],
            FULL_MAX_SEQ_LEN,
            preset,
        ),
    ]
}

pub fn find_stage(name: &str, preset: Preset) -> Result<StageSpec> {
    builtin_stages(preset)
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| {
            let names: Vec<String> = builtin_stages(preset).into_iter().map(|s| s.name).collect();
            invalid(format!("unknown stage {name:?}; expected one of {}", names.join(", ")))
        })
}

/// Sets exactly the stage's trainable groups to trainable.
pub fn apply_freeze_mask(store: &mut ParamStore, spec: &StageSpec) -> Result<()> {
    spec.validate(&store.groups())?;
    store.set_all_trainable(false);
    for g in &spec.trainable {
        store.set_group_trainable(g, true);
    }
    Ok(())
}

/// Adam with the stage's per-group learning rates. Groups without an
/// override never reach the optimizer because they are frozen.
pub fn stage_optimizer(spec: &StageSpec) -> AdamState {
    AdamState::new(AdamConfig::default()).with_group_lr(spec.lr_overrides.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub source: String,
    pub seq_len: usize,
    pub losses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub stage: String,
    pub seed: u64,
    pub trainable: Vec<String>,
    pub checksums_before: BTreeMap<String, u64>,
    pub checksums_after: BTreeMap<String, u64>,
    pub steps: Vec<StepLog>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogLine<'a> {
    Start {
        stage: &'a str,
        seed: u64,
        trainable: &'a [String],
        checksums: &'a BTreeMap<String, u64>,
    },
    Step(&'a StepLog),
    End {
        checksums: &'a BTreeMap<String, u64>,
    },
}

impl RunLog {
    /// Frozen groups whose checksum changed during the run.
    pub fn frozen_violations(&self) -> Vec<String> {
        self.checksums_before
            .iter()
            .filter(|(g, c)| !self.trainable.contains(g) && self.checksums_after.get(*g) != Some(c))
            .map(|(g, _)| g.clone())
            .collect()
    }

    /// Header line, one line per step, then the closing checksums.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut lines = vec![serde_json::to_string(&LogLine::Start {
            stage: &self.stage,
            seed: self.seed,
            trainable: &self.trainable,
            checksums: &self.checksums_before,
        })?];
        for s in &self.steps {
            lines.push(serde_json::to_string(&LogLine::Step(s))?);
        }
        lines.push(serde_json::to_string(&LogLine::End {
            checksums: &self.checksums_after,
        })?);
        Ok(lines.join("\n") + "\n")
    }

    /// FNV-1a of the JSONL rendering.
    pub fn digest(&self) -> Result<u64> {
        let mut h = Fnv1a::new();
        h.write(self.to_jsonl()?.as_bytes());
        Ok(h.finish())
    }
}

/// One training step on `sample`; returns the loss components.
fn train_step(model: &mut OmniModel, adam: &mut AdamState, sample: &TrainSample, update: bool) -> Result<BTreeMap<String, f64>> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let (h, w) = (GRID, GRID);
    let mut visual = Vec::with_capacity(sample.frames.len());
    for f in &sample.frames {
        visual.push(model.visual_tokens_graph(&mut g, &p, f, h, w)?);
    }
    let prefix = match visual.len() {
        0 => None,
        1 => Some(visual[0]),
        _ => Some(g.concat(&visual, 0)?),
    };
    let loss = model.sequence_loss_graph(&mut g, &p, &sample.items, prefix)?;
    let mut out = BTreeMap::new();
    out.insert("total".to_string(), g.value(loss.total).item()?);
    if let Some(t) = loss.text {
        out.insert("text".to_string(), g.value(t).item()?);
    }
    if let Some(a) = loss.audio {
        out.insert("audio".to_string(), g.value(a).item()?);
    }
    if !out["total"].is_finite() {
        return Err(Error::NonFinite {
            op: "stage loss".into(),
            index: 0,
        });
    }
    if update {
        g.backward(loss.total)?;
        let store = model.params_mut();
        store.pull_grads(&g, &p);
        // Parameters the sample never touched get a zero gradient.
        for (_, param) in store.iter_mut() {
            if param.tensor.requires_grad && param.tensor.grad.is_none() {
                param.tensor.grad = Some(vec![0.0; param.tensor.numel()]);
            }
        }
        adam_step(store, adam)?;
        store.zero_grads();
    }
    Ok(out)
}

/// Runs `spec.steps` single-sample steps under the stage's freeze mask and
/// learning rates. All validation happens before the first step.
pub fn run_stage(model: &mut OmniModel, spec: &StageSpec, stream: &mut dyn DataStream, seed: u64) -> Result<RunLog> {
    spec.validate(&model.params().groups())?;
    let given: BTreeSet<String> = stream.sources().into_iter().collect();
    let wanted: BTreeSet<String> = spec.mixture.sources().map(str::to_string).collect();
    if given != wanted {
        return Err(invalid(format!(
            "stage {}: stream sources {given:?} do not match the mixture {wanted:?}",
            spec.name
        )));
    }
    apply_freeze_mask(model.params_mut(), spec)?;
    let mut adam = stage_optimizer(spec);
    let update = !spec.trainable.is_empty();
    let checksums_before = model.params().checksums();
    let mut steps = Vec::with_capacity(spec.steps);
    for step in 0..spec.steps {
        let sample = stream.next_sample()?;
        if sample.seq_len() > spec.max_seq_len {
            return Err(invalid(format!(
                "stage {}: sample of length {} exceeds max_seq_len {}",
                spec.name,
                sample.seq_len(),
                spec.max_seq_len
            )));
        }
        let losses = train_step(model, &mut adam, &sample, update)?;
        steps.push(StepLog {
            step,
            source: sample.source.clone(),
            seq_len: sample.seq_len(),
            losses,
        });
    }
    Ok(RunLog {
        stage: spec.name.clone(),
        seed,
        trainable: spec.trainable.iter().cloned().collect(),
        checksums_before,
        checksums_after: model.params().checksums(),
        steps,
    })
}

/// Runs a stage on the built-in synthetic stream seeded by `seed`.
pub fn run_stage_synthetic(model: &mut OmniModel, spec: &StageSpec, seed: u64) -> Result<RunLog> {
    spec.validate(&model.params().groups())?;
    let cfg = *model.config();
    let mut stream = SyntheticStream::new(&spec.mixture, cfg.scheme, cfg.patch_dim, spec.max_seq_len, seed)?;
    run_stage(model, spec, &mut stream, seed)
}

/// `(x - x_min + 10) / (x_max - x_min + 10)`.
pub fn normalize_score(x: f64, x_min: f64, x_max: f64) -> Result<f64> {
    if !(x.is_finite() && x_min.is_finite() && x_max.is_finite()) {
        return Err(invalid("scores must be finite"));
    }
    if x_max <= x_min {
        return Err(invalid(format!("x_max ({x_max}) must exceed x_min ({x_min})")));
    }
    if x < x_min || x > x_max {
        return Err(invalid(format!("score {x} outside [{x_min}, {x_max}]")));
    }
    Ok((x - x_min + 10.0) / (x_max - x_min + 10.0))
}
