//! Conditional flow matching over normalized Mel spectrograms.
//!
//! Interpolant `x_t = (1 - (1 - σ) t) x0 + t x1` with target velocity
//! `u = x1 - (1 - σ) x0`; sampling integrates the learned field with forward
//! Euler from `x0 ~ N(0, I)`.
//!
//! [`VectorFieldNet`] predicts the clean sample and converts it to a velocity,
//! `v = c(t) (F(x_t, t, cond) - (1 - σ) x_t)` with
//! `c(t) = 1 / max(1 - (1 - σ) t, τ)`. When `F` equals `x1` this is exactly the
//! conditional field for every `t` below `1 - τ`, so Euler grids of up to
//! `1 / τ` steps stay in the exact region.

use std::path::Path;

use crate::codec::{denormalize_mel, AudioTokenSeq, Codec, DOWNSAMPLE};
use crate::error::{invalid, Error, Result};
use crate::numerics::nn::{time_embedding, Conv1d, Linear};
use crate::numerics::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Bound, Graph, ParamStore,
    SplitMix64, Tensor, Var,
};
use crate::signal::{griffin_lim, MelSpectrogram, Waveform};

pub const FLOW_GROUP: &str = "flow";
pub const TIME_DIM: usize = 32;
pub const DEFAULT_GL_ITERS: usize = 32;
/// Floor of `1 - (1 - σ) t` in the velocity conversion.
pub const VELOCITY_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfmConfig {
    pub sigma_min: f64,
    pub mid_blocks: usize,
    pub euler_steps: usize,
    pub channels: usize,
}

impl Default for CfmConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-4,
            mid_blocks: 2,
            euler_steps: 10,
            channels: 64,
        }
    }
}

impl CfmConfig {
    /// Full-size middle stack.
    pub fn full() -> Self {
        Self {
            mid_blocks: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma_min) {
            return Err(Error::Config(format!("sigma_min {} outside [0, 1)", self.sigma_min)));
        }
        if self.euler_steps == 0 {
            return Err(Error::Config("euler_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// `x_t` for the interpolant.
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64, sigma_min: f64) -> Result<Tensor> {
    if x0.shape() != x1.shape() {
        return Err(Error::Shape {
            op: "interpolate",
            lhs: x0.shape().to_vec(),
            rhs: x1.shape().to_vec(),
        });
    }
    let a = 1.0 - (1.0 - sigma_min) * t;
    let data = x0.data().iter().zip(x1.data()).map(|(p, q)| a * p + t * q).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Conditional target velocity `x1 - (1 - σ) x0`.
pub fn target_velocity(x0: &Tensor, x1: &Tensor, sigma_min: f64) -> Result<Tensor> {
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(p, q)| q - (1.0 - sigma_min) * p)
        .collect();
    Tensor::new(x1.shape().to_vec(), data)
}

/// A time-dependent vector field over `[n_mels, T]` states.
pub trait VectorField {
    fn velocity(&self, x: &Tensor, t: f64, cond: &Tensor) -> Result<Tensor>;
}

/// Draws `(t, x0)` for one loss sample.
fn draw(shape: &[usize], seed: u64) -> (f64, Tensor) {
    let mut rng = SplitMix64::new(seed);
    let t = rng.next_f64();
    let n = shape.iter().product();
    let x0 = Tensor::new(shape.to_vec(), rng.normal_vec(n, 1.0)).expect("shape");
    (t, x0)
}

/// `mean((v(x_t, t, cond) - u)^2)` for one seeded draw of `t` and `x0`.
pub fn cfm_loss<F: VectorField + ?Sized>(
    field: &F,
    x1: &Tensor,
    cond: &Tensor,
    sigma_min: f64,
    seed: u64,
) -> Result<f64> {
    let (t, x0) = draw(x1.shape(), seed);
    let xt = interpolate(&x0, x1, t, sigma_min)?;
    let u = target_velocity(&x0, x1, sigma_min)?;
    let v = field.velocity(&xt, t, cond)?;
    if v.shape() != u.shape() {
        return Err(Error::Shape {
            op: "cfm_loss",
            lhs: v.shape().to_vec(),
            rhs: u.shape().to_vec(),
        });
    }
    Ok(v.data().iter().zip(u.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / u.numel() as f64)
}

/// Forward Euler from seeded Gaussian noise of `shape`.
pub fn euler_sample<F: VectorField + ?Sized>(
    field: &F,
    cond: &Tensor,
    shape: &[usize],
    steps: usize,
    seed: u64,
) -> Result<Tensor> {
    let n = shape.iter().product();
    let x0 = Tensor::new(shape.to_vec(), SplitMix64::new(seed).normal_vec(n, 1.0))?;
    euler_from(field, cond, x0, steps)
}

/// Forward Euler from a given start state.
pub fn euler_from<F: VectorField + ?Sized>(field: &F, cond: &Tensor, x0: Tensor, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(invalid("euler_sample needs at least one step"));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for k in 0..steps {
        let v = field.velocity(&x, k as f64 / steps as f64, cond)?;
        if v.shape() != x.shape() {
            return Err(Error::Shape {
                op: "euler_sample",
                lhs: v.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        x.data_mut().iter_mut().zip(v.data()).for_each(|(a, b)| *a += dt * b);
    }
    Ok(x)
}

/// Feature-wise affine modulation from the time embedding.
#[derive(Debug, Clone)]
struct Film {
    proj: Linear,
    channels: usize,
}

impl Film {
    fn init(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut SplitMix64) -> Self {
        Self {
            proj: Linear::init_scaled(store, prefix, FLOW_GROUP, TIME_DIM, 2 * channels, 0.1, rng),
            channels,
        }
    }

    /// `h * (1 + γ) + β` with `(γ, β)` projected from `temb[1, TIME_DIM]`.
    fn forward(&self, g: &mut Graph, p: &Bound, h: Var, temb: Var) -> Result<Var> {
        let gb = self.proj.forward(g, p, temb)?;
        let gamma = g.slice_cols(gb, 0, self.channels)?;
        let beta = g.slice_cols(gb, self.channels, self.channels)?;
        let gamma = g.reshape(gamma, &[self.channels])?;
        let beta = g.reshape(beta, &[self.channels])?;
        let one = g.constant(Tensor::full(vec![self.channels], 1.0));
        let scale = g.add(gamma, one)?;
        let h = g.mul_col(h, scale)?;
        g.add_col(h, beta)
    }
}

/// Small U-Net: one stride-2 down block, `mid_blocks` residual blocks at half
/// resolution, one ×2 up block with a skip connection. Every block is
/// modulated by the time embedding.
#[derive(Debug, Clone)]
pub struct VectorFieldNet {
    config: CfmConfig,
    n_mels: usize,
    cond_dim: usize,
    params: ParamStore,
    time: (Linear, Linear),
    input: Conv1d,
    down: (Conv1d, Film),
    mids: Vec<(Conv1d, Film)>,
    up: (Conv1d, Film),
    output: Conv1d,
}

impl VectorFieldNet {
    pub fn new(config: CfmConfig, n_mels: usize, cond_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::derive(seed, 0xF10E);
        let s = &mut ParamStore::new();
        let c = config.channels;
        let g = FLOW_GROUP;
        let time = (
            Linear::init(s, "flow.time1", g, TIME_DIM, TIME_DIM, &mut rng),
            Linear::init(s, "flow.time2", g, TIME_DIM, TIME_DIM, &mut rng),
        );
        let input = Conv1d::init(s, "flow.in", g, n_mels + cond_dim, c, 3, 1, 1.0, &mut rng);
        let down = (
            Conv1d::init(s, "flow.down", g, c, c, 3, 2, 1.0, &mut rng),
            Film::init(s, "flow.down.film", c, &mut rng),
        );
        let mids = (0..config.mid_blocks)
            .map(|i| {
                (
                    Conv1d::init(s, &format!("flow.mid{i}"), g, c, c, 3, 1, 0.5, &mut rng),
                    Film::init(s, &format!("flow.mid{i}.film"), c, &mut rng),
                )
            })
            .collect();
        let up = (
            Conv1d::init(s, "flow.up", g, 2 * c, c, 3, 1, 1.0, &mut rng),
            Film::init(s, "flow.up.film", c, &mut rng),
        );
        let output = Conv1d::init(s, "flow.out", g, c, n_mels, 3, 1, 1.0, &mut rng);
        Ok(Self {
            config,
            n_mels,
            cond_dim,
            params: std::mem::take(s),
            time,
            input,
            down,
            mids,
            up,
            output,
        })
    }

    pub fn config(&self) -> &CfmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Velocity for `x[n_mels, T]` (T even) at time `t` given `cond[cond_dim, T]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, t: f64, cond: Var) -> Result<Var> {
        let (_, tx) = g.value(x).dims2()?;
        let (_, tc) = g.value(cond).dims2()?;
        if tx % 2 != 0 || tx != tc {
            return Err(invalid(format!(
                "flow net needs matching even lengths, got state {tx} and cond {tc}"
            )));
        }
        let te = g.constant(time_embedding(t, TIME_DIM));
        let te = self.time.0.forward(g, p, te)?;
        let te = g.gelu(te)?;
        let temb = self.time.1.forward(g, p, te)?;

        let xin = g.concat(&[x, cond], 0)?;
        let skip = self.input.forward(g, p, xin)?;
        let a = g.gelu(skip)?;
        let h = self.down.0.forward(g, p, a)?;
        let mut h = self.down.1.forward(g, p, h, temb)?;
        for (conv, film) in &self.mids {
            let m = film.forward(g, p, h, temb)?;
            let m = g.gelu(m)?;
            let m = conv.forward(g, p, m)?;
            h = g.add(h, m)?;
        }
        let u = g.upsample(h, 2)?;
        let u = g.concat(&[u, skip], 0)?;
        let u = g.gelu(u)?;
        let u = self.up.0.forward(g, p, u)?;
        let u = self.up.1.forward(g, p, u, temb)?;
        let u = g.gelu(u)?;
        let f = self.output.forward(g, p, u)?;
        let keep = 1.0 - self.config.sigma_min;
        let xs = g.scale(x, keep)?;
        let d = g.sub(f, xs)?;
        g.scale(d, 1.0 / (1.0 - keep * t).max(VELOCITY_FLOOR))
    }

    /// Graph form of the loss for one seeded draw.
    pub fn loss_graph(&self, g: &mut Graph, p: &Bound, x1: &Tensor, cond: &Tensor, seed: u64) -> Result<Var> {
        let (t, x0) = draw(x1.shape(), seed);
        let xt = g.constant(interpolate(&x0, x1, t, self.config.sigma_min)?);
        let u = g.constant(target_velocity(&x0, x1, self.config.sigma_min)?);
        let c = g.constant(cond.clone());
        let v = self.forward(g, p, xt, t, c)?;
        g.mse_loss(v, u)
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let mut e = self.params.entries();
        let c = self.config;
        e.push((
            "flow.config".into(),
            Tensor::from_vec(vec![
                c.sigma_min,
                c.mid_blocks as f64,
                c.euler_steps as f64,
                c.channels as f64,
                self.n_mels as f64,
                self.cond_dim as f64,
            ]),
        ));
        e
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let cfg = entries
            .iter()
            .find(|(n, _)| n == "flow.config")
            .ok_or_else(|| Error::Checkpoint("missing flow.config entry".into()))?;
        let d = cfg.1.data();
        if d.len() != 6 {
            return Err(Error::Checkpoint("flow.config has the wrong length".into()));
        }
        let config = CfmConfig {
            sigma_min: d[0],
            mid_blocks: d[1] as usize,
            euler_steps: d[2] as usize,
            channels: d[3] as usize,
        };
        let mut net = Self::new(config, d[4] as usize, d[5] as usize, 0)?;
        let loaded = net.params.load_entries(entries)?;
        if loaded != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "flow checkpoint holds {loaded} of {} parameters",
                net.params.len()
            )));
        }
        Ok(net)
    }
}

impl VectorField for VectorFieldNet {
    fn velocity(&self, x: &Tensor, t: f64, cond: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        let v = self.forward(&mut g, &p, xv, t, cv)?;
        Ok(g.value(v).clone())
    }
}

/// Adam training loop state for a [`VectorFieldNet`].
#[derive(Debug, Clone)]
pub struct FlowTrainer {
    pub net: VectorFieldNet,
    adam: AdamState,
    seed: u64,
    step: u64,
}

impl FlowTrainer {
    pub fn new(net: VectorFieldNet, lr: f64, seed: u64) -> Self {
        Self {
            net,
            adam: AdamState::new(AdamConfig::with_lr(lr)),
            seed,
            step: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.config.lr = lr;
    }

    /// `steps` Adam steps with the learning rate cosine-annealed from `lr`
    /// down to `lr / 10`. Returns the per-step losses.
    pub fn train(&mut self, pairs: &[(Tensor, Tensor)], steps: usize, draws: usize, lr: f64) -> Result<Vec<f64>> {
        (0..steps)
            .map(|k| {
                let frac = k as f64 / steps.max(1) as f64;
                self.set_lr(lr * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * frac).cos())));
                self.step(pairs, draws)
            })
            .collect()
    }

    /// One Adam step on the mean loss over `draws` seeded samples per pair.
    pub fn step(&mut self, pairs: &[(Tensor, Tensor)], draws: usize) -> Result<f64> {
        if pairs.is_empty() || draws == 0 {
            return Err(invalid("flow training needs data and at least one draw"));
        }
        let mut g = Graph::new();
        let p = self.net.params.bind(&mut g);
        let mut terms = Vec::new();
        for (i, (x1, cond)) in pairs.iter().enumerate() {
            for d in 0..draws {
                let seed = SplitMix64::derive(self.seed, (self.step << 24) | ((i as u64) << 8) | d as u64).next_u64();
                terms.push(self.net.loss_graph(&mut g, &p, x1, cond, seed)?);
            }
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = g.add(total, *t)?;
        }
        let total = g.scale(total, 1.0 / terms.len() as f64)?;
        let value = g.value(total).item()?;
        g.backward(total)?;
        self.net.params.zero_grads();
        self.net.params.pull_grads(&g, &p);
        adam_step(&mut self.net.params, &mut self.adam)?;
        self.net.params.zero_grads();
        self.step += 1;
        Ok(value)
    }
}

/// Conditioning `[dim, 8N]`: each token vector repeated for its Mel frames.
pub fn token_condition(codec: &Codec, tokens: &AudioTokenSeq) -> Result<Tensor> {
    let q = codec.token_vectors(tokens)?;
    let (d, n) = q.dims2()?;
    let mut out = Vec::with_capacity(d * n * DOWNSAMPLE);
    for c in 0..d {
        for t in 0..n {
            out.extend(std::iter::repeat_n(q.data()[c * n + t], DOWNSAMPLE));
        }
    }
    Tensor::new(vec![d, n * DOWNSAMPLE], out)
}

/// Token-to-waveform path: flow sampling conditioned on token vectors, then
/// Griffin-Lim.
#[derive(Debug, Clone)]
pub struct Refiner {
    pub codec: Codec,
    pub flow: VectorFieldNet,
    pub gl_iters: usize,
}

impl Refiner {
    pub fn new(codec: Codec, flow: VectorFieldNet) -> Result<Self> {
        if flow.cond_dim != codec.config().dim || flow.n_mels != codec.config().mel.n_mels {
            return Err(invalid("flow net and codec dimensions disagree"));
        }
        Ok(Self {
            codec,
            flow,
            gl_iters: DEFAULT_GL_ITERS,
        })
    }

    /// Loads a checkpoint holding both codec and flow entries.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Checkpoint(format!("{} not found", path.display())));
        }
        let entries = load_checkpoint(path)?;
        Self::new(Codec::from_entries(&entries)?, VectorFieldNet::from_entries(&entries)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut e = self.codec.entries();
        e.extend(self.flow.entries());
        save_checkpoint(path, &e)
    }

    pub fn refine_mel(&self, tokens: &AudioTokenSeq, steps: usize, seed: u64) -> Result<MelSpectrogram> {
        let cond = token_condition(&self.codec, tokens)?;
        let shape = [self.flow.n_mels, cond.shape()[1]];
        let y = euler_sample(&self.flow, &cond, &shape, steps, seed)?;
        let m = self.codec.config().mel;
        Ok(MelSpectrogram {
            n_mels: m.n_mels,
            n_fft: m.n_fft,
            hop_length: m.hop,
            sample_rate: m.sample_rate,
            frames: denormalize_mel(&y),
        })
    }

    pub fn refine(&self, tokens: &AudioTokenSeq, steps: usize, seed: u64) -> Result<Waveform> {
        griffin_lim(&self.refine_mel(tokens, steps, seed)?, self.gl_iters)
    }
}
