use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment buffers plus the step counter. Learning rates can be overridden
/// per parameter group.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub config: AdamConfig,
    pub group_lr: BTreeMap<String, f64>,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn with_group_lr(mut self, group_lr: BTreeMap<String, f64>) -> Self {
        self.group_lr = group_lr;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate applied to parameters of `group`.
    pub fn lr_for(&self, group: &str) -> f64 {
        self.group_lr.get(group).copied().unwrap_or(self.config.lr)
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One bias-corrected Adam update of every trainable parameter in `params`.
/// Gradients are left in place; callers reset them.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if let Some((name, _)) = params
        .iter()
        .find(|(_, p)| p.tensor.requires_grad && p.tensor.grad.is_none())
    {
        return Err(invalid(format!("adam_step: trainable parameter {name:?} has no gradient")));
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        beta1, beta2, eps, ..
    } = state.config;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (name, p) in params.iter_mut() {
        if !p.tensor.requires_grad {
            continue;
        }
        let lr = state.group_lr.get(&p.group).copied().unwrap_or(state.config.lr);
        let grad = p.tensor.grad.clone().expect("checked above");
        let n = grad.len();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        for (((w, g), mi), vi) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(value: f64, grad: Option<f64>, trainable: bool) -> ParamStore {
        let mut s = ParamStore::new();
        let mut t = Tensor::from_vec(vec![value]).with_requires_grad(trainable);
        t.grad = grad.map(|g| vec![g]);
        s.insert("p", "g", t);
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = lr * g / (|g| + eps) = 0.1 / (1 + 1e-8).
        let mut s = store(1.0, Some(1.0), true);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        adam_step(&mut s, &mut st).unwrap();
        let p = s.get("p").unwrap().data()[0];
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p - expected).abs() < 1e-15, "{p}");
        assert_eq!(st.step_count(), 1);
        assert_eq!(s.get("p").unwrap().grad.as_deref(), Some(&[1.0][..]));
    }

    #[test]
    fn zero_grad_leaves_param() {
        let mut s = store(0.7, Some(0.0), true);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.get("p").unwrap().data()[0], 0.7);
    }

    #[test]
    fn frozen_param_is_untouched() {
        let mut s = store(0.3, Some(5.0), false);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.get("p").unwrap().data()[0].to_bits(), 0.3f64.to_bits());
    }

    #[test]
    fn missing_grad_is_error() {
        let mut s = store(0.3, None, true);
        let mut st = AdamState::default();
        assert!(adam_step(&mut s, &mut st).is_err());
    }

    #[test]
    fn group_lr_is_routed() {
        let mut s = store(1.0, Some(1.0), true);
        let mut st = AdamState::new(AdamConfig::with_lr(0.5))
            .with_group_lr([("g".to_string(), 0.01)].into_iter().collect());
        adam_step(&mut s, &mut st).unwrap();
        let p = s.get("p").unwrap().data()[0];
        assert!((1.0 - p - 0.01).abs() < 1e-9, "{p}");
    }
}
