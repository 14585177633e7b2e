use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradStore, ParamId};
use crate::nn::{ParamGroup, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrPolicy {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// `None`: 10 epochs when `batch_size ≥ 1024`, otherwise none.
    pub warmup_epochs: Option<usize>,
    pub predictor_lr_policy: LrPolicy,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            batch_size: 512,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
            warmup_epochs: None,
            predictor_lr_policy: LrPolicy::Cosine,
        }
    }
}

impl OptimizerConfig {
    /// `base_lr × batch_size / 256`.
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * (self.batch_size as f64 / 256.0)
    }

    pub fn resolved_warmup_epochs(&self) -> usize {
        self.warmup_epochs.unwrap_or(if self.batch_size >= 1024 { 10 } else { 0 })
    }

    /// Warmup length in steps, given the run length.
    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        let w = self.resolved_warmup_epochs() as u64;
        if w == 0 || self.epochs == 0 {
            return 0;
        }
        (total_steps * w / self.epochs as u64).min(total_steps)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(format!("optimizer.base_lr must be finite and non-negative, got {}", self.base_lr));
        }
        if self.batch_size < 2 {
            return Err("optimizer.batch_size must be at least 2 (batch norm)".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("optimizer.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return Err("optimizer.weight_decay must be non-negative".into());
        }
        if self.epochs == 0 {
            return Err("optimizer.epochs must be positive".into());
        }
        if self.resolved_warmup_epochs() > self.epochs {
            return Err("optimizer.warmup_epochs exceeds optimizer.epochs".into());
        }
        Ok(())
    }
}

/// Encoder lr at `step` of `total_steps`: linear warmup from 0, then
/// `effective_lr · ½(1 + cos(π · progress))` over the remaining steps.
pub fn lr_at(step: u64, cfg: &OptimizerConfig, total_steps: u64) -> f64 {
    let lr = cfg.effective_lr();
    let warm = cfg.warmup_steps(total_steps);
    if step < warm {
        return lr * step as f64 / warm as f64;
    }
    let span = total_steps.saturating_sub(warm).max(1);
    let progress = (step - warm) as f64 / span as f64;
    lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Predictor lr: the encoder schedule, or a constant `effective_lr`.
pub fn predictor_lr_at(step: u64, cfg: &OptimizerConfig, total_steps: u64) -> f64 {
    match cfg.predictor_lr_policy {
        LrPolicy::Cosine => lr_at(step, cfg, total_steps),
        LrPolicy::Constant => cfg.effective_lr(),
    }
}

/// Per-group learning rates for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupLr {
    pub encoder: f64,
    pub predictor: f64,
}

impl GroupLr {
    pub fn uniform(lr: f64) -> Self {
        Self { encoder: lr, predictor: lr }
    }

    pub fn at(step: u64, cfg: &OptimizerConfig, total_steps: u64) -> Self {
        Self { encoder: lr_at(step, cfg, total_steps), predictor: predictor_lr_at(step, cfg, total_steps) }
    }

    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Predictor => self.predictor,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    /// Momentum buffer per parameter, created on first update.
    pub buffers: Vec<Option<Vec<f64>>>,
    pub step: u64,
}

/// SGD with momentum and coupled weight decay on every trainable parameter:
/// `g = grad + wd·θ; buf = μ·buf + g; θ -= lr·buf`. Parameters absent from
/// `grads` are treated as having zero gradient, so decay still applies.
pub fn sgd_step(
    store: &mut ParamStore,
    grads: &GradStore,
    state: &mut OptimizerState,
    lr: GroupLr,
    momentum: f64,
    weight_decay: f64,
) {
    state.buffers.resize(store.len(), None);
    for (id, p) in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        let ParamId(i) = id;
        let g = grads.get(id);
        if let Some(g) = g {
            debug_assert_eq!(g.shape(), p.value.shape());
        }
        let buf = state.buffers[i].get_or_insert_with(|| vec![0.0; p.value.numel()]);
        let rate = lr.for_group(p.group);
        for (j, (v, b)) in p.value.data_mut().iter_mut().zip(buf.iter_mut()).enumerate() {
            let gj = g.map_or(0.0, |g| g.data()[j]) + weight_decay * *v;
            *b = momentum * *b + gj;
            *v -= rate * *b;
        }
    }
    state.step += 1;
}
