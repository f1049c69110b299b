//! AdamW with decoupled weight decay and a per-epoch warmup schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Learning-rate shape after the warmup ramp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    /// Half-cosine from the base rate down to zero at `total_epochs`.
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub decay: Decay,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_epochs: 0,
            total_epochs: 1,
            decay: Decay::Cosine,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if self.total_epochs == 0 {
            return bad("total_epochs must be > 0");
        }
        if self.warmup_epochs > self.total_epochs {
            return bad("warmup_epochs must not exceed total_epochs");
        }
        Ok(())
    }

    /// Learning rate used throughout zero-based `epoch`.
    ///
    /// Warmup is a linear ramp `base·(epoch+1)/warmup`, so epoch 0 of a
    /// 10-epoch warmup runs at a tenth of the base rate.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = self.learning_rate;
        if epoch < self.warmup_epochs {
            return base * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        match self.decay {
            Decay::Constant => base,
            Decay::Cosine => {
                let span = self.total_epochs.saturating_sub(self.warmup_epochs);
                if span == 0 {
                    return 0.0;
                }
                let progress = ((epoch - self.warmup_epochs) as f64 / span as f64).min(1.0);
                base * 0.5 * (1.0 + (PI * progress).cos())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: OptimConfig,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamW {
            cfg,
            moments: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    /// Applies one update to every parameter using its current gradient and
    /// the schedule's rate for `epoch`. Returns the rate used.
    pub fn step(&mut self, store: &mut ParamStore, epoch: usize) -> Result<f64> {
        let lr = self.cfg.lr_at(epoch);
        let t = store.bump_step() as i32;
        let OptimConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            let grad = store.grad(&name)?.clone();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
            let value = store.value_mut(&name).expect("name from store");
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * *p);
            }
            value.check_finite(&name)?;
        }
        Ok(lr)
    }
}
