//! Adam with a step-wise exponential learning-rate schedule.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative decay applied every `decay_interval` steps.
    pub decay: f64,
    pub decay_interval: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.95,
            decay_interval: 100,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) || self.eps <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.decay_interval == 0 {
            return Err(Error::Config("decay interval must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, step: usize) -> f64 {
        self.learning_rate * self.decay.powi((step / self.decay_interval) as i32)
    }
}

/// Optimizer state for one parameter store. Frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
    step: usize,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParameterStore<T>) -> Result<Self> {
        cfg.validate()?;
        let m: Vec<ArrayD<T>> = store.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        Ok(Self {
            cfg,
            v: m.clone(),
            m,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_rate(&self) -> f64 {
        self.cfg.rate_at(self.step)
    }

    pub fn step(&mut self, store: &mut ParameterStore<T>, grads: &Gradients<T>) {
        let lr = self.cfg.rate_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = T::lit(1.0 - b1.powi(t));
        let c2 = T::lit(1.0 - b2.powi(t));
        let (b1, b2, eps, lr) = (T::lit(b1), T::lit(b2), T::lit(self.cfg.eps), T::lit(lr));
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let g = grads.get(id);
            Zip::from(store.value_mut(id))
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}
