//! Adam with decoupled weight decay and an optional linear learning-rate decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decay the learning rate linearly to zero over this many steps.
    pub linear_decay_steps: Option<u64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            linear_decay_steps: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0) {
            errs.push(format!("optimizer.lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errs.push("optimizer betas must lie in [0, 1)".to_string());
        }
        if !(self.eps > 0.0) {
            errs.push("optimizer.eps must be positive".to_string());
        }
        if !(self.weight_decay >= 0.0) {
            errs.push("optimizer.weight_decay must be non-negative".to_string());
        }
        if self.linear_decay_steps == Some(0) {
            errs.push("optimizer.linear_decay_steps must be positive".to_string());
        }
        errs
    }

    /// Learning rate applied at (1-based) step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.linear_decay_steps {
            Some(total) => self.lr * (1.0 - (step - 1) as f64 / total as f64).max(0.0),
            None => self.lr,
        }
    }
}

/// Optimizer state: per-parameter moments and the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return invalid(errs.join("; "));
        }
        Ok(Self {
            config,
            state: AdamState::default(),
        })
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        let step = self.state.step.checked_add(1).ok_or(Error::StepOverflow)?;
        let c = &self.config;
        let lr = c.lr_at(step);
        let bc1 = 1.0 - c.beta1.powf(step as f64);
        let bc2 = 1.0 - c.beta2.powf(step as f64);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else {
                continue;
            };
            if g.len() != p.len() {
                return shape_err("adam_step", format!("{name}: {} grads for {} values", g.len(), p.len()));
            }
            let m = self.state.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.state.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
                *w -= lr * (update + c.weight_decay * *w);
            }
        }
        self.state.step = step;
        Ok(())
    }
}
