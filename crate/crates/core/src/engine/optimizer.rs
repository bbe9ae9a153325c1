use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::objectives::ParamGroupSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Also average the moment buffers at every parameter sync.
    pub average_state: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Sgd, beta1: 0.9, beta2: 0.999, eps: 1e-8, average_state: false }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EngineError::Config("optimizer needs beta1, beta2 in [0, 1) and eps > 0".into()))
        }
    }
}

/// Per-rank optimizer buffers; empty for SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Self {
        let len = if cfg.kind == OptimizerKind::Adam { dim } else { 0 };
        Self { kind: cfg.kind, m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }

    pub fn has_buffers(&self) -> bool {
        !self.m.is_empty()
    }

    /// Moment buffers concatenated, for averaging.
    pub fn buffers(&self) -> Vec<f64> {
        let mut b = self.m.clone();
        b.extend_from_slice(&self.v);
        b
    }

    pub fn set_buffers(&mut self, buffers: &[f64]) {
        let (m, v) = buffers.split_at(self.m.len());
        self.m.copy_from_slice(m);
        self.v.copy_from_slice(v);
    }

    /// One update with per-group learning rates and weight decays.
    ///
    /// SGD applies `θ ← θ − η (g + wd θ)`; the decay term is skipped when
    /// `wd = 0` so the plain step is exact.
    pub fn apply(&mut self, cfg: &OptimizerConfig, params: &mut ParamGroupSet, grad: &[f64], lrs: &[f64], wds: &[f64]) {
        let layout = params.layout().clone();
        self.steps += 1;
        let theta = params.as_mut_slice();
        match self.kind {
            OptimizerKind::Sgd => {
                for g in 0..layout.num_groups() {
                    let (lr, wd) = (lrs[g], wds[g]);
                    for i in layout.range(g) {
                        if wd == 0.0 {
                            theta[i] -= lr * grad[i];
                        } else {
                            theta[i] -= lr * (grad[i] + wd * theta[i]);
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - cfg.beta1.powf(self.steps as f64);
                let c2 = 1.0 - cfg.beta2.powf(self.steps as f64);
                for g in 0..layout.num_groups() {
                    let (lr, wd) = (lrs[g], wds[g]);
                    for i in layout.range(g) {
                        self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
                        self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                        let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
                        theta[i] -= lr * (step + wd * theta[i]);
                    }
                }
            }
        }
    }
}
