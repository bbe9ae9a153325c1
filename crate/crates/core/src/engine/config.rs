use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerConfig;
use super::EngineError;
use crate::collectives::ExecutionMode;
use crate::objectives::{Objective, ObjectiveConfig, StiffValleyConfig};
use crate::schedule::{AutoLrConfig, ChannelKind, ChannelSpec, HyperparamChannel, OneCycleConfig};

fn yes() -> bool {
    true
}

/// One-cycle parameters; the step count comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneCycleParams {
    pub eta_max: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub warmup_fraction: f64,
}

impl Default for OneCycleParams {
    fn default() -> Self {
        Self { eta_max: 0.0009, div_factor: 25.0, final_div_factor: 5.0, warmup_fraction: 0.3 }
    }
}

impl OneCycleParams {
    pub fn with_steps(&self, total_steps: u64) -> OneCycleConfig {
        OneCycleConfig {
            eta_max: self.eta_max,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
            warmup_fraction: self.warmup_fraction,
            total_steps,
        }
    }
}

/// Warm start from a checkpoint plus per-rank Gaussian noise.
///
/// Without an explicit `checkpoint` file the checkpoint is produced by
/// single-replica SGD from the cold start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmInitSettings {
    pub enabled: bool,
    pub nu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub pretrain_steps: u64,
    pub pretrain_lr: f64,
}

impl Default for WarmInitSettings {
    fn default() -> Self {
        Self { enabled: false, nu: 0.01, checkpoint: None, pretrain_steps: 100_000, pretrain_lr: 1e-4 }
    }
}

fn default_world_size() -> usize {
    8
}
fn default_total_steps() -> u64 {
    20_000
}
fn default_sync_interval() -> u64 {
    1_000
}
fn default_alpha() -> f64 {
    1.0 / 9.0
}
fn default_channels() -> Vec<ChannelSpec> {
    vec![ChannelSpec::named("lr")]
}
fn default_objective() -> ObjectiveConfig {
    ObjectiveConfig::StiffValley(StiffValleyConfig::default())
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_objective")]
    pub objective: ObjectiveConfig,
    #[serde(default = "default_world_size")]
    pub world_size: usize,
    #[serde(default = "default_total_steps")]
    pub total_steps: u64,
    #[serde(default = "default_sync_interval")]
    pub sync_interval: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Average parameters across ranks at every sync.
    #[serde(default = "yes")]
    pub averaging: bool,
    #[serde(default)]
    pub one_cycle: OneCycleParams,
    #[serde(default)]
    pub auto_lr: AutoLrConfig,
    #[serde(default)]
    pub warm_init: WarmInitSettings,
    #[serde(default = "default_channels")]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: ExecutionMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// A validated config together with the values derived from it.
#[derive(Debug)]
pub struct Plan {
    pub objective: Objective,
    pub one_cycle: OneCycleConfig,
    pub gamma: f64,
    pub warmup_steps: u64,
    /// Channels with identity permutations and the cold-start base.
    pub channels: Vec<HyperparamChannel>,
    /// Learning-rate channel driving each parameter group.
    pub lr_channel: Vec<usize>,
    /// Weight-decay channel for each parameter group, if any.
    pub wd_channel: Vec<Option<usize>>,
}

fn invalid(msg: String) -> EngineError {
    EngineError::Config(msg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<Plan, EngineError> {
        if self.world_size == 0 {
            return Err(invalid("world_size must be at least 1".into()));
        }
        if self.sync_interval == 0 {
            return Err(invalid("sync_interval must be at least 1".into()));
        }
        if self.total_steps == 0 {
            return Err(invalid("total_steps must be at least 1".into()));
        }
        if self.total_steps % self.sync_interval != 0 {
            return Err(invalid(format!(
                "total_steps ({}) must be a multiple of sync_interval ({}) so the run ends on a sync",
                self.total_steps, self.sync_interval
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.warm_init.enabled {
            let w = &self.warm_init;
            if !(w.nu.is_finite() && w.nu >= 0.0) {
                return Err(invalid(format!("warm_init.nu must be finite and >= 0, got {}", w.nu)));
            }
            if w.checkpoint.is_none() && !(w.pretrain_lr.is_finite() && w.pretrain_lr >= 0.0) {
                return Err(invalid("warm_init.pretrain_lr must be finite and >= 0".into()));
            }
        }
        self.optimizer.validate()?;

        let one_cycle = self.one_cycle.with_steps(self.total_steps);
        one_cycle.validate()?;
        let gamma = self.auto_lr.validate(
            self.total_steps,
            self.sync_interval,
            self.one_cycle.div_factor,
            self.one_cycle.final_div_factor,
        )?;
        let warmup_steps = self.auto_lr.warmup_steps(self.total_steps);

        let objective = Objective::new(&self.objective)?;
        let layout = objective.layout().clone();
        let initial_lr = one_cycle.eta_max / one_cycle.div_factor;
        let mut channels = Vec::with_capacity(self.channels.len());
        for spec in &self.channels {
            if channels.iter().any(|c: &HyperparamChannel| c.name == spec.name) {
                return Err(invalid(format!("channel `{}` is listed twice", spec.name)));
            }
            let ch = HyperparamChannel::new(spec, self.world_size, self.alpha, gamma, initial_lr)?;
            if let Some(g) = &ch.group {
                if layout.index_of(g).is_none() {
                    return Err(invalid(format!(
                        "channel `{}` names unknown parameter group `{g}` (groups: {})",
                        spec.name,
                        layout.names().join(", ")
                    )));
                }
            }
            channels.push(ch);
        }

        let find = |kind: ChannelKind, group: &str| {
            let specific = channels.iter().position(|c| c.kind == kind && c.group.as_deref() == Some(group));
            specific.or_else(|| channels.iter().position(|c| c.kind == kind && c.group.is_none()))
        };
        let mut lr_channel = Vec::new();
        let mut wd_channel = Vec::new();
        for name in layout.names() {
            lr_channel.push(find(ChannelKind::LearningRate, name).ok_or_else(|| {
                invalid(format!("parameter group `{name}` has no learning-rate channel (add `lr` or `lr:{name}`)"))
            })?);
            wd_channel.push(find(ChannelKind::WeightDecay, name));
        }

        Ok(Plan { objective, one_cycle, gamma, warmup_steps, channels, lr_channel, wd_channel })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::QuadraticConfig;

    fn quad() -> RunConfig {
        RunConfig {
            objective: ObjectiveConfig::Quadratic(QuadraticConfig {
                curvatures: vec![1.0, 2.0],
                noise: 0.0,
                init_scale: 1.0,
                groups: vec!["embedding".into(), "transformer".into()],
            }),
            total_steps: 100,
            sync_interval: 10,
            ..RunConfig::default()
        }
    }

    fn err(cfg: RunConfig) -> String {
        cfg.validate().unwrap_err().to_string()
    }

    #[test]
    fn defaults_validate() {
        let plan = RunConfig::default().validate().unwrap();
        assert_eq!(plan.warmup_steps, 2_000);
        assert_eq!(plan.lr_channel, vec![0, 0]);
        assert!(plan.gamma > 0.0 && plan.gamma < 1.0);
    }

    #[test]
    fn rejects_partial_final_interval() {
        let msg = err(RunConfig { total_steps: 105, ..quad() });
        assert!(msg.contains("multiple of sync_interval"), "{msg}");
    }

    #[test]
    fn rejects_bad_scalars() {
        assert!(err(RunConfig { alpha: -0.1, ..quad() }).contains("alpha"));
        assert!(err(RunConfig { world_size: 0, ..quad() }).contains("world_size"));
        let mut c = quad();
        c.one_cycle.final_div_factor = 1e4;
        assert!(err(c).contains("f_final"));
    }

    #[test]
    fn channel_coverage() {
        let mut c = quad();
        c.channels = vec![ChannelSpec::named("lr:embedding")];
        assert!(err(c.clone()).contains("`transformer` has no learning-rate channel"));
        c.channels.push(ChannelSpec::named("lr:transformer"));
        assert_eq!(c.validate().unwrap().lr_channel, vec![0, 1]);
        c.channels.push(ChannelSpec::named("lr:nope"));
        assert!(err(c).contains("unknown parameter group"));
        let mut d = quad();
        d.channels = vec![ChannelSpec::named("lr"), ChannelSpec::named("lr")];
        assert!(err(d).contains("twice"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"world_sise": 4}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"auto_lr": {"betta": 0.5}}"#).is_err());
    }
}
