//! Metrics CSV and run summaries.
//!
//! The CSV has one row per (step, rank, channel) with the fixed columns in
//! [`COLUMNS`]:
//!
//! | column | meaning |
//! |---|---|
//! | `step` | 1-based step |
//! | `rank` | rank index |
//! | `channel` | hyperparameter channel name |
//! | `value` | channel value the rank used at this step |
//! | `loss` | rank's loss at this step, clamped to `1e30` when non-finite |
//! | `sync` | 1 when the step ended with a sync |
//! | `controller` | `none`, `ran` or `skipped` |
//! | `rank_loss` | interval loss `L_r` fed to the controller |
//! | `weight` | softmax weight `w_r` |
//! | `delta` | hypergradient `Δ` of the channel |
//! | `velocity` | velocity after the update |
//! | `base` | base value after the update |
//!
//! The last five columns are filled on every row where the controller ran
//! or was skipped, and left empty otherwise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::HarnessError;
use crate::engine::{ControllerOutcome, RunOutput};

pub const COLUMNS: [&str; 12] =
    ["step", "rank", "channel", "value", "loss", "sync", "controller", "rank_loss", "weight", "delta", "velocity", "base"];

pub const LOSS_SENTINEL: f64 = 1e30;

pub fn clamp_loss(loss: f64) -> f64 {
    if loss.is_finite() && loss.abs() <= LOSS_SENTINEL {
        loss
    } else {
        LOSS_SENTINEL
    }
}

pub fn write_metrics<W: Write>(out: &RunOutput, writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    let syncs: BTreeMap<u64, _> = out.syncs.iter().map(|s| (s.step, s)).collect();
    let t = out.config.sync_interval;
    for row in &out.rows {
        let record = syncs.get(&row.step);
        let controller = match record.map(|s| s.outcome) {
            None => "none",
            Some(ControllerOutcome::Ran) => "ran",
            Some(ControllerOutcome::Skipped) => "skipped",
        };
        let is_sync = if row.step % t == 0 { "1" } else { "0" };
        let loss = clamp_loss(row.loss).to_string();
        for (c, name) in out.channel_names.iter().enumerate() {
            let mut fields = vec![
                row.step.to_string(),
                row.rank.to_string(),
                name.clone(),
                row.values[c].to_string(),
                loss.clone(),
                is_sync.to_owned(),
                controller.to_owned(),
            ];
            match record {
                Some(s) => {
                    let ch = &s.channels[c];
                    fields.extend([
                        s.rank_losses[row.rank].to_string(),
                        s.weights[row.rank].to_string(),
                        ch.delta.to_string(),
                        ch.velocity.to_string(),
                        ch.base.to_string(),
                    ]);
                }
                None => fields.extend(std::iter::repeat_n(String::new(), 5)),
            }
            w.write_record(&fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Flat key/value digest of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub name: String,
    pub preset: Option<String>,
    pub objective: String,
    /// Compact JSON of the objective config; runs are comparable only when
    /// this and `seed` match.
    pub objective_config: String,
    pub seed: u64,
    pub world_size: usize,
    pub total_steps: u64,
    pub sync_interval: u64,
    pub param_syncs: u64,
    pub gradient_reductions: u64,
    pub controller_syncs: usize,
    pub controller_skips: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub divergence_step: Option<u64>,
    pub final_base: Vec<(String, f64)>,
}

/// First step whose rank-mean loss is non-finite or above 10x the first
/// step's.
pub fn divergence_step(mean_losses: &[f64]) -> Option<u64> {
    let initial = *mean_losses.first()?;
    mean_losses.iter().position(|l| !l.is_finite() || *l > 10.0 * initial).map(|i| i as u64 + 1)
}

impl Summary {
    pub fn from_run(name: &str, preset: Option<&str>, out: &RunOutput) -> Self {
        let cfg = &out.config;
        let losses = out.mean_losses();
        let tail = &losses[losses.len().saturating_sub(cfg.sync_interval as usize)..];
        Self {
            name: name.to_owned(),
            preset: preset.map(str::to_owned),
            objective: cfg.objective.kind_name().to_owned(),
            objective_config: serde_json::to_string(&cfg.objective).expect("objective serializes"),
            seed: cfg.seed,
            world_size: cfg.world_size,
            total_steps: cfg.total_steps,
            sync_interval: cfg.sync_interval,
            param_syncs: out.param_syncs(),
            gradient_reductions: out.gradient_reductions(),
            controller_syncs: out.syncs.len(),
            controller_skips: out.syncs.iter().filter(|s| s.outcome == ControllerOutcome::Skipped).count(),
            initial_loss: losses.first().copied().unwrap_or(f64::NAN),
            final_loss: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            divergence_step: divergence_step(&losses),
            final_base: out.channel_names.iter().cloned().zip(out.final_bases()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("name={}", self.name),
            format!("preset={}", self.preset.as_deref().unwrap_or("none")),
            format!("objective={}", self.objective),
            format!("objective_config={}", self.objective_config),
            format!("seed={}", self.seed),
            format!("world_size={}", self.world_size),
            format!("total_steps={}", self.total_steps),
            format!("sync_interval={}", self.sync_interval),
            format!("param_syncs={}", self.param_syncs),
            format!("gradient_reductions={}", self.gradient_reductions),
            format!("controller_syncs={}", self.controller_syncs),
            format!("controller_skips={}", self.controller_skips),
            format!("initial_loss={}", self.initial_loss),
            format!("final_loss={}", self.final_loss),
            format!("divergence_step={}", self.divergence_step.map_or("none".into(), |s| s.to_string())),
        ];
        lines.extend(self.final_base.iter().map(|(c, v)| format!("final_base.{c}={v}")));
        lines.join("\n") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| HarnessError::Config(format!("summary lacks `{k}`")));
        let num = |k: &str| -> Result<f64, HarnessError> {
            get(k)?.parse().map_err(|_| HarnessError::Config(format!("summary `{k}` is not a number")))
        };
        let int = |k: &str| -> Result<u64, HarnessError> {
            get(k)?.parse().map_err(|_| HarnessError::Config(format!("summary `{k}` is not an integer")))
        };
        Ok(Self {
            name: get("name")?.to_owned(),
            preset: get("preset").ok().filter(|p| *p != "none").map(str::to_owned),
            objective: get("objective")?.to_owned(),
            objective_config: get("objective_config")?.to_owned(),
            seed: int("seed")?,
            world_size: int("world_size")? as usize,
            total_steps: int("total_steps")?,
            sync_interval: int("sync_interval")?,
            param_syncs: int("param_syncs")?,
            gradient_reductions: int("gradient_reductions")?,
            controller_syncs: int("controller_syncs")? as usize,
            controller_skips: int("controller_skips")? as usize,
            initial_loss: num("initial_loss")?,
            final_loss: num("final_loss")?,
            divergence_step: match get("divergence_step")? {
                "none" => None,
                _ => Some(int("divergence_step")?),
            },
            final_base: kv
                .iter()
                .filter_map(|(k, v)| Some((k.strip_prefix("final_base.")?.to_owned(), v.parse().ok()?)))
                .collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
