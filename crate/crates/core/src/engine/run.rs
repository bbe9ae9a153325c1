use std::time::Duration;

use super::checkpoint;
use super::warm_init::{pretrain, warm_noisy_init, WarmInitConfig};
use super::worker::{Shared, Worker, GRADIENT, PARAMETERS};
use super::{EngineError, RunConfig};
use crate::collectives::{CollectiveKind, CollectiveStats, RankGroup};
use crate::objectives::ParamGroupSet;

/// One rank's state after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: u64,
    pub rank: usize,
    /// Raw loss of the step's forward pass; may be non-finite.
    pub loss: f64,
    /// Value of every channel used for the step, in channel order.
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerOutcome {
    Ran,
    /// A rank loss was non-finite; only the decay was applied.
    Skipped,
}

/// Controller diagnostics for one channel at one sync.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSync {
    pub name: String,
    /// Gathered values `η_r` used during the interval.
    pub rank_values: Vec<f64>,
    /// Unweighted mean `η̄` before the update.
    pub mean: f64,
    /// Loss-weighted mean `η̃`; NaN when skipped.
    pub weighted: f64,
    /// Hypergradient `Δ` fed to the velocity; NaN when skipped.
    pub delta: f64,
    pub velocity: f64,
    /// Base value after the update.
    pub base: f64,
    pub gamma: f64,
    /// Values assigned to each rank for the next interval.
    pub assigned: Vec<f64>,
}

/// One controller invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncRecord {
    pub step: u64,
    /// 1-based index among all syncs of the run.
    pub sync_index: u64,
    pub outcome: ControllerOutcome,
    pub rank_losses: Vec<f64>,
    pub mean_loss: f64,
    /// Shared by all channels; NaN when skipped.
    pub weights: Vec<f64>,
    pub channels: Vec<ChannelSync>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DivergenceCause {
    NonFiniteLoss,
    NonFiniteGradient { group: String },
    NonFiniteParams { group: String },
}

/// First non-finite event seen by a rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DivergenceEvent {
    pub step: u64,
    pub rank: usize,
    pub cause: DivergenceCause,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub step: u64,
    pub shared_grad: Vec<f64>,
    pub group_lrs: Vec<f64>,
    pub after_update: Vec<f64>,
    /// Parameters after the sync that ended this step, if averaging ran.
    pub after_sync: Option<Vec<f64>>,
}

/// Full per-step parameter history of one rank.
#[derive(Clone, Debug, PartialEq)]
pub struct RankTrace {
    pub initial: Vec<f64>,
    pub steps: Vec<StepTrace>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Record per-step parameters and shared gradients for every rank.
    pub trace: bool,
    /// Checkpoint for warm initialization, overriding the config.
    pub checkpoint: Option<ParamGroupSet>,
    pub timeout: Option<Duration>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: RunConfig,
    pub channel_names: Vec<String>,
    pub gamma: f64,
    pub warmup_steps: u64,
    pub initial_params: Vec<ParamGroupSet>,
    /// Rank 0's parameters; all ranks agree after the final sync when
    /// averaging is on.
    pub final_params: ParamGroupSet,
    /// Every rank's final parameters.
    pub rank_params: Vec<ParamGroupSet>,
    /// Ordered by step, then rank.
    pub rows: Vec<StepRow>,
    pub syncs: Vec<SyncRecord>,
    pub stats: CollectiveStats,
    pub divergence: Vec<DivergenceEvent>,
    pub traces: Option<Vec<RankTrace>>,
}

impl RunOutput {
    pub fn param_syncs(&self) -> u64 {
        self.stats.count(CollectiveKind::ReduceMean, PARAMETERS)
    }

    pub fn gradient_reductions(&self) -> u64 {
        self.stats.count(CollectiveKind::ReduceMean, GRADIENT)
    }

    /// Rank-mean loss of every step, in step order.
    pub fn mean_losses(&self) -> Vec<f64> {
        let n = self.config.world_size;
        self.rows.chunks(n).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / n as f64).collect()
    }

    /// Current base value of each channel after the run.
    pub fn final_bases(&self) -> Vec<f64> {
        let n = self.config.world_size as f64;
        let last = self.rows.len().saturating_sub(self.config.world_size);
        let tail = &self.rows[last..];
        (0..self.channel_names.len())
            .map(|c| match self.syncs.last() {
                Some(s) if s.step == self.config.total_steps => s.channels[c].base,
                _ => tail.iter().map(|r| r.values[c]).sum::<f64>() / n,
            })
            .collect()
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, EngineError> {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &RunConfig, options: RunOptions) -> Result<RunOutput, EngineError> {
    let plan = cfg.validate()?;
    let objective = &plan.objective;

    let initial_params: Vec<ParamGroupSet> = if cfg.warm_init.enabled {
        let checkpoint = match (options.checkpoint, &cfg.warm_init.checkpoint) {
            (Some(c), _) => c,
            (None, Some(path)) => checkpoint::load(path, objective)?,
            (None, None) => pretrain(objective, cfg.seed, cfg.warm_init.pretrain_steps, cfg.warm_init.pretrain_lr)?,
        };
        checkpoint.check_finite()?;
        let warm = WarmInitConfig { checkpoint, nu: cfg.warm_init.nu };
        (0..cfg.world_size).map(|r| warm_noisy_init(&warm, r, cfg.seed)).collect()
    } else {
        vec![objective.initial_params(cfg.seed); cfg.world_size]
    };

    let mut group = RankGroup::new(cfg.world_size, cfg.mode)?;
    if let Some(t) = options.timeout {
        group = group.with_timeout(t);
    }
    let shared = Shared { cfg, plan: &plan, trace: options.trace };
    let workers: Vec<Worker> =
        initial_params.iter().enumerate().map(|(r, p)| Worker::new(r, &shared, p.clone())).collect();
    let mut workers = group.drive(workers)?;

    let steps = cfg.total_steps as usize;
    let mut rows = Vec::with_capacity(steps * cfg.world_size);
    let mut per_rank: Vec<_> = workers.iter_mut().map(|w| std::mem::take(&mut w.rows).into_iter()).collect();
    for _ in 0..steps {
        for it in per_rank.iter_mut() {
            rows.push(it.next().expect("every rank records every step"));
        }
    }
    let divergence = workers.iter_mut().filter_map(|w| w.divergence.take()).collect();
    let syncs = std::mem::take(&mut workers[0].sync_records);
    let traces = options.trace.then(|| workers.iter_mut().map(|w| w.trace.take().unwrap()).collect());
    let rank_params: Vec<ParamGroupSet> = workers.into_iter().map(|w| w.params).collect();

    Ok(RunOutput {
        config: cfg.clone(),
        channel_names: plan.channels.iter().map(|c| c.name.clone()).collect(),
        gamma: plan.gamma,
        warmup_steps: plan.warmup_steps,
        initial_params,
        final_params: rank_params[0].clone(),
        rank_params,
        rows,
        syncs,
        stats: group.stats(),
        divergence,
        traces,
    })
}
