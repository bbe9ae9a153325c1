//! Base schedule, spread multipliers and the auto-LR controller.

mod channel;
mod controller;
mod one_cycle;
mod spread;

use thiserror::Error;

pub use channel::{reassign, ChannelKind, ChannelSpec, HyperparamChannel};
pub use controller::{
    decay_gamma, hypergradient_delta, softmax_weights, velocity_update, AutoLrConfig, ControllerState, Hypergradient,
    Scores, Signal, SyncStats, LR_FLOOR,
};
pub use one_cycle::{one_cycle_lr, OneCycleConfig};
pub use spread::spread_multipliers;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("spread ratio alpha must be finite and >= 0, got {0}")]
    NegativeAlpha(f64),
    #[error("world size must be at least 1")]
    EmptyWorld,
    #[error("step {step} is outside the schedule's 0..={total} range")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid one-cycle config: {0}")]
    OneCycle(String),
    #[error(
        "decay factor pair f_div={f_div}, f_final={f_final} gives gamma={gamma}, outside [0, 1) (f_div must be >= f_final)"
    )]
    GammaOutOfRange { f_div: f64, f_final: f64, gamma: f64 },
    #[error("invalid auto-LR config: {0}")]
    Controller(String),
    #[error("rank {rank} reported a non-finite loss; controller skipped")]
    NonFiniteLoss { rank: usize },
    #[error("invalid hyperparameter channel: {0}")]
    Channel(String),
}

/// Mean accumulated in index order, shifted by the first element, so equal
/// inputs reproduce themselves exactly.
pub fn shifted_mean(values: &[f64]) -> f64 {
    let Some(&v0) = values.first() else { return f64::NAN };
    v0 + values[1..].iter().map(|v| v - v0).sum::<f64>() / values.len() as f64
}
