//! The training loop.
//!
//! Each rank computes a local gradient, all ranks average it, and rank `r`
//! steps with its own learning rate `η_r`. Every `sync_interval` steps the
//! parameters are averaged and, once engaged, the controller updates each
//! channel's base value from the gathered interval losses and reshuffles
//! the per-rank multipliers.

pub mod checkpoint;
mod config;
mod optimizer;
mod run;
mod warm_init;
mod worker;

use thiserror::Error;

use crate::collectives::{CollectiveError, RankError};
use crate::objectives::ObjectiveError;
use crate::schedule::ScheduleError;

pub use config::{OneCycleParams, Plan, RunConfig, WarmInitSettings};
pub use optimizer::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use run::{
    run, run_with, ChannelSync, ControllerOutcome, DivergenceCause, DivergenceEvent, RankTrace, RunOptions, RunOutput,
    StepRow, StepTrace, SyncRecord,
};
pub use warm_init::{noise_std, pretrain, warm_noisy_init, WarmInitConfig};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RankError for EngineError {
    fn collective(&self) -> Option<&CollectiveError> {
        match self {
            Self::Collective(e) => Some(e),
            _ => None,
        }
    }
}
