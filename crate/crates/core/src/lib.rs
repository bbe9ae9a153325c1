//! Deterministic multi-replica training simulator.
//!
//! `N` simulated data-parallel ranks share one all-reduced gradient but step
//! with different learning rates, are averaged back together every `T`
//! steps, and feed their losses to a gradient-free controller that adapts
//! the shared base learning rate.
//!
//! * [`collectives`]: lockstep reduce/gather/barrier over simulated ranks.
//! * [`objectives`]: toy objectives with named parameter groups.
//! * [`schedule`]: one-cycle schedule, spread multipliers, controller math.
//! * [`engine`]: the training loop.
//! * [`harness`]: configs, presets, metrics export and comparison.

pub mod collectives;
pub mod engine;
pub mod harness;
pub mod objectives;
pub mod schedule;
pub mod seed;

pub use collectives::{CollectiveError, ExecutionMode, RankGroup};
pub use engine::{run, EngineError, RunConfig, RunOutput};
pub use harness::HarnessError;
pub use objectives::{Objective, ObjectiveConfig, ObjectiveError, ParamGroupSet};
pub use schedule::ScheduleError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}
