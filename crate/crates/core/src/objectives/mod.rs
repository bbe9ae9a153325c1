//! Differentiable toy objectives with named parameter groups.
//!
//! Every kind provides a hand-derived gradient; [`finite_diff_grad`] is the
//! independent oracle used to check them.

mod batch;
mod gradcheck;
mod kinds;
mod params;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{sample_batch, Batch};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use kinds::{LogisticConfig, MlpConfig, QuadraticConfig, RosenbrockConfig, StiffValleyConfig};
pub use params::{GroupLayout, ParamGroupSet};

use kinds::Kernel;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("non-finite parameters in group `{group}`")]
    NonFinite { group: String },
    #[error("parameter vector has {found} elements, layout expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("invalid objective: {0}")]
    Config(String),
}

pub fn default_groups() -> Vec<String> {
    vec!["embedding".into(), "transformer".into()]
}

/// Objective selection as it appears in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveConfig {
    Quadratic(QuadraticConfig),
    StiffValley(StiffValleyConfig),
    Rosenbrock(RosenbrockConfig),
    SyntheticMlp(MlpConfig),
    Logistic(LogisticConfig),
}

impl ObjectiveConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Quadratic(_) => "quadratic",
            Self::StiffValley(_) => "stiff_valley",
            Self::Rosenbrock(_) => "rosenbrock",
            Self::SyntheticMlp(_) => "synthetic_mlp",
            Self::Logistic(_) => "logistic",
        }
    }
}

/// A validated objective ready for evaluation.
///
/// Evaluation is a pure function of `(params, batch)` and is safe to call
/// from every rank concurrently.
pub struct Objective {
    config: ObjectiveConfig,
    kernel: Box<dyn Kernel>,
    layout: Arc<GroupLayout>,
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective").field("config", &self.config).field("layout", &self.layout).finish()
    }
}

impl Objective {
    pub fn new(config: &ObjectiveConfig) -> Result<Self, ObjectiveError> {
        let (kernel, layout) = kinds::build(config)?;
        Ok(Self { config: config.clone(), kernel, layout: Arc::new(layout) })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    pub fn kind_name(&self) -> &'static str {
        self.config.kind_name()
    }

    pub fn layout(&self) -> &Arc<GroupLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    /// Cold-start parameters; kinds with random initialization draw them
    /// from the global seed.
    pub fn initial_params(&self, global_seed: u64) -> ParamGroupSet {
        ParamGroupSet::new(self.layout.clone(), self.kernel.init(global_seed)).expect("kernel init matches layout")
    }

    pub fn params(&self, data: Vec<f64>) -> Result<ParamGroupSet, ObjectiveError> {
        ParamGroupSet::new(self.layout.clone(), data)
    }

    fn check(&self, params: &ParamGroupSet) -> Result<(), ObjectiveError> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(ObjectiveError::Shape { expected: self.dim(), found: params.total_dim() });
        }
        params.check_finite()
    }

    /// Per-sample-mean loss on `batch` and its analytic gradient.
    pub fn loss_and_grad(&self, params: &ParamGroupSet, batch: &Batch) -> Result<(f64, ParamGroupSet), ObjectiveError> {
        self.check(params)?;
        let mut grad = ParamGroupSet::zeros(self.layout.clone());
        let loss = self.kernel.eval(params.as_slice(), batch, Some(grad.as_mut_slice()));
        Ok((loss, grad))
    }

    pub fn loss(&self, params: &ParamGroupSet, batch: &Batch) -> Result<f64, ObjectiveError> {
        self.check(params)?;
        Ok(self.kernel.eval(params.as_slice(), batch, None))
    }

    /// Dataset indices behind `batch`, for dataset-backed kinds.
    pub fn sample_indices(&self, batch: &Batch) -> Option<Vec<usize>> {
        self.kernel.sample_indices(batch)
    }
}
