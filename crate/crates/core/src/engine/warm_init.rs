use rand::Rng;
use rand_distr::StandardNormal;

use super::EngineError;
use crate::objectives::{Batch, Objective, ParamGroupSet};
use crate::seed::{self, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct WarmInitConfig {
    pub checkpoint: ParamGroupSet,
    pub nu: f64,
}

/// Per-coordinate noise std `ν ‖θ̄₀‖ / √d`.
pub fn noise_std(checkpoint: &ParamGroupSet, nu: f64) -> f64 {
    nu * checkpoint.global_norm() / (checkpoint.total_dim().max(1) as f64).sqrt()
}

/// `θ_r = θ̄₀ + ε_r`, with `ε_r` drawn from a stream keyed by `(seed, rank)`.
pub fn warm_noisy_init(cfg: &WarmInitConfig, rank: usize, global_seed: u64) -> ParamGroupSet {
    let mut theta = cfg.checkpoint.clone();
    if cfg.nu == 0.0 {
        return theta;
    }
    let std = noise_std(&cfg.checkpoint, cfg.nu);
    let mut rng = seed::rng(global_seed, Stream::WarmInit, &[rank as u64]);
    for x in theta.as_mut_slice() {
        *x += std * rng.sample::<f64, _>(StandardNormal);
    }
    theta
}

/// Single-replica SGD from the cold start, used to produce a checkpoint.
pub fn pretrain(objective: &Objective, global_seed: u64, steps: u64, lr: f64) -> Result<ParamGroupSet, EngineError> {
    let mut theta = objective.initial_params(global_seed);
    for t in 1..=steps {
        let batch = Batch::from_stream(global_seed, Stream::Pretrain, 0, t);
        let (_, grad) = objective.loss_and_grad(&theta, &batch)?;
        for (x, g) in theta.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *x -= lr * g;
        }
    }
    theta.check_finite().map_err(|e| EngineError::Config(format!("pretraining diverged: {e}")))?;
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::GroupLayout;
    use std::sync::Arc;

    fn checkpoint(d: usize) -> ParamGroupSet {
        let layout = Arc::new(GroupLayout::even(&["embedding".into(), "transformer".into()], d).unwrap());
        ParamGroupSet::new(layout, (0..d).map(|i| ((i % 7) as f64 - 3.0) * 0.5).collect()).unwrap()
    }

    #[test]
    fn zero_noise_returns_checkpoint() {
        let cfg = WarmInitConfig { checkpoint: checkpoint(100), nu: 0.0 };
        assert_eq!(warm_noisy_init(&cfg, 3, 9), cfg.checkpoint);
    }

    #[test]
    fn ranks_draw_independent_noise() {
        let cfg = WarmInitConfig { checkpoint: checkpoint(100), nu: 0.01 };
        let a = warm_noisy_init(&cfg, 0, 9);
        assert_eq!(a, warm_noisy_init(&cfg, 0, 9));
        assert_ne!(a, warm_noisy_init(&cfg, 1, 9));
        assert_ne!(a, cfg.checkpoint);
    }
}
