use serde::{Deserialize, Serialize};

use super::{shifted_mean, ScheduleError};

/// Lower bound on a controlled base value.
pub const LR_FLOOR: f64 = 1e-9;

/// Source of the hypergradient fed to the velocity update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// `Δ = η̃ − η̄` from the rank losses.
    #[default]
    Hypergradient,
    /// `Δ ≡ 0`: only the `(1 − γ)` decay acts. Used as a control.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoLrConfig {
    pub enabled: bool,
    pub beta: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// Engagement step `S_warm`; `None` means 10% of the run.
    pub warmup_steps: Option<u64>,
    pub floor: f64,
    pub signal: Signal,
}

impl Default for AutoLrConfig {
    fn default() -> Self {
        Self { enabled: true, beta: 0.9, sigma: 0.1, lambda: 0.5, warmup_steps: None, floor: LR_FLOOR, signal: Signal::default() }
    }
}

impl AutoLrConfig {
    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        self.warmup_steps.unwrap_or(total_steps / 10)
    }

    /// `K = (S − S_warm) / T`, rounded down.
    pub fn remaining_syncs(&self, total_steps: u64, sync_interval: u64) -> u64 {
        total_steps.saturating_sub(self.warmup_steps(total_steps)) / sync_interval.max(1)
    }

    /// Checks the controller constants and returns the decay `γ`.
    pub fn validate(&self, total_steps: u64, sync_interval: u64, f_div: f64, f_final: f64) -> Result<f64, ScheduleError> {
        let err = |m: String| Err(ScheduleError::Controller(m));
        if !(0.0..1.0).contains(&self.beta) {
            return err(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return err(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return err(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.floor.is_finite() && self.floor > 0.0) {
            return err(format!("floor must be positive, got {}", self.floor));
        }
        if sync_interval == 0 {
            return err("sync interval must be at least 1".into());
        }
        let warm = self.warmup_steps(total_steps);
        if warm > total_steps {
            return err(format!("warmup_steps {warm} exceeds total steps {total_steps}"));
        }
        let k = self.remaining_syncs(total_steps, sync_interval);
        if self.enabled && k == 0 {
            return err(format!("no sync interval remains after warmup (K = ({total_steps} - {warm}) / {sync_interval} = 0)"));
        }
        decay_gamma(f_div, f_final, k.max(1))
    }
}

/// `γ = 1 − exp(−ln(f_div / f_final) / K)`, accepted only inside `[0, 1)`.
pub fn decay_gamma(f_div: f64, f_final: f64, k: u64) -> Result<f64, ScheduleError> {
    if !(f_div > 0.0 && f_final > 0.0) || k == 0 {
        return Err(ScheduleError::GammaOutOfRange { f_div, f_final, gamma: f64::NAN });
    }
    let gamma = 1.0 - (-(f_div / f_final).ln() / k as f64).exp();
    if (0.0..1.0).contains(&gamma) {
        Ok(gamma)
    } else {
        Err(ScheduleError::GammaOutOfRange { f_div, f_final, gamma })
    }
}

/// Normalized scores and softmax weights for one sync.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub mean_loss: f64,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `s_r = (L̄ − L_r)/σ`, `w = softmax(s)`.
pub fn softmax_weights(losses: &[f64], sigma: f64) -> Result<Scores, ScheduleError> {
    if let Some(rank) = losses.iter().position(|l| !l.is_finite()) {
        return Err(ScheduleError::NonFiniteLoss { rank });
    }
    let mean_loss = shifted_mean(losses);
    let scores: Vec<f64> = losses.iter().map(|l| (mean_loss - l) / sigma).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Scores { mean_loss, scores, weights: exps.iter().map(|e| e / total).collect() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hypergradient {
    pub weighted: f64,
    pub mean: f64,
    pub delta: f64,
}

/// `η̃ = Σ w_r η_r`, `η̄ = mean(η_r)`, `Δ = η̃ − η̄`.
pub fn hypergradient_delta(weights: &[f64], values: &[f64]) -> Hypergradient {
    let weighted: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    let mean = shifted_mean(values);
    Hypergradient { weighted, mean, delta: weighted - mean }
}

/// Controller state of one channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerState {
    pub base: f64,
    pub velocity: f64,
    pub gamma: f64,
    pub engaged: bool,
}

impl ControllerState {
    pub fn new(base: f64, gamma: f64) -> Self {
        Self { base, velocity: 0.0, gamma, engaged: false }
    }
}

/// `v ← βv + (1−β)Δ`, `η̄ ← max(η̄(1−γ) + vλ, floor)`.
pub fn velocity_update(state: &ControllerState, delta: f64, beta: f64, lambda: f64, floor: f64) -> ControllerState {
    let velocity = beta * state.velocity + (1.0 - beta) * delta;
    let base = (state.base * (1.0 - state.gamma) + velocity * lambda).max(floor);
    ControllerState { base, velocity, gamma: state.gamma, engaged: state.engaged }
}

/// Everything the controller computed at one sync for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncStats {
    pub rank_losses: Vec<f64>,
    pub mean_loss: f64,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub weighted_value: f64,
    pub unweighted_mean: f64,
    pub delta: f64,
}

impl SyncStats {
    pub fn compute(rank_losses: &[f64], rank_values: &[f64], sigma: f64) -> Result<Self, ScheduleError> {
        let s = softmax_weights(rank_losses, sigma)?;
        let h = hypergradient_delta(&s.weights, rank_values);
        Ok(Self {
            rank_losses: rank_losses.to_vec(),
            mean_loss: s.mean_loss,
            scores: s.scores,
            weights: s.weights,
            weighted_value: h.weighted,
            unweighted_mean: h.mean,
            delta: h.delta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let s = softmax_weights(&[1.0, 1.2], 0.1).unwrap();
        assert!((s.scores[0] - 1.0).abs() < 1e-12 && (s.scores[1] + 1.0).abs() < 1e-12);
        // Independent evaluation: e / (e + 1/e).
        let e = 1f64.exp();
        assert!((s.weights[0] - e / (e + 1.0 / e)).abs() < 1e-12);
        assert!((s.weights[0] - 0.8808).abs() < 1e-4 && (s.weights[1] - 0.1192).abs() < 1e-4);

        let u = softmax_weights(&[0.3; 5], 0.01).unwrap();
        assert!(u.weights.iter().all(|w| (w - 0.2).abs() < 1e-15));

        let hot = softmax_weights(&[1.0, 2.0, 3.0], 1e9).unwrap();
        assert!(hot.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn softmax_survives_extreme_scores() {
        let s = softmax_weights(&[0.0, 1e6], 1e-3).unwrap();
        assert_eq!(s.weights, vec![1.0, 0.0]);
        assert_eq!(softmax_weights(&[1.0, f64::NAN], 0.1).unwrap_err(), ScheduleError::NonFiniteLoss { rank: 1 });
    }

    #[test]
    fn hypergradient_example() {
        let w = [0.8808, 0.1192];
        let h = hypergradient_delta(&w, &[0.0008, 0.0010]);
        assert!((h.weighted - 0.00082384).abs() < 1e-12);
        assert!((h.mean - 0.0009).abs() < 1e-18);
        assert!((h.delta - (-7.616e-5)).abs() < 1e-9);
        assert_eq!(hypergradient_delta(&[0.5, 0.5], &[0.0008, 0.0010]).delta, 0.0);
        let top = hypergradient_delta(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0]);
        assert_eq!(top.delta, 1.0);
    }

    #[test]
    fn decay_examples() {
        assert_eq!(decay_gamma(25.0, 25.0, 7).unwrap(), 0.0);
        let g = decay_gamma(1e4, 25.0, 100).unwrap();
        assert!((g - (1.0 - (-(400f64).ln() / 100.0).exp())).abs() < 1e-15);
        assert!((g - 0.05815).abs() < 1e-5);
        assert!(decay_gamma(1e4, 25.0, 1 << 40).unwrap() < 1e-10);
        assert!(matches!(decay_gamma(25.0, 1e4, 100), Err(ScheduleError::GammaOutOfRange { .. })));
    }

    #[test]
    fn velocity_examples() {
        let g = decay_gamma(1e4, 25.0, 100).unwrap();
        let s = ControllerState { base: 0.0009, velocity: 0.0, gamma: g, engaged: true };
        let next = velocity_update(&s, -7.62e-5, 0.9, 0.5, LR_FLOOR);
        assert!((next.velocity - (-7.62e-6)).abs() < 1e-18);
        assert!((next.base - 8.439e-4).abs() < 1e-7);

        let mut z = ControllerState { base: 1.0, velocity: 0.0, gamma: 0.1, engaged: true };
        for k in 1..=5 {
            z = velocity_update(&z, 0.0, 0.9, 0.5, LR_FLOOR);
            assert!((z.base - 0.9f64.powi(k)).abs() < 1e-15);
        }
        assert_eq!(velocity_update(&s, 3e-5, 0.0, 0.5, LR_FLOOR).velocity, 3e-5);
        assert_eq!(velocity_update(&s, -1.0, 0.0, 0.5, LR_FLOOR).base, LR_FLOOR);
    }

    #[test]
    fn auto_lr_validation() {
        let c = AutoLrConfig::default();
        assert_eq!(c.warmup_steps(20_000), 2_000);
        assert_eq!(c.remaining_syncs(20_000, 100), 180);
        assert!(c.validate(20_000, 100, 25.0, 5.0).is_ok());
        assert!(c.validate(20_000, 100, 25.0, 1e4).is_err());
        let late = AutoLrConfig { warmup_steps: Some(19_950), ..c.clone() };
        assert!(late.validate(20_000, 100, 25.0, 5.0).is_err());
        assert!(AutoLrConfig { beta: 1.0, ..c }.validate(20_000, 100, 25.0, 5.0).is_err());
    }
}
