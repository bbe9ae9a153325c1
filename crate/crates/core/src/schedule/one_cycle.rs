use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ScheduleError;

/// Cosine one-cycle schedule.
///
/// Rises from `eta_max / div_factor` to `eta_max` over the first
/// `round(warmup_fraction * total_steps)` steps, then anneals to
/// `eta_max / final_div_factor` at `total_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneCycleConfig {
    pub eta_max: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
}

impl OneCycleConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let err = |m: &str| Err(ScheduleError::OneCycle(m.into()));
        if !(self.eta_max.is_finite() && self.eta_max > 0.0) {
            return err("eta_max must be positive");
        }
        if !(self.div_factor.is_finite() && self.div_factor > 0.0) {
            return err("div_factor must be positive");
        }
        if !(self.final_div_factor.is_finite() && self.final_div_factor > 0.0) {
            return err("final_div_factor must be positive");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return err("warmup_fraction must lie in (0, 1)");
        }
        if self.total_steps == 0 {
            return err("total_steps must be at least 1");
        }
        Ok(())
    }

    pub fn peak_step(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).round() as u64
    }
}

/// Cosine interpolation from `a` (at `x = 0`) to `b` (at `x = 1`).
fn cosine(a: f64, b: f64, x: f64) -> f64 {
    let c = 0.5 * (1.0 - (PI * x).cos());
    a * (1.0 - c) + b * c
}

pub fn one_cycle_lr(step: u64, cfg: &OneCycleConfig) -> Result<f64, ScheduleError> {
    let total = cfg.total_steps;
    if step > total {
        return Err(ScheduleError::StepOutOfRange { step, total });
    }
    let up = cfg.peak_step();
    let start = cfg.eta_max / cfg.div_factor;
    let floor = cfg.eta_max / cfg.final_div_factor;
    Ok(if step < up {
        cosine(start, cfg.eta_max, step as f64 / up as f64)
    } else if step == up {
        cfg.eta_max
    } else {
        cosine(cfg.eta_max, floor, (step - up) as f64 / (total - up) as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OneCycleConfig {
        OneCycleConfig { eta_max: 0.0009, div_factor: 25.0, final_div_factor: 5.0, warmup_fraction: 0.3, total_steps: 1000 }
    }

    #[test]
    fn boundaries() {
        let c = cfg();
        assert_eq!(one_cycle_lr(0, &c).unwrap(), 0.0009 / 25.0);
        assert_eq!(one_cycle_lr(300, &c).unwrap(), 0.0009);
        assert_eq!(one_cycle_lr(1000, &c).unwrap(), 0.0009 / 5.0);
        assert_eq!(one_cycle_lr(1001, &c).unwrap_err(), ScheduleError::StepOutOfRange { step: 1001, total: 1000 });
    }

    #[test]
    fn midpoints_are_halfway() {
        let c = cfg();
        let mid_up = one_cycle_lr(150, &c).unwrap();
        assert!((mid_up - 0.5 * (0.0009 / 25.0 + 0.0009)).abs() < 1e-15);
        let mid_down = one_cycle_lr(650, &c).unwrap();
        assert!((mid_down - 0.5 * (0.0009 + 0.0009 / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn monotone_on_each_side() {
        let c = cfg();
        let lrs: Vec<f64> = (0..=1000).map(|t| one_cycle_lr(t, &c).unwrap()).collect();
        assert!(lrs[..=300].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[300..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        assert!(OneCycleConfig { warmup_fraction: 1.0, ..cfg() }.validate().is_err());
        assert!(OneCycleConfig { eta_max: 0.0, ..cfg() }.validate().is_err());
        assert!(OneCycleConfig { total_steps: 0, ..cfg() }.validate().is_err());
    }
}
