use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{spread_multipliers, ControllerState, ScheduleError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    LearningRate,
    WeightDecay,
}

/// One explored hyperparameter as written in a config.
///
/// Names are `lr`, `weight_decay`, or either with a `:<group>` suffix to
/// restrict the channel to one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    /// Spread ratio override; defaults to the run's `alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Starting base value. Required for weight decay; learning-rate
    /// channels follow the one-cycle schedule until the controller engages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    /// Whether the `(1 − γ)` decay applies. Defaults to true for learning
    /// rates and false otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<bool>,
}

impl ChannelSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.into(), alpha: None, base: None, decay: None }
    }

    pub fn parse_name(&self) -> Result<(ChannelKind, Option<&str>), ScheduleError> {
        let (head, group) = match self.name.split_once(':') {
            Some((h, g)) if !g.is_empty() => (h, Some(g)),
            Some(_) => return Err(ScheduleError::Channel(format!("`{}` has an empty group suffix", self.name))),
            None => (self.name.as_str(), None),
        };
        let kind = match head {
            "lr" => ChannelKind::LearningRate,
            "weight_decay" => ChannelKind::WeightDecay,
            other => {
                return Err(ScheduleError::Channel(format!(
                    "unknown hyperparameter `{other}` (expected lr or weight_decay)"
                )))
            }
        };
        Ok((kind, group))
    }
}

/// A hyperparameter explored across ranks with its own multipliers and
/// permutation.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperparamChannel {
    pub name: String,
    pub kind: ChannelKind,
    pub group: Option<String>,
    pub multipliers: Vec<f64>,
    /// Rank `r` uses multiplier `multipliers[permutation[r]]`.
    pub permutation: Vec<usize>,
    pub controller: ControllerState,
}

impl HyperparamChannel {
    /// Builds a channel with the identity permutation.
    ///
    /// `gamma` is the run's decay; it is zeroed for channels that do not
    /// decay. `initial_base` is used when the spec gives none.
    pub fn new(
        spec: &ChannelSpec,
        world_size: usize,
        default_alpha: f64,
        gamma: f64,
        initial_base: f64,
    ) -> Result<Self, ScheduleError> {
        let (kind, group) = spec.parse_name()?;
        let base = match (kind, spec.base) {
            (_, Some(b)) if !(b.is_finite() && b >= 0.0) => {
                return Err(ScheduleError::Channel(format!("`{}` base must be finite and >= 0", spec.name)))
            }
            (_, Some(b)) => b,
            (ChannelKind::WeightDecay, None) => {
                return Err(ScheduleError::Channel(format!("`{}` needs an explicit base value", spec.name)))
            }
            (ChannelKind::LearningRate, None) => initial_base,
        };
        let decays = spec.decay.unwrap_or(kind == ChannelKind::LearningRate);
        Ok(Self {
            name: spec.name.clone(),
            kind,
            group: group.map(str::to_owned),
            multipliers: spread_multipliers(world_size, spec.alpha.unwrap_or(default_alpha))?,
            permutation: (0..world_size).collect(),
            controller: ControllerState::new(base, if decays { gamma } else { 0.0 }),
        })
    }

    pub fn multiplier(&self, rank: usize) -> f64 {
        self.multipliers[self.permutation[rank]]
    }

    /// Rank `r`'s value for an arbitrary base, `base · ρ_{π(r)}`.
    pub fn value_with_base(&self, base: f64, rank: usize) -> f64 {
        base * self.multiplier(rank)
    }

    pub fn rank_value(&self, rank: usize) -> f64 {
        self.value_with_base(self.controller.base, rank)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.multipliers.len()).map(|r| self.rank_value(r)).collect()
    }
}

/// Draws a fresh uniform permutation and returns the new per-rank values.
pub fn reassign(channel: &mut HyperparamChannel, rng: &mut impl Rng) -> Vec<f64> {
    channel.permutation.shuffle(rng);
    channel.values()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::shifted_mean;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_parse() {
        assert_eq!(ChannelSpec::named("lr").parse_name().unwrap(), (ChannelKind::LearningRate, None));
        assert_eq!(
            ChannelSpec::named("weight_decay:embedding").parse_name().unwrap(),
            (ChannelKind::WeightDecay, Some("embedding"))
        );
        assert!(ChannelSpec::named("momentum").parse_name().is_err());
        assert!(ChannelSpec::named("lr:").parse_name().is_err());
    }

    #[test]
    fn weight_decay_needs_base_and_does_not_decay() {
        assert!(HyperparamChannel::new(&ChannelSpec::named("weight_decay"), 4, 0.1, 0.05, 0.0).is_err());
        let spec = ChannelSpec { base: Some(0.01), ..ChannelSpec::named("weight_decay") };
        let c = HyperparamChannel::new(&spec, 4, 0.1, 0.05, 0.0).unwrap();
        assert_eq!(c.controller.gamma, 0.0);
        let lr = HyperparamChannel::new(&ChannelSpec::named("lr"), 4, 0.1, 0.05, 0.003).unwrap();
        assert_eq!((lr.controller.gamma, lr.controller.base), (0.05, 0.003));
    }

    #[test]
    fn reassign_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = HyperparamChannel::new(&ChannelSpec::named("lr"), 8, 1.0 / 9.0, 0.0, 0.0009).unwrap();
        let mut sorted_ref = c.values();
        sorted_ref.sort_by(f64::total_cmp);
        for _ in 0..20 {
            let mut v = reassign(&mut c, &mut rng);
            assert!((shifted_mean(&v) - 0.0009).abs() <= 1e-15 * 0.0009);
            v.sort_by(f64::total_cmp);
            assert_eq!(v, sorted_ref);
        }
        let mut single = HyperparamChannel::new(&ChannelSpec::named("lr"), 1, 0.5, 0.0, 0.2).unwrap();
        assert_eq!(reassign(&mut single, &mut rng), vec![0.2]);
    }
}
