use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{default_groups, Batch, GroupLayout, ObjectiveConfig, ObjectiveError};
use crate::seed::{self, Stream};

pub(super) trait Kernel: Send + Sync {
    /// Loss at `theta`; writes the gradient when `grad` is given.
    fn eval(&self, theta: &[f64], batch: &Batch, grad: Option<&mut [f64]>) -> f64;

    fn init(&self, global_seed: u64) -> Vec<f64>;

    fn sample_indices(&self, _batch: &Batch) -> Option<Vec<usize>> {
        None
    }
}

pub(super) fn build(config: &ObjectiveConfig) -> Result<(Box<dyn Kernel>, GroupLayout), ObjectiveError> {
    match config {
        ObjectiveConfig::Quadratic(c) => c.build(),
        ObjectiveConfig::StiffValley(c) => c.build(),
        ObjectiveConfig::Rosenbrock(c) => c.build(),
        ObjectiveConfig::SyntheticMlp(c) => c.build(),
        ObjectiveConfig::Logistic(c) => c.build(),
    }
}

fn invalid(msg: impl Into<String>) -> ObjectiveError {
    ObjectiveError::Config(msg.into())
}

fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn one() -> f64 {
    1.0
}

/// `f = ½ Σ λ_i (θ_i − ζ_i)²` with `ζ_i ~ N(0, (s/λ_i)²)`.
///
/// The gradient noise `λ_i ζ_i` has standard deviation `s` on every
/// coordinate and the expected loss keeps its minimum at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    pub curvatures: Vec<f64>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "one")]
    pub init_scale: f64,
    #[serde(default = "default_groups")]
    pub groups: Vec<String>,
}

struct Quadratic {
    curvatures: Vec<f64>,
    noise: f64,
    init_scale: f64,
}

impl QuadraticConfig {
    fn build(&self) -> Result<(Box<dyn Kernel>, GroupLayout), ObjectiveError> {
        if self.curvatures.is_empty() {
            return Err(invalid("quadratic needs at least one curvature"));
        }
        if self.curvatures.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(invalid("quadratic curvatures must be positive and finite"));
        }
        if !(self.noise >= 0.0) {
            return Err(invalid("quadratic noise must be non-negative"));
        }
        let layout = GroupLayout::even(&self.groups, self.curvatures.len())?;
        let kernel = Quadratic { curvatures: self.curvatures.clone(), noise: self.noise, init_scale: self.init_scale };
        Ok((Box::new(kernel), layout))
    }
}

impl Kernel for Quadratic {
    fn eval(&self, theta: &[f64], batch: &Batch, mut grad: Option<&mut [f64]>) -> f64 {
        let mut rng = batch.rng();
        let mut loss = 0.0;
        for (i, (&x, &lam)) in theta.iter().zip(&self.curvatures).enumerate() {
            let diff = x - self.noise / lam * gauss(&mut rng);
            loss += 0.5 * lam * diff * diff;
            if let Some(g) = grad.as_deref_mut() {
                g[i] = lam * diff;
            }
        }
        loss
    }

    fn init(&self, _global_seed: u64) -> Vec<f64> {
        vec![self.init_scale; self.curvatures.len()]
    }
}

/// A stiff quadratic whose curvature grows with distance along a slow valley.
///
/// Coordinates are `u` (slow, first) and `x` (stiff):
/// `f = m(u) q(x) + ½ λ_u Σ (u − ζ_u)²`, `q = ½ L Σ (x − ζ_x)²`,
/// `m(u) = 1 + c r / (r + w²)`, `r = |u|²`.
/// Noise is drawn as in the quadratic kind. At the optimum (`u = 0`) the
/// stiff curvature is `L`, so fixed-step descent is stable iff `η < 2/L`,
/// while far out along the valley the effective curvature is `(1 + c) L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StiffValleyConfig {
    pub slow_dim: usize,
    pub slow_curvature: f64,
    pub stiff_dim: usize,
    pub stiff_curvature: f64,
    pub coupling: f64,
    pub saturation: f64,
    pub noise: f64,
    pub init_slow: f64,
    pub init_stiff: f64,
    pub groups: Vec<String>,
}

impl Default for StiffValleyConfig {
    fn default() -> Self {
        Self {
            slow_dim: 8,
            slow_curvature: 0.2,
            stiff_dim: 8,
            stiff_curvature: 2500.0,
            coupling: 1.0,
            saturation: 0.5,
            noise: 0.3,
            init_slow: 1.0,
            init_stiff: 0.02,
            groups: default_groups(),
        }
    }
}

struct StiffValley(StiffValleyConfig);

impl StiffValleyConfig {
    fn build(&self) -> Result<(Box<dyn Kernel>, GroupLayout), ObjectiveError> {
        if self.slow_dim == 0 || self.stiff_dim == 0 {
            return Err(invalid("stiff_valley needs non-empty slow and stiff blocks"));
        }
        let positive = [self.slow_curvature, self.stiff_curvature, self.saturation];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("stiff_valley curvatures and saturation must be positive"));
        }
        if !(self.coupling >= 0.0 && self.noise >= 0.0) {
            return Err(invalid("stiff_valley coupling and noise must be non-negative"));
        }
        let layout = GroupLayout::even(&self.groups, self.slow_dim + self.stiff_dim)?;
        Ok((Box::new(StiffValley(self.clone())), layout))
    }
}

impl Kernel for StiffValley {
    fn eval(&self, theta: &[f64], batch: &Batch, grad: Option<&mut [f64]>) -> f64 {
        let c = &self.0;
        let mut rng = batch.rng();
        let (u, x) = theta.split_at(c.slow_dim);
        let zu: Vec<f64> = (0..c.slow_dim).map(|_| c.noise / c.slow_curvature * gauss(&mut rng)).collect();
        let zx: Vec<f64> = (0..c.stiff_dim).map(|_| c.noise / c.stiff_curvature * gauss(&mut rng)).collect();

        let r: f64 = u.iter().map(|v| v * v).sum();
        let w2 = c.saturation;
        let m = 1.0 + c.coupling * r / (r + w2);
        let q: f64 = 0.5 * c.stiff_curvature * x.iter().zip(&zx).map(|(a, z)| (a - z) * (a - z)).sum::<f64>();
        let slow: f64 = 0.5 * c.slow_curvature * u.iter().zip(&zu).map(|(a, z)| (a - z) * (a - z)).sum::<f64>();

        if let Some(g) = grad {
            let (gu, gx) = g.split_at_mut(c.slow_dim);
            let dm = c.coupling * 2.0 * w2 / ((r + w2) * (r + w2));
            for i in 0..c.slow_dim {
                gu[i] = c.slow_curvature * (u[i] - zu[i]) + q * dm * u[i];
            }
            for i in 0..c.stiff_dim {
                gx[i] = m * c.stiff_curvature * (x[i] - zx[i]);
            }
        }
        m * q + slow
    }

    fn init(&self, _global_seed: u64) -> Vec<f64> {
        let c = &self.0;
        let mut v = vec![c.init_slow; c.slow_dim];
        v.resize(c.slow_dim + c.stiff_dim, c.init_stiff);
        v
    }
}

/// Chained Rosenbrock function; deterministic, the batch is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosenbrockConfig {
    pub dim: usize,
    #[serde(default = "default_groups")]
    pub groups: Vec<String>,
}

struct Rosenbrock {
    dim: usize,
}

impl RosenbrockConfig {
    fn build(&self) -> Result<(Box<dyn Kernel>, GroupLayout), ObjectiveError> {
        if self.dim < 2 {
            return Err(invalid("rosenbrock needs dim >= 2"));
        }
        Ok((Box::new(Rosenbrock { dim: self.dim }), GroupLayout::even(&self.groups, self.dim)?))
    }
}

impl Kernel for Rosenbrock {
    fn eval(&self, theta: &[f64], _batch: &Batch, mut grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut loss = 0.0;
        for i in 0..self.dim - 1 {
            let (a, b) = (theta[i], theta[i + 1]);
            let t = b - a * a;
            loss += 100.0 * t * t + (1.0 - a) * (1.0 - a);
            if let Some(g) = grad.as_deref_mut() {
                g[i] += -400.0 * a * t - 2.0 * (1.0 - a);
                g[i + 1] += 200.0 * t;
            }
        }
        loss
    }

    fn init(&self, _global_seed: u64) -> Vec<f64> {
        (0..self.dim).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect()
    }
}

/// Regression onto a fixed random teacher network of the same shape.
///
/// Hidden layers use tanh, the output layer is linear and the loss is the
/// batch mean of `½ |f(x) − y|²`. Layer `l` stores its weights (row-major,
/// `out × in`) followed by its biases; layers are assigned to parameter
/// groups contiguously.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub layers: Vec<usize>,
    pub dataset_seed: u64,
    pub batch_size: usize,
    pub label_noise: f64,
    pub groups: Vec<String>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { layers: vec![4, 16, 1], dataset_seed: 0, batch_size: 16, label_noise: 0.05, groups: default_groups() }
    }
}

struct Mlp {
    layers: Vec<usize>,
    /// Flat offset of each layer's weights.
    offsets: Vec<usize>,
    teacher: Vec<f64>,
    batch_size: usize,
    label_noise: f64,
}

impl MlpConfig {
    fn build(&self) -> Result<(Box<dyn Kernel>, GroupLayout), ObjectiveError> {
        let n_layers = self.layers.len().saturating_sub(1);
        if n_layers == 0 || self.layers.contains(&0) {
            return Err(invalid("synthetic_mlp needs at least two non-zero layer sizes"));
        }
        if self.batch_size == 0 {
            return Err(invalid("synthetic_mlp batch_size must be positive"));
        }
        if self.groups.len() > n_layers {
            return Err(invalid(format!(
                "synthetic_mlp has {n_layers} layers, cannot fill {} parameter groups",
                self.groups.len()
            )));
        }
        let mut offsets = vec![0];
        for w in self.layers.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        let g = self.groups.len();
        let group_len = |gi: usize| {
            (0..n_layers).filter(|l| l * g / n_layers == gi).map(|l| offsets[l + 1] - offsets[l]).sum::<usize>()
        };
        let layout = GroupLayout::new(self.groups.iter().enumerate().map(|(gi, n)| (n.clone(), group_len(gi))))?;

        let mut mlp = Mlp {
            layers: self.layers.clone(),
            offsets,
            teacher: Vec::new(),
            batch_size: self.batch_size,
            label_noise: self.label_noise,
        };
        mlp.teacher = mlp.random_weights(&mut seed::rng(self.dataset_seed, Stream::Dataset, &[0]));
        Ok((Box::new(mlp), layout))
    }
}

impl Mlp {
    fn random_weights(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut theta = vec![0.0; *self.offsets.last().unwrap()];
        for (l, w) in self.layers.windows(2).enumerate() {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for v in &mut theta[self.offsets[l]..self.offsets[l] + w[0] * w[1]] {
                *v = scale * gauss(rng);
            }
        }
        theta
    }

    /// Activations of every layer, input first.
    fn forward(&self, theta: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.layers.len() - 1;
        let mut acts = vec![input.to_vec()];
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layers[l], self.layers[l + 1]);
            let w = &theta[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &theta[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let a = acts.last().unwrap();
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>())
                .collect();
            acts.push(if l + 1 < n_layers { z.into_iter().map(f64::tanh).collect() } else { z });
        }
        acts
    }
}

impl Kernel for Mlp {
    fn eval(&self, theta: &[f64], batch: &Batch, mut grad: Option<&mut [f64]>) -> f64 {
        let mut rng = batch.rng();
        let n_layers = self.layers.len() - 1;
        let n_in = self.layers[0];
        let inv_b = 1.0 / self.batch_size as f64;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut loss = 0.0;
        for _ in 0..self.batch_size {
            let x: Vec<f64> = (0..n_in).map(|_| gauss(&mut rng)).collect();
            let target = self.forward(&self.teacher, &x).pop().unwrap();
            let acts = self.forward(theta, &x);
            let out = &acts[n_layers];
            let mut delta: Vec<f64> = out
                .iter()
                .zip(&target)
                .map(|(o, t)| o - (t + self.label_noise * gauss(&mut rng)))
                .collect();
            loss += 0.5 * delta.iter().map(|d| d * d).sum::<f64>() * inv_b;

            let Some(g) = grad.as_deref_mut() else { continue };
            delta.iter_mut().for_each(|d| *d *= inv_b);
            for l in (0..n_layers).rev() {
                let (ni, no) = (self.layers[l], self.layers[l + 1]);
                let base = self.offsets[l];
                let a = &acts[l];
                for o in 0..no {
                    for i in 0..ni {
                        g[base + o * ni + i] += delta[o] * a[i];
                    }
                    g[base + ni * no + o] += delta[o];
                }
                if l > 0 {
                    let w = &theta[base..base + ni * no];
                    delta = (0..ni)
                        .map(|i| {
                            let back: f64 = (0..no).map(|o| w[o * ni + i] * delta[o]).sum();
                            back * (1.0 - a[i] * a[i])
                        })
                        .collect();
                }
            }
        }
        loss
    }

    fn init(&self, global_seed: u64) -> Vec<f64> {
        self.random_weights(&mut seed::rng(global_seed, Stream::Init, &[]))
    }
}

/// Logistic regression on a fixed synthetic dataset.
///
/// Parameters are `dim` weights followed by one bias. Each rank walks the
/// dataset in its own reshuffled order, one epoch after another, so any
/// `samples / batch_size` consecutive steps see every sample exactly once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    pub dim: usize,
    pub samples: usize,
    pub batch_size: usize,
    pub dataset_seed: u64,
    pub groups: Vec<String>,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { dim: 8, samples: 512, batch_size: 16, dataset_seed: 0, groups: default_groups() }
    }
}

struct Logistic {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    batch_size: usize,
}

impl LogisticConfig {
    fn build(&self) -> Result<(Box<dyn Kernel>, GroupLayout), ObjectiveError> {
        if self.dim == 0 || self.batch_size == 0 {
            return Err(invalid("logistic needs positive dim and batch_size"));
        }
        if self.samples == 0 || self.samples % self.batch_size != 0 {
            return Err(invalid("logistic samples must be a positive multiple of batch_size"));
        }
        let mut rng = seed::rng(self.dataset_seed, Stream::Dataset, &[1]);
        let teacher: Vec<f64> = (0..self.dim).map(|_| gauss(&mut rng)).collect();
        let mut features = Vec::with_capacity(self.samples * self.dim);
        let mut labels = Vec::with_capacity(self.samples);
        for _ in 0..self.samples {
            let x: Vec<f64> = (0..self.dim).map(|_| gauss(&mut rng)).collect();
            let z: f64 = x.iter().zip(&teacher).map(|(a, b)| a * b).sum();
            let y = if rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 };
            features.extend(x);
            labels.push(y);
        }
        let layout = GroupLayout::even(&self.groups, self.dim + 1)?;
        Ok((Box::new(Logistic { dim: self.dim, features, labels, batch_size: self.batch_size }), layout))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Kernel for Logistic {
    fn eval(&self, theta: &[f64], batch: &Batch, mut grad: Option<&mut [f64]>) -> f64 {
        let idx = self.sample_indices(batch).unwrap();
        let inv_b = 1.0 / idx.len() as f64;
        let (w, bias) = (&theta[..self.dim], theta[self.dim]);
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut loss = 0.0;
        for i in idx {
            let x = &self.features[i * self.dim..(i + 1) * self.dim];
            let y = self.labels[i];
            let z = bias + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            loss += (softplus(z) - y * z) * inv_b;
            if let Some(g) = grad.as_deref_mut() {
                let r = (sigmoid(z) - y) * inv_b;
                for (gj, xj) in g.iter_mut().zip(x) {
                    *gj += r * xj;
                }
                g[self.dim] += r;
            }
        }
        loss
    }

    fn init(&self, _global_seed: u64) -> Vec<f64> {
        vec![0.0; self.dim + 1]
    }

    fn sample_indices(&self, batch: &Batch) -> Option<Vec<usize>> {
        let n = self.labels.len();
        let per_epoch = (n / self.batch_size) as u64;
        let (epoch, pos) = (batch.step / per_epoch, (batch.step % per_epoch) as usize);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(batch.global_seed, Stream::Epoch, &[batch.rank as u64, epoch]));
        Some(order[pos * self.batch_size..(pos + 1) * self.batch_size].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{sample_batch, Objective};
    use super::*;

    #[test]
    fn logistic_epoch_covers_dataset_once() {
        let cfg = LogisticConfig { samples: 64, batch_size: 8, ..Default::default() };
        let o = Objective::new(&ObjectiveConfig::Logistic(cfg)).unwrap();
        for (rank, epoch) in [(0, 0u64), (3, 5)] {
            let mut seen: Vec<usize> = (epoch * 8..epoch * 8 + 8)
                .flat_map(|t| o.sample_indices(&sample_batch(11, rank, t)).unwrap())
                .collect();
            assert_eq!(seen.len(), 64);
            seen.sort_unstable();
            assert_eq!(seen, (0..64).collect::<Vec<_>>());
        }
        let a = o.sample_indices(&sample_batch(11, 0, 2)).unwrap();
        assert_ne!(a, o.sample_indices(&sample_batch(11, 1, 2)).unwrap());
        assert_eq!(a, o.sample_indices(&sample_batch(11, 0, 2)).unwrap());
    }

    #[test]
    fn logistic_rejects_partial_batches() {
        let cfg = LogisticConfig { samples: 60, batch_size: 8, ..Default::default() };
        assert!(Objective::new(&ObjectiveConfig::Logistic(cfg)).is_err());
    }

    #[test]
    fn mlp_groups_follow_layers() {
        let cfg = MlpConfig { layers: vec![3, 5, 2], ..Default::default() };
        let o = Objective::new(&ObjectiveConfig::SyntheticMlp(cfg)).unwrap();
        let l = o.layout();
        assert_eq!(l.range(0).len(), 3 * 5 + 5);
        assert_eq!(l.range(1).len(), 5 * 2 + 2);
        let cfg = MlpConfig { layers: vec![3, 2], ..Default::default() };
        assert!(Objective::new(&ObjectiveConfig::SyntheticMlp(cfg)).is_err());
    }

    #[test]
    fn stiff_valley_noise_free_optimum() {
        let cfg = StiffValleyConfig { noise: 0.0, ..Default::default() };
        let o = Objective::new(&ObjectiveConfig::StiffValley(cfg)).unwrap();
        let (l, g) = o.loss_and_grad(&o.params(vec![0.0; 16]).unwrap(), &sample_batch(0, 0, 0)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
