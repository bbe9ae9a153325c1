use super::{Batch, Objective, ObjectiveError, ParamGroupSet};

/// Central-difference gradient of `objective` at `params` on a fixed batch.
pub fn finite_diff_grad(
    objective: &Objective,
    params: &ParamGroupSet,
    batch: &Batch,
    epsilon: f64,
) -> Result<ParamGroupSet, ObjectiveError> {
    if !(epsilon > 0.0) {
        return Err(ObjectiveError::Config(format!("finite-difference epsilon must be positive, got {epsilon}")));
    }
    let mut probe = params.clone();
    let mut grad = ParamGroupSet::zeros(params.layout().clone());
    for i in 0..params.total_dim() {
        let x = params.as_slice()[i];
        probe.as_mut_slice()[i] = x + epsilon;
        let up = objective.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = x - epsilon;
        let down = objective.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = x;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// `|a − b|₂ / max(|a|₂, |b|₂)`, or the absolute error when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::super::{sample_batch, ObjectiveConfig, QuadraticConfig};
    use super::*;

    #[test]
    fn quadratic_central_difference() {
        let cfg = QuadraticConfig { curvatures: vec![2.0], noise: 0.0, init_scale: 1.0, groups: vec!["g".into()] };
        let o = Objective::new(&ObjectiveConfig::Quadratic(cfg)).unwrap();
        let b = sample_batch(0, 0, 0);
        let g = finite_diff_grad(&o, &o.params(vec![3.0]).unwrap(), &b, 1e-5).unwrap();
        assert!((g.as_slice()[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(&o, &o.params(vec![0.0]).unwrap(), &b, 1e-5).unwrap();
        assert!(g.as_slice()[0].abs() < 1e-9);
        assert!(finite_diff_grad(&o, &o.params(vec![0.0]).unwrap(), &b, 0.0).is_err());
    }
}
