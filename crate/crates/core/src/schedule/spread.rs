use super::ScheduleError;

/// Per-rank multipliers `ρ_r = 1 + α (r − (N−1)/2) / δ`, `δ = max((N−1)/2, ½)`.
///
/// The upper half is evaluated directly and mirrored as `2 − ρ`, so the
/// pairwise symmetry `ρ_r + ρ_{N−1−r} = 2` holds by construction.
pub fn spread_multipliers(n: usize, alpha: f64) -> Result<Vec<f64>, ScheduleError> {
    if n == 0 {
        return Err(ScheduleError::EmptyWorld);
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(ScheduleError::NegativeAlpha(alpha));
    }
    let center = (n as f64 - 1.0) / 2.0;
    let delta = center.max(0.5);
    let mut rho = vec![1.0; n];
    for r in n / 2..n {
        let v = 1.0 + alpha * (r as f64 - center) / delta;
        rho[r] = v;
        rho[n - 1 - r] = 2.0 - v;
    }
    if n % 2 == 1 {
        rho[n / 2] = 1.0;
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_ranks() {
        let rho = spread_multipliers(4, 0.3).unwrap();
        let expected = [0.7, 0.9, 1.1, 1.3];
        for (a, b) in rho.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{rho:?}");
        }
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(spread_multipliers(1, 0.5).unwrap(), vec![1.0]);
        assert_eq!(spread_multipliers(7, 0.0).unwrap(), vec![1.0; 7]);
        assert_eq!(spread_multipliers(2, 1.0).unwrap(), vec![0.0, 2.0]);
        assert_eq!(spread_multipliers(3, -0.1).unwrap_err(), ScheduleError::NegativeAlpha(-0.1));
        assert_eq!(spread_multipliers(0, 0.1).unwrap_err(), ScheduleError::EmptyWorld);
    }

    #[test]
    fn eight_ranks_span() {
        let lrs: Vec<f64> = spread_multipliers(8, 1.0 / 9.0).unwrap().iter().map(|r| 0.0009 * r).collect();
        assert!((lrs[0] - 0.0008).abs() < 1e-18);
        assert!((lrs[7] - 0.0010).abs() < 1e-18);
    }
}
