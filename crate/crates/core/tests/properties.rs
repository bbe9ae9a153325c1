use hdet::collectives::reduce_mean;
use hdet::objectives::{
    finite_diff_grad, relative_error, sample_batch, MlpConfig, Objective, ObjectiveConfig, RosenbrockConfig,
    StiffValleyConfig,
};
use hdet::schedule::{
    hypergradient_delta, one_cycle_lr, reassign, shifted_mean, softmax_weights, spread_multipliers, velocity_update,
    ChannelSpec, ControllerState, HyperparamChannel, OneCycleConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn alpha() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.1), Just(0.5), Just(1.0), 0.0..1.0f64]
}

proptest! {
    #[test]
    fn spread_matches_direct_formula(n in 1usize..64, a in alpha()) {
        let rho = spread_multipliers(n, a).unwrap();
        let half = ((n as f64 - 1.0) / 2.0).max(0.5);
        for (r, got) in rho.iter().enumerate() {
            let want = 1.0 + a * (r as f64 - (n as f64 - 1.0) / 2.0) / half;
            prop_assert!((got - want).abs() <= 1e-14, "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn spread_is_symmetric_with_unit_mean(n in 1usize..64, a in alpha()) {
        let rho = spread_multipliers(n, a).unwrap();
        for r in 0..n {
            prop_assert!((rho[r] + rho[n - 1 - r] - 2.0).abs() <= 1e-15);
        }
        prop_assert!((rho.iter().sum::<f64>() / n as f64 - 1.0).abs() <= 1e-14);
        prop_assert!(rho.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn softmax_is_permutation_equivariant(
        losses in prop::collection::vec(-10.0..10.0f64, 2..16),
        sigma in 0.01..5.0f64,
        seed in any::<u64>(),
    ) {
        let w = softmax_weights(&losses, sigma).unwrap().weights;
        let mut idx: Vec<usize> = (0..losses.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<f64> = idx.iter().map(|&i| losses[i]).collect();
        let wp = softmax_weights(&permuted, sigma).unwrap().weights;
        for (k, &i) in idx.iter().enumerate() {
            prop_assert!((wp[k] - w[i]).abs() <= 1e-12);
        }
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn lower_loss_never_gets_less_weight(losses in prop::collection::vec(-10.0..10.0f64, 2..16), sigma in 0.01..5.0f64) {
        let w = softmax_weights(&losses, sigma).unwrap().weights;
        for i in 0..losses.len() {
            for j in 0..losses.len() {
                if losses[i] < losses[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn softmax_ignores_common_shift(losses in prop::collection::vec(-10.0..10.0f64, 2..16), shift in -100.0..100.0f64) {
        let a = softmax_weights(&losses, 0.5).unwrap().weights;
        let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
        let b = softmax_weights(&shifted, 0.5).unwrap().weights;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn hypergradient_sign_follows_loss_slope(
        n in 2usize..16,
        a in 0.05..1.0f64,
        base in 1e-5..1e-1f64,
        slope in prop_oneof![1.0..1e3f64, -1e3..-1.0f64],
        seed in any::<u64>(),
    ) {
        let spec = ChannelSpec { base: Some(base), ..ChannelSpec::named("lr") };
        let mut ch = HyperparamChannel::new(&spec, n, a, 0.0, base).unwrap();
        let values = reassign(&mut ch, &mut ChaCha8Rng::seed_from_u64(seed));
        let scale = slope / base;
        let losses: Vec<f64> = values.iter().map(|v| 3.0 + scale * v * 1e-3).collect();
        let w = softmax_weights(&losses, 0.1).unwrap().weights;
        let d = hypergradient_delta(&w, &values).delta;
        prop_assert!(d * slope < 0.0, "slope {slope}, delta {d}");
    }

    #[test]
    fn reassign_keeps_multiset_and_mean(n in 1usize..32, a in alpha(), seed in any::<u64>()) {
        let spec = ChannelSpec { base: Some(0.01), ..ChannelSpec::named("lr") };
        let mut ch = HyperparamChannel::new(&spec, n, a, 0.0, 0.01).unwrap();
        let before = ch.values();
        let after = reassign(&mut ch, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut x = before.clone();
        let mut y = after.clone();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        prop_assert_eq!(x, y);
        prop_assert!((shifted_mean(&after) - 0.01).abs() <= 1e-15);
    }

    #[test]
    fn reduce_mean_is_exact_for_identical_inputs(v in prop::collection::vec(-1e6..1e6f64, 1..20), n in 1usize..16) {
        let views: Vec<&[f64]> = (0..n).map(|_| v.as_slice()).collect();
        prop_assert_eq!(reduce_mean(&views), v);
    }

    #[test]
    fn reduce_mean_matches_naive_sum(rows in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 4), 1..16)) {
        let views: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let got = reduce_mean(&views);
        for i in 0..4 {
            let want = rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64;
            prop_assert!((got[i] - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn velocity_respects_floor(base in 1e-9..1.0f64, v in -1.0..1.0f64, delta in -1.0..1.0f64, gamma in 0.0..0.99f64) {
        let s = ControllerState { base, velocity: v, gamma, engaged: true };
        let next = velocity_update(&s, delta, 0.9, 0.5, 1e-9);
        prop_assert!(next.base >= 1e-9);
        prop_assert!((next.velocity - (0.9 * v + 0.1 * delta)).abs() <= 1e-15);
    }

    #[test]
    fn one_cycle_stays_within_bounds(total in 10u64..5000, p in 0.05..0.95f64, step_frac in 0.0..=1.0f64) {
        let cfg = OneCycleConfig { eta_max: 1e-3, div_factor: 25.0, final_div_factor: 5.0, warmup_fraction: p, total_steps: total };
        let step = (step_frac * total as f64) as u64;
        let lr = one_cycle_lr(step, &cfg).unwrap();
        prop_assert!(lr > 0.0 && lr <= 1e-3 * (1.0 + 1e-15));
        prop_assert!(lr >= 1e-3 / 25.0 * (1.0 - 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_gradients_match_finite_differences(kind in 0usize..3, seed in any::<u64>(), step in 0u64..1000) {
        let cfg = match kind {
            0 => ObjectiveConfig::StiffValley(StiffValleyConfig { slow_dim: 2, stiff_dim: 2, ..Default::default() }),
            1 => ObjectiveConfig::Rosenbrock(RosenbrockConfig { dim: 4, groups: vec!["embedding".into(), "transformer".into()] }),
            _ => ObjectiveConfig::SyntheticMlp(MlpConfig { layers: vec![2, 5, 1], batch_size: 3, ..Default::default() }),
        };
        let o = Objective::new(&cfg).unwrap();
        let theta = o.initial_params(seed);
        let batch = sample_batch(seed, (seed % 8) as usize, step);
        let (_, g) = o.loss_and_grad(&theta, &batch).unwrap();
        let fd = finite_diff_grad(&o, &theta, &batch, 1e-6).unwrap();
        prop_assert!(relative_error(g.as_slice(), fd.as_slice()) < 1e-5);
    }
}
