use lfnoise::condexp::{
    objective, objective_atomic, objective_density, posterior_mean, smooth_with_gaussian,
    ObjectiveReport,
};
use lfnoise::dist::{sum_law, Moments};
use lfnoise::mc::{estimate_objective, McEstimate};
use lfnoise::quad::QuadratureConfig;
use lfnoise::solve::{
    optimize_support_and_weights, optimize_weights, trace_l_curve, LCurvePoint, OptimizerConfig,
    SolveResult,
};
use lfnoise::verify::{run_all, BatteryPlan, TheoremReport, VerifyConfig};
use lfnoise::{AtomicDistribution, DensityNoise, Noise, NoiseBudget, SignalSpec};
use proptest::prelude::*;

/// Atoms on a lattice of spacing `1/4` plus an optional generic offset, so
/// that collisions happen but are exact.
fn atoms(max_len: usize, generic: bool) -> impl Strategy<Value = AtomicDistribution> {
    prop::collection::vec((-12i32..=12, 1u32..100), 1..=max_len).prop_map(move |raw| {
        let total: f64 = raw.iter().map(|r| r.1 as f64).sum();
        let off = if generic { 0.013 } else { 0.0 };
        AtomicDistribution::new(
            raw.into_iter()
                .map(|(v, m)| (v as f64 * 0.25 + off, m as f64 / total))
                .collect(),
        )
        .unwrap()
    })
}

fn signal() -> impl Strategy<Value = SignalSpec> {
    atoms(5, false).prop_filter_map("degenerate", |d| SignalSpec::new(d).ok())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sum_law_conserves_mass_and_is_symmetric(x in atoms(6, false), y in atoms(6, true)) {
        let a = sum_law(&x, &y);
        let b = sum_law(&y, &x);
        prop_assert!(close(a.masses().iter().sum::<f64>(), 1.0, 1e-12));
        prop_assert_eq!(a.len(), b.len());
        for ((va, ma), (vb, mb)) in a.atoms().zip(b.atoms()) {
            prop_assert!(close(va, vb, 1e-12) && close(ma, mb, 1e-12));
        }
    }

    #[test]
    fn sum_law_with_point_mass_shifts(x in atoms(6, false), c in -3.0f64..3.0) {
        let s = sum_law(&x, &AtomicDistribution::point_mass(c));
        prop_assert_eq!(s.masses(), x.masses());
        for (a, b) in s.values().iter().zip(x.values()) {
            prop_assert!(close(*a, b + c, 1e-12));
        }
    }

    #[test]
    fn variances_add(x in atoms(6, false), y in atoms(6, true)) {
        let s = sum_law(&x, &y);
        let range = s.max_value() - s.min_value();
        prop_assert!(close(s.variance(), x.variance() + y.variance(), 1e-9 + s.merge_tol() * range));
        let Moments { mean, .. } = s.moments();
        prop_assert!(close(mean, x.mean() + y.mean(), 1e-12));
    }

    #[test]
    fn centering_is_idempotent(x in atoms(6, true)) {
        let once = x.center();
        let twice = once.center();
        prop_assert!(once.mean().abs() <= 1e-12);
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn atomic_objective_bounds_and_invariances(x in signal(), y in atoms(5, false), c in -2.0f64..2.0, a in 0.2f64..4.0) {
        let r = objective_atomic(&x, &y).unwrap();
        prop_assert!(r.j >= -1e-12 && r.j <= x.variance() + 1e-12);
        let shifted = objective_atomic(&x, &y.shift(c)).unwrap();
        prop_assert!(close(shifted.j, r.j, 1e-9));
        let scaled = objective_atomic(&x.scale(a).unwrap(), &y.scale(a)).unwrap();
        prop_assert!(close(scaled.j, a * a * r.j, 1e-9 * (a * a * r.j).max(1e-300) + 1e-15));
    }

    #[test]
    fn no_collision_noise_keeps_variance(x in signal(), c in 0.001f64..0.1) {
        let y = AtomicDistribution::new(vec![(-c * std::f64::consts::SQRT_2, 0.5), (c * std::f64::consts::SQRT_2, 0.5)]).unwrap();
        prop_assert!(close(objective_atomic(&x, &y).unwrap().j, x.variance(), 1e-12));
    }

    #[test]
    fn posterior_mean_within_signal_range(x in signal(), y in atoms(4, true), sd in 0.05f64..2.0) {
        let q = QuadratureConfig::default();
        let (lo, hi) = (x.dist().min_value(), x.dist().max_value());
        let noises: [Noise; 2] = [y.clone().into(), DensityNoise::gaussian(0.1, sd).unwrap().into()];
        for n in &noises {
            let post = posterior_mean(&x, n, &q).unwrap();
            prop_assert!(post.points.iter().all(|p| p.g >= lo - 1e-12 && p.g <= hi + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn density_objective_bounded_by_variance(x in signal(), m in -1.0f64..1.0, sd in 0.05f64..2.0, w in 0.1f64..0.9) {
        let y = DensityNoise::new(vec![(m, sd, w), (-m, sd * 0.5, 1.0 - w)]).unwrap();
        let r = objective_density(&x, &y, &QuadratureConfig::default()).unwrap();
        prop_assert!(r.j >= 0.0 && r.j <= x.variance() + r.quadrature_error_bound);
        let coarse = QuadratureConfig::default().with_nodes(8);
        let n = objective_density(&x, &y, &coarse).unwrap();
        let n2 = objective_density(&x, &y, &coarse.clone().with_nodes(16)).unwrap();
        prop_assert!((n.j - n2.j).abs() <= n.quadrature_error_bound);
    }

    #[test]
    fn gaussian_smoothing_strictly_decreases(x in signal(), y in atoms(4, false), sigma in 0.2f64..1.5) {
        let before = objective_atomic(&x, &y).unwrap();
        let after = objective_density(&x, &smooth_with_gaussian(&y, sigma).unwrap(), &QuadratureConfig::default()).unwrap();
        prop_assert!(after.j < before.j - after.quadrature_error_bound, "{} vs {}", after.j, before.j);
    }

    #[test]
    fn monte_carlo_is_biased_low(x in signal(), y in atoms(3, false), seed in 0u64..1000) {
        let exact = objective_atomic(&x, &y).unwrap().j;
        let y: Noise = y.into();
        let a = estimate_objective(&x, &y, 20_000, 16, seed).unwrap();
        prop_assert!(a.j_hat <= exact + 3.0 * a.std_error + 1e-12);
        prop_assert_eq!(a, estimate_objective(&x, &y, 20_000, 16, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn weight_search_descends_and_stays_feasible(x in signal(), e in 0.05f64..0.8) {
        let cfg = OptimizerConfig { restarts: 2, ..Default::default() };
        let support = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
        let r = optimize_weights(&x, &support, NoiseBudget::new(e).unwrap(), &cfg).unwrap();
        prop_assert!(r.trace.windows(2).all(|w| w[1].1 <= w[0].1));
        let (m, m2) = r.best_noise.mean_and_second_moment();
        prop_assert!(m.abs() <= cfg.tol_feas && (m2 - e * e).abs() <= cfg.tol_feas);
        let s = optimize_support_and_weights(&x, NoiseBudget::new(e).unwrap(), &cfg).unwrap();
        let (m, m2) = s.best_noise.mean_and_second_moment();
        prop_assert!(m.abs() <= cfg.tol_feas && (m2 - e * e).abs() <= cfg.tol_feas);
        prop_assert!(s.saturation_gap.abs() <= cfg.tol_feas);
    }
}

#[test]
fn curve_dominates_hand_supplied_witnesses() {
    let cfg = OptimizerConfig {
        restarts: 4,
        ..Default::default()
    };
    let q = QuadratureConfig::default();
    let grid = [0.1, 0.25, 0.4];
    for x in [
        SignalSpec::from_atoms(vec![(-0.5, 0.5), (0.5, 0.5)]).unwrap(),
        SignalSpec::from_atoms(vec![(0.0, 0.7), (1.0, 0.3)]).unwrap(),
        SignalSpec::from_atoms(vec![(-1.0, 0.2), (0.0, 0.5), (2.0, 0.3)]).unwrap(),
    ] {
        let curve = trace_l_curve(&x, &grid, &cfg, &q).unwrap();
        for p in &curve {
            let e = p.epsilon;
            let hands: Vec<Noise> = vec![
                AtomicDistribution::new(vec![(-e, 0.5), (e, 0.5)])
                    .unwrap()
                    .into(),
                DensityNoise::gaussian(0.0, e).unwrap().into(),
                AtomicDistribution::new(vec![(-e / 2.0, 0.8), (2.0 * e, 0.2)])
                    .unwrap()
                    .into(),
                DensityNoise::new(vec![(-e * 0.6, e * 0.8, 0.5), (e * 0.6, e * 0.8, 0.5)])
                    .unwrap()
                    .into(),
            ];
            for y in hands {
                let r = objective(&x, &y, &q).unwrap();
                assert!(
                    p.l_hat <= r.j + cfg.tol_obj * x.variance() + r.quadrature_error_bound,
                    "eps {e}: L_hat {} > J {}",
                    p.l_hat,
                    r.j
                );
            }
        }
    }
}

#[test]
fn serialized_types_round_trip() {
    let x = SignalSpec::from_atoms(vec![(0.0, 0.7), (1.0, 0.3)]).unwrap();
    let cfg = OptimizerConfig {
        restarts: 2,
        ..Default::default()
    };
    let q = QuadratureConfig::default();
    let noises: Vec<Noise> = vec![
        AtomicDistribution::new(vec![(-0.1, 0.9), (0.9, 0.1)])
            .unwrap()
            .into(),
        DensityNoise::new(vec![(-0.2, 0.1, 0.5), (0.2, 0.3, 0.5)])
            .unwrap()
            .into(),
    ];
    for n in &noises {
        let back: Noise = serde_json::from_str(&serde_json::to_string(n).unwrap()).unwrap();
        assert_eq!(&back, n);
        let r = objective(&x, n, &q).unwrap();
        let back: ObjectiveReport =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let m = estimate_objective(&x, n, 5_000, 8, 3).unwrap();
        let back: McEstimate = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
    let s = optimize_support_and_weights(&x, NoiseBudget::new(0.3).unwrap(), &cfg).unwrap();
    let back: SolveResult = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    let c = trace_l_curve(&x, &[0.0, 0.2], &cfg, &q).unwrap();
    let back: Vec<LCurvePoint> = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
    for v in [
        serde_json::to_string(&cfg).unwrap(),
        serde_json::to_string(&q).unwrap(),
    ] {
        assert!(v.starts_with('{'));
    }
    let vc = VerifyConfig::default();
    let back: VerifyConfig = serde_json::from_str(&serde_json::to_string(&vc).unwrap()).unwrap();
    assert_eq!(back, vc);
}

#[test]
fn verification_reports_are_reproducible() {
    let plan = BatteryPlan::by_name("quick").unwrap();
    let cfg = VerifyConfig::default();
    let a = run_all(&plan, &cfg, 5);
    let b = run_all(&plan, &cfg, 5);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert!(a.iter().all(TheoremReport::passed));
    assert_eq!(a.len(), 7);
    let back: Vec<TheoremReport> =
        serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn broken_engine_fails_only_data_processing() {
    let plan = BatteryPlan::by_name("sentinel-broken").unwrap();
    let reports = run_all(&plan, &VerifyConfig::default(), 42);
    for r in &reports {
        let expect_fail = r.theorem_id == lfnoise::verify::TheoremId::DataProcessing;
        assert_eq!(!r.passed(), expect_fail, "{:?}", r.theorem_id);
    }
}
