use std::sync::Arc;

use flamespeed_core::discount::{solve_discounted, DiscountProblem};
use flamespeed_core::{
    check_quasiconvex, sample_field, Branch, EffectiveConfig, EffectiveHamiltonian, FieldSpec, StrainHamiltonian,
};
use proptest::prelude::*;

fn periodic(amplitude: f64) -> Arc<flamespeed_core::FieldRealization> {
    Arc::new(sample_field(&FieldSpec::periodic(amplitude, 1.0)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn branch_roots_sit_on_the_level(
        x in 0.0..10.0f64,
        c in 0.0..20.0f64,
        m in 0.1..1.0f64,
        lift in 1e-3..5.0f64,
    ) {
        let h = StrainHamiltonian::shear(periodic(0.5), m, c).unwrap();
        let (p_star, h_min) = h.critical_point(x);
        let level = h_min + lift;
        let roots = h.branch_roots(x, level).unwrap();
        prop_assert!(roots.q_minus < p_star && p_star < roots.q_plus);
        for q in [roots.q_minus, roots.q_plus] {
            let err = (h.eval_h(q, x) - level).abs();
            prop_assert!(err <= 1e-12 * level.abs().max(1.0) * (1.0 + c), "residual {err:e}");
        }
    }

    #[test]
    fn pointwise_hamiltonian_is_quasiconvex(
        x in 0.0..10.0f64,
        c in 0.0..20.0f64,
        m in 0.1..1.0f64,
        amplitude in 0.0..1.0f64,
    ) {
        let h = StrainHamiltonian::shear(periodic(amplitude), m, c).unwrap();
        let reach = 3.0 + 2.0 * c * h.strain_sup_bound();
        let samples: Vec<(f64, f64)> = (0..=400)
            .map(|i| -reach + 2.0 * reach * i as f64 / 400.0)
            .map(|p| (p, h.eval_h(p, x)))
            .collect();
        prop_assert!(check_quasiconvex(&samples, 1e-12).unwrap().passed());
    }

    #[test]
    fn critical_point_is_the_minimum(x in 0.0..10.0f64, c in 0.0..50.0f64, m in 0.1..1.0f64) {
        let h = StrainHamiltonian::shear(periodic(0.5), m, c).unwrap();
        let (p_star, h_min) = h.critical_point(x);
        prop_assert!(h.eval_dhdp(p_star, x).abs() <= 1e-12 * (1.0 + c));
        for dp in [-1e-3, 1e-3, -0.5, 0.5] {
            prop_assert!(h.eval_h(p_star + dp, x) >= h_min - 1e-14);
        }
    }

    #[test]
    fn field_spec_round_trips(
        amplitudes in prop::collection::vec(-1.0..1.0f64, 1..4),
        seed in any::<u64>(),
    ) {
        let freqs = [1.0, 2f64.sqrt(), 3f64.sqrt(), 5f64.sqrt()];
        let spec = FieldSpec::random_phase(amplitudes.clone(), freqs[..amplitudes.len()].to_vec(), seed);
        let json = serde_json::to_string(&spec).unwrap();
        let back: FieldSpec = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &spec);
        let (a, b) = (sample_field(&spec).unwrap(), sample_field(&back).unwrap());
        for x in [0.0, 1.3, 77.7] {
            prop_assert_eq!(a.eval_pair(x), b.eval_pair(x));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn zero_field_effective_is_the_constant_hamiltonian(
        m in 0.1..1.0f64,
        c in 0.0..5.0f64,
        p in -3.0..3.0f64,
    ) {
        let zero = Arc::new(sample_field(&FieldSpec::zero()).unwrap());
        let h = StrainHamiltonian::shear(zero, m, c).unwrap();
        let eff = EffectiveHamiltonian::build(h, &EffectiveConfig::with_window(10.0)).unwrap();
        prop_assert!((eff.eval(p).unwrap() - m.hypot(p)).abs() <= 1e-8);
    }

    #[test]
    fn branch_inversion_round_trips(c in 0.0..2.0f64, lift in 0.05..3.0f64, upper in any::<bool>()) {
        let h = StrainHamiltonian::shear(periodic(0.5), 0.6, c).unwrap();
        let eff = EffectiveHamiltonian::build(h, &EffectiveConfig::with_window(50.0)).unwrap();
        let (lo, hi) = eff.flat_interval();
        let (p, branch) = if upper { (hi + lift, Branch::Upper) } else { (lo - lift, Branch::Lower) };
        let mu = eff.mu_branch(p, branch).unwrap();
        prop_assert!(mu > eff.flat_level());
        prop_assert!((eff.p_branch(mu, branch).unwrap().value - p).abs() <= 1e-6);
    }

    #[test]
    fn mirrored_problem_reflects_the_slope(c in 0.0..2.0f64, p in -2.5..2.5f64) {
        let h = StrainHamiltonian::shear(periodic(0.5), 0.6, c).unwrap();
        let cfg = EffectiveConfig::with_window(50.0);
        let direct = EffectiveHamiltonian::build(h.clone(), &cfg).unwrap().eval(p).unwrap();
        let mirrored = EffectiveHamiltonian::build(h.mirrored(), &cfg).unwrap().eval(-p).unwrap();
        prop_assert!((direct - mirrored).abs() <= 1e-9, "{direct} vs {mirrored}");
    }

    #[test]
    fn discount_source_shifts_the_estimate(c in 0.0..1.0f64, source in -2.0..2.0f64) {
        let h = StrainHamiltonian::shear(periodic(0.5), 0.6, c).unwrap();
        let base = DiscountProblem { domain_factor: 3.0, ..DiscountProblem::new(0.2, 0.8, 0.1) };
        let a = solve_discounted(&base, &h).unwrap().estimate;
        let b = solve_discounted(&DiscountProblem { source, ..base }, &h).unwrap().estimate;
        prop_assert!((b - (a - source)).abs() <= 1e-8);
    }

    #[test]
    fn discount_estimate_is_bounded_by_the_frozen_hamiltonian(c in 0.0..1.0f64, p in -1.5..1.5f64) {
        // comparison with the constant sub- and supersolutions
        let h = StrainHamiltonian::shear(periodic(0.5), 0.6, c).unwrap();
        let problem = DiscountProblem { domain_factor: 3.0, ..DiscountProblem::new(0.2, p, 0.1) };
        let est = solve_discounted(&problem, &h).unwrap().estimate;
        let frozen: Vec<f64> = (0..200).map(|i| h.eval_h(p, i as f64 / 200.0)).collect();
        let (lo, hi) = frozen.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        prop_assert!(est >= lo - 1e-6 && est <= hi + 1e-6, "{lo} <= {est} <= {hi}");
    }
}
