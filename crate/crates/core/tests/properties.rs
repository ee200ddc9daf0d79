use grassmann_stream::datagen::{gen_coefficients, gen_dense_truth, trial_rng};
use grassmann_stream::metrics::{overlap_determinant, procrustes_distance};
use grassmann_stream::numerics::project;
use grassmann_stream::{principal_angles, theory, GrouseState, SamplingOperator};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compressive_rate_never_grows_with_distortion(
        zeta in 0.01f64..0.99,
        phi in 0.0f64..1.5,
        m in prop::sample::select(vec![500usize, 1000]),
        a in 1e-6f64..0.3,
        b in 1e-6f64..0.3,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let at = |delta| theory::expected_rate_cs(zeta, 10, m, 5000, delta, phi).map(|r| r.rate);
        if let (Ok(r_lo), Ok(r_hi)) = (at(lo), at(hi)) {
            prop_assert!(r_hi <= r_lo + 1e-12, "rate({hi}) = {r_hi} > rate({lo}) = {r_lo}");
        }
    }

    #[test]
    fn full_data_steps_never_lose_similarity(seed in any::<u64>(), n in 6usize..60, d in 1usize..5) {
        prop_assume!(d < n);
        let mut rng = trial_rng(seed, 0);
        let truth = gen_dense_truth(n, d, &mut rng).unwrap();
        let mut state = GrouseState::init_random(n, d, &mut rng).unwrap();
        let op = SamplingOperator::make_full(n).unwrap();
        let mut before = principal_angles(state.basis(), &truth.basis).unwrap();
        for _ in 0..20 {
            let v = truth.basis.as_matrix() * gen_coefficients(d, &mut rng);
            state.step(&op, &v).unwrap();
            let after = principal_angles(state.basis(), &truth.basis).unwrap();
            prop_assert!(after.zeta >= before.zeta - 1e-12);
            before = after;
        }
    }

    #[test]
    fn undersampled_steps_respect_the_determinant_update(seed in any::<u64>(), gaussian in any::<bool>()) {
        let (n, d, m) = (60, 3, 15);
        let mut rng = trial_rng(seed, 1);
        let truth = gen_dense_truth(n, d, &mut rng).unwrap();
        let mut state = GrouseState::init_random(n, d, &mut rng).unwrap();
        let op = if gaussian {
            SamplingOperator::make_gaussian(m, n, &mut rng).unwrap()
        } else {
            SamplingOperator::make_entrywise(m, n, &mut rng).unwrap()
        };
        let v = truth.basis.as_matrix() * gen_coefficients(d, &mut rng);
        let u = state.basis().clone();
        let Ok(delta) = theory::delta_term(&u, &truth.basis, &op, &v) else { return Ok(()) };
        let det_before = overlap_determinant(&u, &truth.basis).unwrap();
        let rep = state.step(&op, &op.apply(&v).unwrap()).unwrap();
        prop_assume!(rep.status.is_updated());
        let factor = theory::determinant_update_factor(rep.norm_p, rep.norm_r_tilde, rep.norm_r, delta).unwrap();
        let det_after = overlap_determinant(state.basis(), &truth.basis).unwrap();
        let predicted = det_before * factor;
        prop_assert!((det_after - predicted).abs() <= 1e-8 * predicted.abs().max(1e-300));
    }

    #[test]
    fn projection_splits_and_distance_sandwich(seed in any::<u64>(), n in 4usize..40, d in 1usize..4) {
        prop_assume!(d < n);
        let mut rng = trial_rng(seed, 2);
        let a = gen_dense_truth(n, d, &mut rng).unwrap().basis;
        let b = gen_dense_truth(n, d, &mut rng).unwrap().basis;
        let v = b.as_matrix() * gen_coefficients(d, &mut rng);
        let (par, perp) = project(&a, &v).unwrap();
        prop_assert!(((&par + &perp) - &v).norm() <= 1e-12 * v.norm().max(1.0));
        prop_assert!(a.as_matrix().tr_mul(&perp).amax() <= 1e-12 * v.norm().max(1.0));
        let p = principal_angles(&a, &b).unwrap();
        let dist_sq = procrustes_distance(&a, &b).unwrap().powi(2);
        prop_assert!(dist_sq >= p.frob_discrepancy - 1e-9);
        prop_assert!(dist_sq <= 2.0 * p.frob_discrepancy + 1e-9);
    }
}
