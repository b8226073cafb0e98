use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use robkal::diagnostics::linearity_test;
use robkal::expect::Engine;
use robkal::kalman::{kf_correct, kf_init, kf_predict, pinv_psd};
use robkal::rls::{calibrate_b_delta, calibrate_b_radius, huberize, rls_ao_step, rls_io_step};
use robkal::ssm::{
    contaminate, simulate_ideal, ContaminationLaw, ContaminationSpec, ModelSpec, OutlierKind,
};

fn vector(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-50.0..50.0f64, dim).prop_map(DVector::from_vec)
}

fn psd(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    // A A^T with a possibly rank-deficient factor
    (1..=dim, prop::collection::vec(-3.0..3.0f64, dim * dim)).prop_map(move |(rank, v)| {
        let a = DMatrix::from_vec(dim, dim, v);
        let a = a.columns(0, rank).into_owned();
        &a * a.transpose()
    })
}

fn model2() -> impl Strategy<Value = ModelSpec> {
    (
        psd(2),
        psd(2),
        prop::collection::vec(-1.0..1.0f64, 4),
        prop::collection::vec(-2.0..2.0f64, 4),
    )
        .prop_map(|(q, v, f, z)| {
            let v = v + DMatrix::identity(2, 2) * 0.1;
            ModelSpec::constant(
                DMatrix::from_vec(2, 2, f),
                DMatrix::from_vec(2, 2, z),
                q,
                v,
                DVector::zeros(2),
                DMatrix::identity(2, 2),
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn huberize_bounds_norm_and_keeps_direction(w in vector(3), b in 0.01..100.0f64) {
        let h = huberize(&w, b).unwrap();
        prop_assert!(h.norm() <= b * (1.0 + 1e-12));
        prop_assert!(h.norm() <= w.norm() * (1.0 + 1e-12));
        if w.norm() <= b {
            prop_assert_eq!(&h, &w);
        } else {
            // h = c w with c in (0, 1]
            let c = h.dot(&w) / w.norm_squared();
            prop_assert!(c > 0.0 && c <= 1.0);
            prop_assert!((&h - &w * c).norm() <= 1e-12 * w.norm());
        }
    }

    #[test]
    fn huberize_infinite_height_is_identity(w in vector(4)) {
        prop_assert_eq!(huberize(&w, f64::INFINITY).unwrap(), w);
    }

    #[test]
    fn pinv_satisfies_penrose_identities(a in psd(3)) {
        let p = pinv_psd(&a).unwrap();
        let scale = a.norm().max(1.0);
        prop_assert!((&a * &p * &a - &a).norm() <= 1e-8 * scale);
        prop_assert!((&p * &a * &p - &p).norm() <= 1e-8 * p.norm().max(1.0).powi(2) * scale);
        prop_assert!((&a * &p - (&a * &p).transpose()).norm() <= 1e-8);
        prop_assert!((&p * &a - (&p * &a).transpose()).norm() <= 1e-8);
    }

    #[test]
    fn filtered_covariance_is_below_predicted(model in model2()) {
        let mut s = kf_init(&model).unwrap();
        for _ in 0..5 {
            s = kf_predict(&s, &model).unwrap();
            s = kf_correct(&s, &model, &DVector::zeros(2)).unwrap();
            let gap = &s.sigma_pred - &s.sigma_filt;
            let min = gap.symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-9 * s.sigma_pred.norm().max(1.0), "min eigenvalue {}", min);
        }
    }

    #[test]
    fn ao_correction_is_bounded_by_height(model in model2(), y in vector(2), b in 0.01..10.0f64) {
        let s = kf_predict(&kf_init(&model).unwrap(), &model).unwrap();
        let r = rls_ao_step(&s, &model, &y, b).unwrap();
        prop_assert!((&r.x_filt - &s.x_pred).norm() <= b * (1.0 + 1e-12));
    }

    #[test]
    fn infinite_height_matches_classical(model in model2(), y in vector(2)) {
        let s = kf_predict(&kf_init(&model).unwrap(), &model).unwrap();
        let k = kf_correct(&s, &model, &y).unwrap();
        let r = rls_ao_step(&s, &model, &y, f64::INFINITY).unwrap();
        prop_assert_eq!(&k.x_filt, &r.x_filt);
        prop_assert_eq!(&k.sigma_filt, &r.sigma_filt);
    }

    #[test]
    fn io_step_with_infinite_height_matches_classical(y in vector(1)) {
        let model = ModelSpec::scalar_unit();
        let s = kf_predict(&kf_init(&model).unwrap(), &model).unwrap();
        let k = kf_correct(&s, &model, &y).unwrap();
        let r = rls_io_step(&s, &model, &y, f64::INFINITY).unwrap();
        prop_assert!((k.x_filt[0] - r.x_filt[0]).abs() <= 1e-12 * (1.0 + k.x_filt[0].abs()));
    }

    #[test]
    fn radius_calibration_is_decreasing(gain in 0.05..3.0f64, var in 0.1..10.0f64, r in 0.01..0.45f64) {
        let g = DMatrix::from_element(1, 1, gain);
        let d = DMatrix::from_element(1, 1, var);
        let lo = calibrate_b_radius(&g, &d, r, Engine::ClosedForm).unwrap().b;
        let hi = calibrate_b_radius(&g, &d, r + 0.05, Engine::ClosedForm).unwrap().b;
        prop_assert!(hi < lo);
    }

    #[test]
    fn delta_calibration_is_decreasing(gain in 0.05..3.0f64, var in 0.1..10.0f64, delta in 0.001..0.5f64) {
        let g = DMatrix::from_element(1, 1, gain);
        let d = DMatrix::from_element(1, 1, var);
        // trace chosen so the target stays below E|W|^2 and b > 0
        let tr = gain * gain * var;
        let lo = calibrate_b_delta(&g, &d, tr, delta, Engine::ClosedForm).unwrap().b;
        let hi = calibrate_b_delta(&g, &d, tr, delta * 1.5, Engine::ClosedForm).unwrap().b;
        prop_assert!(hi < lo);
    }

    #[test]
    fn linearity_statistic_is_odd_and_rotation_invariant(
        v in prop::collection::vec(-3.0..3.0f64, 40),
        angle in 0.0..std::f64::consts::TAU,
    ) {
        let mut s = DMatrix::from_vec(20, 2, v);
        s[(0, 0)] += 10.0; // keep a clear leading direction
        let t = linearity_test(&s, 0.05).unwrap();
        let neg = linearity_test(&(-&s), 0.05).unwrap();
        prop_assert!((t.t_n + neg.t_n).abs() <= 1e-9 * (1.0 + t.t_n.abs()));
        let (c, sn) = (angle.cos(), angle.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -sn, sn, c]);
        let turned = linearity_test(&(&s * rot.transpose()), 0.05).unwrap();
        prop_assert!((t.t_n.abs() - turned.t_n.abs()).abs() <= 1e-8 * (1.0 + t.t_n.abs()));
        prop_assert!((t.sigma_hat - turned.sigma_hat).abs() <= 1e-9 * t.sigma_hat);
    }

    #[test]
    fn zero_radius_contamination_is_identity(seed in any::<u64>(), kind in 0..3usize) {
        let model = ModelSpec::scalar_unit();
        let ideal = simulate_ideal(&model, 30, seed).unwrap();
        let kind = [OutlierKind::Ao, OutlierKind::Io, OutlierKind::So][kind];
        let spec = ContaminationSpec { kind, radius: 0.0, law: ContaminationLaw::ScaledIdeal { kappa: 5.0 }, persistent: false };
        let out = contaminate(&model, &ideal, &spec, seed ^ 1).unwrap();
        prop_assert_eq!(&out.x, &ideal.x);
        prop_assert_eq!(&out.y, &ideal.y);
        prop_assert!(out.hits.iter().all(|h| !h));
    }

    #[test]
    fn observation_outliers_leave_states_alone(seed in any::<u64>(), so in any::<bool>()) {
        let model = ModelSpec::scalar_unit();
        let ideal = simulate_ideal(&model, 40, seed).unwrap();
        let kind = if so { OutlierKind::So } else { OutlierKind::Ao };
        let spec = ContaminationSpec { kind, radius: 0.3, law: ContaminationLaw::ScaledIdeal { kappa: 10.0 }, persistent: false };
        let out = contaminate(&model, &ideal, &spec, seed ^ 2).unwrap();
        prop_assert_eq!(&out.x, &ideal.x);
        for t in 0..40 {
            if !out.hits[t] {
                prop_assert_eq!(&out.y[t], &ideal.y[t]);
            }
        }
    }

    #[test]
    fn innovation_outliers_leave_observation_errors_alone(seed in any::<u64>()) {
        let model = ModelSpec::scalar_unit();
        let ideal = simulate_ideal(&model, 40, seed).unwrap();
        let spec = ContaminationSpec {
            kind: OutlierKind::Io,
            radius: 0.3,
            law: ContaminationLaw::ScaledIdeal { kappa: 10.0 },
            persistent: false,
        };
        let out = contaminate(&model, &ideal, &spec, seed ^ 3).unwrap();
        for t in 0..40 {
            prop_assert_eq!(&out.obs_errors[t], &ideal.obs_errors[t]);
            let eps = &out.y[t] - &out.x[t + 1];
            let eps_id = &ideal.y[t] - &ideal.x[t + 1];
            prop_assert!((eps - eps_id).norm() <= 1e-9 * (1.0 + out.x[t + 1].norm()));
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let model = ModelSpec::scalar_unit();
        prop_assert_eq!(simulate_ideal(&model, 25, seed).unwrap(), simulate_ideal(&model, 25, seed).unwrap());
    }
}
