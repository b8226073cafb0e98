//! Seeded Monte Carlo checks against closed-form moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use robkal::diagnostics::normality_probe;
use robkal::expect::Engine;
use robkal::experiment::{run_experiment, ExperimentConfig, Outputs};
use robkal::filter::{Calibration, FilterPlan, FilterSpec};
use robkal::kalman::riccati;
use robkal::rls::{calibrate_b_delta, calibrate_b_io};
use robkal::rng::stream_rng;
use robkal::ssm::{
    contaminate, simulate_ideal, ContaminationLaw, ContaminationSpec, ModelSpec, OutlierKind,
};

const PHI: f64 = 1.618_033_988_749_895;

fn npdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

fn experiment(
    filters: Vec<FilterSpec>,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelSpec::scalar_unit(),
        horizon,
        replications: reps,
        contamination: None,
        filters,
        seed,
        outputs: Outputs::default(),
        diagnostics: None,
    }
}

#[test]
fn random_walk_differences_have_variance_three() {
    // y_t - y_{t-1} = v_t + e_t - e_{t-1}
    let model = ModelSpec::scalar_unit();
    let mut diffs = Vec::new();
    for seed in 0..400 {
        let y = simulate_ideal(&model, 100, seed).unwrap().y;
        diffs.extend(y.windows(2).map(|w| w[1][0] - w[0][0]));
    }
    let (_, var) = mean_var(&diffs);
    // the differences are 1-dependent; a generous SE from the 4th moment with lag correction
    let se = 3.0 * (2.0 / diffs.len() as f64).sqrt() * 2.0;
    assert!((var - 3.0).abs() < 3.0 * se, "var {var}, se {se}");
}

#[test]
fn hit_fraction_is_binomial() {
    let model = ModelSpec::scalar_unit();
    let spec = ContaminationSpec {
        kind: OutlierKind::Ao,
        radius: 0.1,
        law: ContaminationLaw::PointMass {
            value: DVector::from_element(1, 25.0),
        },
        persistent: false,
    };
    let mut hits = 0usize;
    let mut total = 0usize;
    for seed in 0..100 {
        let ideal = simulate_ideal(&model, 100, seed).unwrap();
        let out = contaminate(&model, &ideal, &spec, 10_000 + seed).unwrap();
        hits += out.hits.iter().filter(|h| **h).count();
        total += out.hits.len();
        for (k, hit) in out.hits.iter().enumerate() {
            if *hit {
                assert_eq!(out.y[k][0], ideal.x[k + 1][0] + 25.0);
            }
        }
    }
    let p = hits as f64 / total as f64;
    let half = 2.576 * (0.1 * 0.9 / total as f64).sqrt();
    assert!(
        (p - 0.1).abs() < half,
        "hit fraction {p} outside 0.1 +- {half}"
    );
}

#[test]
fn kalman_mse_matches_filtered_covariance() {
    let cfg = experiment(vec![FilterSpec::Classical], 1000, 1000, 77);
    let report = run_experiment(&cfg).unwrap();
    let f = &report.filters[0];
    for t in [1usize, 10, 100, 1000] {
        let (mse, se) = (f.mse[t - 1], f.mse_se[t - 1]);
        let target = f.trace_sigma_filt[t - 1];
        assert!(
            (mse - target).abs() < 4.0 * se,
            "t={t}: mse {mse} vs {target} (se {se})"
        );
    }
    let agg = f.aggregate.unwrap();
    assert!(
        (agg.value - (PHI - 1.0)).abs() < 4.0 * agg.std_error + 1e-3,
        "aggregate {}",
        agg.value
    );
}

#[test]
fn monte_carlo_standard_error_shrinks_like_root_n() {
    let small = run_experiment(&experiment(vec![FilterSpec::Classical], 20, 100, 3)).unwrap();
    let large = run_experiment(&experiment(vec![FilterSpec::Classical], 20, 10_000, 3)).unwrap();
    let ratio = small.filters[0].mse_se[19] / large.filters[0].mse_se[19];
    assert!((ratio - 10.0).abs() < 3.0, "SE ratio {ratio}");
}

#[test]
fn ideal_model_pays_an_efficiency_premium() {
    let cfg = experiment(
        vec![
            FilterSpec::Classical,
            FilterSpec::rls_ao(Calibration::Radius { r: 0.1 }),
        ],
        50,
        4000,
        11,
    );
    let report = run_experiment(&cfg).unwrap();
    let diff = report.filters[1].paired_difference.unwrap();
    assert!(
        diff.value > 0.0,
        "rLS beat the Kalman filter without outliers: {diff:?}"
    );
}

#[test]
fn delta_calibration_meets_its_premium() {
    // steady state: tau = 1, trace Sigma_filt = phi - 1
    let b = calibrate_b_delta(
        &DMatrix::from_element(1, 1, 1.0 / PHI),
        &DMatrix::from_element(1, 1, PHI * PHI),
        PHI - 1.0,
        0.05,
        Engine::ClosedForm,
    )
    .unwrap()
    .b;
    assert!((b - 1.649_263_249_894_127_3).abs() < 1e-9, "b = {b}");
    let excess = 2.0 * simpson(|w| (w - b).powi(2) * npdf(w), b, b + 14.0, 8000);
    assert!(
        (excess - 0.05 * (PHI - 1.0)).abs() < 1e-10,
        "excess {excess}"
    );
}

#[test]
fn io_calibration_matches_frozen_value() {
    // IO residual weight Z^{-1} - M0 = 1 - 1/phi, spread phi: tau = 1/phi
    let b = calibrate_b_io(
        &DMatrix::from_element(1, 1, 1.0 / PHI),
        &DMatrix::from_element(1, 1, 1.0),
        &DMatrix::from_element(1, 1, PHI * PHI),
        0.1,
        Engine::ClosedForm,
    )
    .unwrap()
    .b;
    assert!((b - 0.704_664_521_118_401_7).abs() < 1e-9, "b = {b}");
    let tau = (1.0 - 1.0 / PHI) * PHI;
    let tail = 2.0 * simpson(|w| (w - b) * npdf(w / tau) / tau, b, b + 14.0 * tau, 8000);
    assert!((0.9 * tail - 0.1 * b).abs() < 1e-10);
}

#[test]
fn plan_schedule_tracks_the_riccati_recursion() {
    let model = ModelSpec::scalar_unit();
    let plan = FilterPlan::new(
        FilterSpec::rls_ao(Calibration::Radius { r: 0.1 }),
        &model,
        80,
    )
    .unwrap();
    let steps = riccati(&model, 80).unwrap();
    for (p, s) in plan.steps.iter().zip(&steps) {
        assert_eq!(p.sigma_pred, s.sigma_pred);
    }
    let b = plan.b_schedule();
    assert!(
        (b[79] - 1.140_171_145_835_742).abs() < 1e-9,
        "steady b {}",
        b[79]
    );
}

#[test]
fn ks_probe_holds_its_level() {
    let reps = 300;
    let mut rejections = 0;
    for k in 0..reps {
        let mut rng = stream_rng(500 + k, 0);
        let v: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        rejections += normality_probe(&v, Some((0.0, 1.0))).unwrap().reject_at_001 as usize;
    }
    // Binomial(300, 0.01): P(X >= 9) < 0.002
    assert!(rejections < 9, "{rejections} rejections out of {reps}");
}
