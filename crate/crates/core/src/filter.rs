//! Whole-trajectory filter runs.
//!
//! A [`FilterPlan`] holds everything that does not depend on the observations:
//! the covariance schedule, the gains and the clipping heights `b_t`. Running a
//! plan over an observation sequence is then only the mean recursion, so one
//! plan serves every replication of an experiment.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expect::{Engine, MagnitudeLaw};
use crate::kalman::{covariance_step, riccati, FilterState};
use crate::linalg;
use crate::minimax::{solve_least_favorable_radius, GaussianPair, IdealPair};
use crate::rls::{
    calibrate_b_delta, calibrate_b_io, calibrate_b_io_delta, calibrate_b_radius, clip, delta_root,
    finish_calibration, io_transform, io_update, radius_root, serde_height, CalibrationMethod,
    CalibrationParameter, ClipCalibration,
};
use crate::rng::{purpose, stream_rng};
use crate::ssm::ModelSpec;

/// How the clipping height is chosen at each time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "kebab-case")]
pub enum Calibration {
    Fixed {
        #[serde(with = "serde_height")]
        b: f64,
    },
    /// `b(r)` from the radius equation.
    Radius { r: f64 },
    /// `b(delta)` from the efficiency premium.
    Delta { delta: f64 },
    /// `b(r0)` at the least favorable radius of `[r_l, r_u]` (rLS.AO only).
    RadiusRange { r_l: f64, r_u: f64 },
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(
                    name,
                    format!("must lie in [0, 1], got {v}"),
                ))
            }
        };
        match *self {
            Calibration::Fixed { b } if b.is_nan() || b < 0.0 => Err(Error::validation(
                "b",
                format!("clipping height must be non-negative, got {b}"),
            )),
            Calibration::Fixed { .. } => Ok(()),
            Calibration::Radius { r } => unit("r", r),
            Calibration::Delta { delta } if !(delta >= 0.0) || delta.is_infinite() => {
                Err(Error::validation(
                    "delta",
                    format!("must be finite and non-negative, got {delta}"),
                ))
            }
            Calibration::Delta { .. } => Ok(()),
            Calibration::RadiusRange { r_l, r_u } => {
                unit("r_l", r_l)?;
                unit("r_u", r_u)?;
                if r_l < r_u {
                    Ok(())
                } else {
                    Err(Error::validation(
                        "r_u",
                        format!("need r_l < r_u, got [{r_l}, {r_u}]"),
                    ))
                }
            }
        }
    }

    fn label(&self) -> String {
        match *self {
            Calibration::Fixed { b } if b.is_infinite() => "b=inf".into(),
            Calibration::Fixed { b } => format!("b={b}"),
            Calibration::Radius { r } => format!("r={r}"),
            Calibration::Delta { delta } => format!("delta={delta}"),
            Calibration::RadiusRange { r_l, r_u } => format!("r={r_l}..{r_u}"),
        }
    }
}

/// Source of the covariance schedule of rLS.AO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// The classical Riccati sequence.
    #[default]
    Classical,
    /// Track `Cov dX` of the robust filter itself with a cloud of ideal-model
    /// filter errors; the clipping height is calibrated on the cloud.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FilterSpec {
    Classical,
    RlsAo {
        calibration: Calibration,
        #[serde(default)]
        engine: Engine,
        #[serde(default)]
        covariance: CovarianceMode,
    },
    RlsIo {
        calibration: Calibration,
        #[serde(default)]
        engine: Engine,
    },
}

impl FilterSpec {
    pub fn rls_ao(calibration: Calibration) -> Self {
        FilterSpec::RlsAo {
            calibration,
            engine: Engine::default(),
            covariance: CovarianceMode::Classical,
        }
    }

    pub fn rls_io(calibration: Calibration) -> Self {
        FilterSpec::RlsIo {
            calibration,
            engine: Engine::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FilterSpec::Classical => Ok(()),
            FilterSpec::RlsAo {
                calibration,
                covariance,
                ..
            } => {
                calibration
                    .validate()
                    .map_err(|e| e.within("calibration"))?;
                if let CovarianceMode::MonteCarlo { samples, .. } = covariance {
                    if *samples < 2 {
                        return Err(Error::validation(
                            "covariance.samples",
                            "need at least 2 samples",
                        ));
                    }
                    if matches!(calibration, Calibration::RadiusRange { .. }) {
                        return Err(Error::validation(
                            "covariance",
                            "radius-range calibration needs the classical covariance schedule",
                        ));
                    }
                }
                Ok(())
            }
            FilterSpec::RlsIo { calibration, .. } => {
                calibration
                    .validate()
                    .map_err(|e| e.within("calibration"))?;
                if matches!(calibration, Calibration::RadiusRange { .. }) {
                    return Err(Error::validation(
                        "calibration",
                        "radius-range is available for rls-ao only",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            FilterSpec::Classical => "classical".into(),
            FilterSpec::RlsAo {
                calibration,
                covariance,
                ..
            } => match covariance {
                CovarianceMode::Classical => format!("rls-ao({})", calibration.label()),
                CovarianceMode::MonteCarlo { .. } => {
                    format!("rls-ao({};mc-cov)", calibration.label())
                }
            },
            FilterSpec::RlsIo { calibration, .. } => format!("rls-io({})", calibration.label()),
        }
    }
}

/// Observation-free quantities of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub t: usize,
    pub sigma_pred: DMatrix<f64>,
    pub sigma_filt: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub b: f64,
    /// `None` for the classical filter.
    pub calibration: Option<ClipCalibration>,
    /// `Z_t^{-1}`, rLS.IO only.
    pub z_inv: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterPlan {
    pub spec: FilterSpec,
    pub steps: Vec<PlanStep>,
}

/// Recalibrates only when the inputs of the calibration change; in the
/// steady state of a constant model that is once.
/// Gain, Delta, Z and Sigma_pred of the last calibration.
type CalibrationKey = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

struct Calibrator {
    last: Option<(CalibrationKey, ClipCalibration)>,
}

impl Calibrator {
    fn get(
        &mut self,
        gain: &DMatrix<f64>,
        delta: &DMatrix<f64>,
        z: &DMatrix<f64>,
        sigma_pred: &DMatrix<f64>,
        compute: impl FnOnce() -> Result<ClipCalibration>,
    ) -> Result<ClipCalibration> {
        if let Some(((g, d, zz, s), cal)) = &self.last {
            if g == gain && d == delta && zz == z && s == sigma_pred {
                return Ok(cal.clone());
            }
        }
        let cal = compute()?;
        self.last = Some((
            (gain.clone(), delta.clone(), z.clone(), sigma_pred.clone()),
            cal.clone(),
        ));
        Ok(cal)
    }
}

fn fixed(b: f64, engine: Engine) -> ClipCalibration {
    ClipCalibration {
        b,
        method: CalibrationMethod::Fixed,
        parameter: CalibrationParameter::Value(b),
        engine,
        residual: 0.0,
        std_error: 0.0,
    }
}

impl FilterPlan {
    pub fn new(spec: FilterSpec, model: &ModelSpec, horizon: usize) -> Result<Self> {
        spec.validate()?;
        model.validate()?;
        model.check_horizon(horizon)?;
        if let FilterSpec::RlsAo {
            calibration,
            engine,
            covariance: CovarianceMode::MonteCarlo { samples, seed },
        } = spec
        {
            let steps = monte_carlo_schedule(model, horizon, calibration, engine, samples, seed)?;
            return Ok(FilterPlan { spec, steps });
        }
        let mut calibrator = Calibrator { last: None };
        let mut steps = Vec::with_capacity(horizon);
        for cs in riccati(model, horizon)? {
            let z = model.z_at(cs.t)?;
            let trace_filt = linalg::trace(&cs.sigma_filt);
            let (calibration, z_inv) =
                match spec {
                    FilterSpec::Classical => (None, None),
                    FilterSpec::RlsAo {
                        calibration,
                        engine,
                        ..
                    } => {
                        let cal = calibrator.get(&cs.gain, &cs.delta, z, &cs.sigma_pred, || {
                            ao_calibration(
                                calibration,
                                engine,
                                &cs.gain,
                                &cs.delta,
                                trace_filt,
                                &cs.sigma_pred,
                                z,
                                model.v_at(cs.t)?,
                            )
                        })?;
                        (Some(cal), None)
                    }
                    FilterSpec::RlsIo {
                        calibration,
                        engine,
                    } => {
                        let cal = calibrator.get(&cs.gain, &cs.delta, z, &cs.sigma_pred, || {
                            match calibration {
                                Calibration::Fixed { b } => Ok(fixed(b, engine)),
                                Calibration::Radius { r } => {
                                    calibrate_b_io(&cs.gain, z, &cs.delta, r, engine)
                                }
                                Calibration::Delta { delta } => calibrate_b_io_delta(
                                    &cs.gain, z, &cs.delta, trace_filt, delta, engine,
                                ),
                                Calibration::RadiusRange { .. } => {
                                    unreachable!("rejected by validate")
                                }
                            }
                        })?;
                        (Some(cal), Some(io_transform(z)?))
                    }
                };
            steps.push(PlanStep {
                t: cs.t,
                b: calibration.as_ref().map_or(f64::INFINITY, |c| c.b),
                sigma_pred: cs.sigma_pred,
                sigma_filt: cs.sigma_filt,
                gain: cs.gain,
                delta: cs.delta,
                calibration,
                z_inv,
            })
        }
        Ok(FilterPlan { spec, steps })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn label(&self) -> String {
        self.spec.label()
    }

    pub fn b_schedule(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.b).collect()
    }

    fn walk(
        &self,
        model: &ModelSpec,
        ys: &[DVector<f64>],
        mut visit: impl FnMut(&PlanStep, DVector<f64>, &DVector<f64>),
    ) -> Result<()> {
        if ys.len() > self.steps.len() {
            return Err(Error::Argument(format!(
                "{} observations but the plan covers {} steps",
                ys.len(),
                self.steps.len()
            )));
        }
        let mut x = model.a0.clone();
        for (step, y) in self.steps.iter().zip(ys) {
            let x_pred = model.f_at(step.t)? * &x;
            let z = model.z_at(step.t)?;
            if y.len() != z.nrows() {
                return Err(Error::dimension(
                    format!("observation at t = {}", step.t),
                    z.nrows(),
                    y.len(),
                ));
            }
            let innovation = y - z * &x_pred;
            x = match (&self.spec, &step.z_inv) {
                (FilterSpec::Classical, _) => &x_pred + &step.gain * &innovation,
                (FilterSpec::RlsAo { .. }, _) => {
                    &x_pred + clip(&(&step.gain * &innovation), step.b)
                }
                (FilterSpec::RlsIo { .. }, Some(z_inv)) => {
                    io_update(&x_pred, z_inv, &step.gain, &innovation, step.b)
                }
                (FilterSpec::RlsIo { .. }, None) => unreachable!("IO plans carry Z^-1"),
            };
            visit(step, x_pred, &x);
        }
        Ok(())
    }

    /// Full filter states for `ys[k]` observed at `t = k + 1`.
    pub fn run(&self, model: &ModelSpec, ys: &[DVector<f64>]) -> Result<Vec<FilterState>> {
        let mut out = Vec::with_capacity(ys.len());
        self.walk(model, ys, |step, x_pred, x_filt| {
            out.push(FilterState {
                t: step.t,
                x_pred,
                sigma_pred: step.sigma_pred.clone(),
                x_filt: x_filt.clone(),
                sigma_filt: step.sigma_filt.clone(),
                gain: step.gain.clone(),
                delta: step.delta.clone(),
            })
        })?;
        Ok(out)
    }

    /// Filtered means only.
    pub fn run_means(&self, model: &ModelSpec, ys: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(ys.len());
        self.walk(model, ys, |_, _, x_filt| out.push(x_filt.clone()))?;
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
fn ao_calibration(
    calibration: Calibration,
    engine: Engine,
    gain: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    trace_filt: f64,
    sigma_pred: &DMatrix<f64>,
    z: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<ClipCalibration> {
    match calibration {
        Calibration::Fixed { b } => Ok(fixed(b, engine)),
        Calibration::Radius { r } => calibrate_b_radius(gain, delta, r, engine),
        Calibration::Delta { delta: premium } => {
            calibrate_b_delta(gain, delta, trace_filt, premium, engine)
        }
        Calibration::RadiusRange { r_l, r_u } => {
            let pair = GaussianPair::new(
                DVector::zeros(sigma_pred.nrows()),
                sigma_pred.clone(),
                z.clone(),
                v.clone(),
            )?;
            let sol = solve_least_favorable_radius(r_l, r_u, &IdealPair::Gaussian(pair), engine)?;
            let mut cal = calibrate_b_radius(gain, delta, sol.r0, engine)?;
            cal.method = CalibrationMethod::RadiusRange;
            cal.parameter = CalibrationParameter::Range([r_l, r_u]);
            Ok(cal)
        }
    }
}

/// rLS.AO schedule with `Cov dX` tracked by a cloud of ideal-model filter errors
/// `e = x - x_hat`: `e_pred = F e + v`, `dY = Z e_pred + eps`,
/// `e_filt = e_pred - H_b(M0 dY)`, where `M0` is formed from the cloud's
/// second moment and `b` is calibrated on the cloud's `|M0 dY|`.
fn monte_carlo_schedule(
    model: &ModelSpec,
    horizon: usize,
    calibration: Calibration,
    engine: Engine,
    samples: usize,
    seed: u64,
) -> Result<Vec<PlanStep>> {
    let mut rng = stream_rng(seed, purpose::MONTE_CARLO);
    let mut normal = |root: &DMatrix<f64>| {
        let z = DVector::from_fn(root.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        root * z
    };
    let q0_root = linalg::sqrt_psd(&model.q0);
    let mut errors: Vec<DVector<f64>> = (0..samples).map(|_| normal(&q0_root)).collect();
    let second_moment = |es: &[DVector<f64>]| {
        let p = es[0].len();
        let mut m = DMatrix::zeros(p, p);
        for e in es {
            m += e * e.transpose();
        }
        linalg::symmetrize(&(m / es.len() as f64))
    };
    let mut steps = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let (f, z) = (model.f_at(t)?, model.z_at(t)?);
        let (q_root, v_root) = (
            linalg::sqrt_psd(model.q_at(t)?),
            linalg::sqrt_psd(model.v_at(t)?),
        );
        for e in errors.iter_mut() {
            *e = f * &*e + normal(&q_root);
        }
        let dys: Vec<DVector<f64>> = errors.iter().map(|e| z * e + normal(&v_root)).collect();
        let sigma_pred = second_moment(&errors);
        let (gain, delta, sigma_kalman) = covariance_step(&sigma_pred, z, model.v_at(t)?)?;
        let corrections: Vec<DVector<f64>> = dys.iter().map(|dy| &gain * dy).collect();
        let law = MagnitudeLaw::Sample {
            values: corrections.iter().map(|c| c.norm()).collect(),
            samples,
            seed,
        };
        let cal = match calibration {
            Calibration::Fixed { b } => fixed(b, engine),
            Calibration::Radius { r } => finish_calibration(
                &law,
                radius_root(&law, r)?,
                CalibrationMethod::Radius,
                CalibrationParameter::Value(r),
            )?,
            Calibration::Delta { delta: premium } => finish_calibration(
                &law,
                delta_root(&law, premium * linalg::trace(&sigma_kalman))?,
                CalibrationMethod::Delta,
                CalibrationParameter::Value(premium),
            )?,
            Calibration::RadiusRange { .. } => unreachable!("rejected by validate"),
        };
        for (e, c) in errors.iter_mut().zip(&corrections) {
            *e -= clip(c, cal.b);
        }
        steps.push(PlanStep {
            t,
            sigma_pred,
            sigma_filt: second_moment(&errors),
            gain,
            delta,
            b: cal.b,
            calibration: Some(cal),
            z_inv: None,
        });
    }
    Ok(steps)
}

/// CSV `t,xhat_1..xhat_p,trace_sigma`, with a `t = 0` row for the prior.
pub fn states_csv(model: &ModelSpec, states: &[FilterState]) -> String {
    let mut out = String::from("t");
    for i in 1..=model.p {
        out.push_str(&format!(",xhat_{i}"));
    }
    out.push_str(",trace_sigma\n");
    let mut row = |t: usize, x: &DVector<f64>, sigma: &DMatrix<f64>| {
        out.push_str(&t.to_string());
        for v in x.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", linalg::trace(sigma)));
    };
    row(0, &model.a0, &model.q0);
    for s in states {
        row(s.t, &s.x_filt, &s.sigma_filt);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{kf_correct, kf_init, kf_predict, run_classical};
    use crate::rls::{rls_ao_step, rls_io_step};
    use crate::ssm::simulate_ideal;

    fn unit_data(t: usize, seed: u64) -> (ModelSpec, Vec<DVector<f64>>) {
        let m = ModelSpec::scalar_unit();
        let traj = simulate_ideal(&m, t, seed).unwrap();
        (m, traj.y)
    }

    #[test]
    fn classical_plan_is_bit_identical() {
        let (m, ys) = unit_data(200, 1);
        let plan = FilterPlan::new(FilterSpec::Classical, &m, 200).unwrap();
        assert_eq!(plan.run(&m, &ys).unwrap(), run_classical(&m, &ys).unwrap());
        let inf = FilterPlan::new(
            FilterSpec::rls_ao(Calibration::Fixed { b: f64::INFINITY }),
            &m,
            200,
        )
        .unwrap();
        assert_eq!(
            inf.run_means(&m, &ys).unwrap(),
            plan.run_means(&m, &ys).unwrap()
        );
    }

    #[test]
    fn ao_plan_matches_step_functions() {
        let (m, ys) = unit_data(100, 2);
        let plan =
            FilterPlan::new(FilterSpec::rls_ao(Calibration::Radius { r: 0.1 }), &m, 100).unwrap();
        let states = plan.run(&m, &ys).unwrap();
        let mut s = kf_init(&m).unwrap();
        for (k, y) in ys.iter().enumerate() {
            s = rls_ao_step(&kf_predict(&s, &m).unwrap(), &m, y, plan.steps[k].b).unwrap();
            assert_eq!(s, states[k]);
        }
    }

    #[test]
    fn io_plan_matches_step_functions() {
        let (m, ys) = unit_data(100, 3);
        let plan =
            FilterPlan::new(FilterSpec::rls_io(Calibration::Radius { r: 0.1 }), &m, 100).unwrap();
        let states = plan.run(&m, &ys).unwrap();
        let mut s = kf_init(&m).unwrap();
        for (k, y) in ys.iter().enumerate() {
            s = rls_io_step(&kf_predict(&s, &m).unwrap(), &m, y, plan.steps[k].b).unwrap();
            assert_eq!(s, states[k]);
        }
    }

    #[test]
    fn reused_calibrations_equal_fresh_ones() {
        let m = ModelSpec::scalar_unit();
        let plan = FilterPlan::new(
            FilterSpec::rls_ao(Calibration::Delta { delta: 0.05 }),
            &m,
            80,
        )
        .unwrap();
        for step in [&plan.steps[0], &plan.steps[40], &plan.steps[79]] {
            let fresh = calibrate_b_delta(
                &step.gain,
                &step.delta,
                linalg::trace(&step.sigma_filt),
                0.05,
                Engine::default(),
            )
            .unwrap();
            assert_eq!(fresh.b, step.b);
        }
        assert!(plan.b_schedule().iter().all(|b| b.is_finite() && *b > 0.0));
    }

    #[test]
    fn monte_carlo_covariance_without_clipping_tracks_riccati() {
        let m = ModelSpec::scalar_unit();
        let spec = FilterSpec::RlsAo {
            calibration: Calibration::Fixed { b: f64::INFINITY },
            engine: Engine::default(),
            covariance: CovarianceMode::MonteCarlo {
                samples: 20_000,
                seed: 9,
            },
        };
        let plan = FilterPlan::new(spec, &m, 30).unwrap();
        let exact = riccati(&m, 30).unwrap();
        for (s, e) in plan.steps.iter().zip(&exact) {
            // second moment of ~N(0, s^2) from n draws has relative sd sqrt(2/n) = 1%
            let rel = (s.sigma_filt[(0, 0)] - e.sigma_filt[(0, 0)]).abs() / e.sigma_filt[(0, 0)];
            assert!(rel < 0.05, "t = {}: {rel}", s.t);
        }
    }

    #[test]
    fn monte_carlo_covariance_with_clipping_is_larger() {
        let m = ModelSpec::scalar_unit();
        let spec = FilterSpec::RlsAo {
            calibration: Calibration::Radius { r: 0.25 },
            engine: Engine::default(),
            covariance: CovarianceMode::MonteCarlo {
                samples: 20_000,
                seed: 4,
            },
        };
        let plan = FilterPlan::new(spec, &m, 30).unwrap();
        let last = plan.steps.last().unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!(last.sigma_pred[(0, 0)] > phi);
        assert!(last.calibration.as_ref().unwrap().engine != Engine::ClosedForm);
    }

    #[test]
    fn radius_range_uses_least_favorable_radius() {
        let m = ModelSpec::scalar_unit();
        let plan = FilterPlan::new(
            FilterSpec::rls_ao(Calibration::RadiusRange {
                r_l: 0.01,
                r_u: 0.5,
            }),
            &m,
            60,
        )
        .unwrap();
        let last = plan.steps.last().unwrap();
        let cal = last.calibration.as_ref().unwrap();
        assert_eq!(cal.method, CalibrationMethod::RadiusRange);
        let lo = calibrate_b_radius(&last.gain, &last.delta, 0.5, Engine::ClosedForm)
            .unwrap()
            .b;
        let hi = calibrate_b_radius(&last.gain, &last.delta, 0.01, Engine::ClosedForm)
            .unwrap()
            .b;
        assert!(lo < cal.b && cal.b < hi);
        assert!(FilterPlan::new(
            FilterSpec::rls_io(Calibration::RadiusRange {
                r_l: 0.01,
                r_u: 0.5
            }),
            &m,
            5
        )
        .is_err());
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let text = r#"{"method":"rls-ao","calibration":{"criterion":"fixed","b":"inf"}}"#;
        let spec: FilterSpec = serde_json::from_str(text).unwrap();
        assert_eq!(
            spec,
            FilterSpec::rls_ao(Calibration::Fixed { b: f64::INFINITY })
        );
        let back: FilterSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let bad = FilterSpec::rls_ao(Calibration::Radius { r: 1.5 });
        match bad.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "calibration.r"),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            FilterSpec::rls_io(Calibration::Radius { r: 0.1 }).label(),
            "rls-io(r=0.1)"
        );
    }

    #[test]
    fn csv_has_prior_row() {
        let (m, ys) = unit_data(3, 5);
        let states = FilterPlan::new(FilterSpec::Classical, &m, 3)
            .unwrap()
            .run(&m, &ys)
            .unwrap();
        let csv = states_csv(&m, &states);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,xhat_1,trace_sigma");
        assert_eq!(lines[1], "0,0,1");
        assert_eq!(lines.len(), 5);
        let s1 = kf_correct(&kf_predict(&kf_init(&m).unwrap(), &m).unwrap(), &m, &ys[0]).unwrap();
        assert_eq!(
            lines[2],
            format!("1,{},{}", s1.x_filt[0], s1.sigma_filt[(0, 0)])
        );
    }

    #[test]
    fn too_many_observations_rejected() {
        let (m, ys) = unit_data(10, 6);
        let plan = FilterPlan::new(FilterSpec::Classical, &m, 5).unwrap();
        assert!(plan.run(&m, &ys).is_err());
    }
}
