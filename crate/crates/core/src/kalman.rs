//! Classical Kalman filter: initialization, prediction, correction.
//!
//! Step functions take a state by reference and return the next state; the
//! covariance part of the recursion never looks at the observations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::linalg::pinv_psd;
use crate::linalg::{self, serde_matrix, serde_vector};
use crate::ssm::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub t: usize,
    #[serde(with = "serde_vector")]
    pub x_pred: DVector<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_pred: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub x_filt: DVector<f64>,
    #[serde(with = "serde_matrix")]
    pub sigma_filt: DMatrix<f64>,
    /// Kalman gain `M0_t`, `p x q`.
    #[serde(with = "serde_matrix")]
    pub gain: DMatrix<f64>,
    /// Innovation covariance `Delta_t`, `q x q`.
    #[serde(with = "serde_matrix")]
    pub delta: DMatrix<f64>,
}

impl FilterState {
    pub fn dim(&self) -> usize {
        self.x_filt.len()
    }
}

/// `X_{0|0} = a0`, `Sigma_{0|0} = Q0`.
pub fn kf_init(model: &ModelSpec) -> Result<FilterState> {
    model.validate()?;
    let (p, q) = (model.p, model.q);
    Ok(FilterState {
        t: 0,
        x_pred: model.a0.clone(),
        sigma_pred: model.q0.clone(),
        x_filt: model.a0.clone(),
        sigma_filt: model.q0.clone(),
        gain: DMatrix::zeros(p, q),
        delta: DMatrix::zeros(q, q),
    })
}

/// Advance to `t + 1`: `x_pred = F x_filt`, `Sigma_pred = F Sigma_filt F^T + Q`.
///
/// The filtered fields are set to the prediction until `kf_correct` runs.
pub fn kf_predict(state: &FilterState, model: &ModelSpec) -> Result<FilterState> {
    let t = state.t + 1;
    let f = model.f_at(t)?;
    if f.ncols() != state.dim() {
        return Err(Error::dimension("kf_predict", f.ncols(), state.dim()));
    }
    let x_pred = f * &state.x_filt;
    let sigma_pred = linalg::symmetrize(&(f * &state.sigma_filt * f.transpose() + model.q_at(t)?));
    Ok(FilterState {
        t,
        x_filt: x_pred.clone(),
        sigma_filt: sigma_pred.clone(),
        x_pred,
        sigma_pred,
        gain: DMatrix::zeros(model.p, model.q),
        delta: DMatrix::zeros(model.q, model.q),
    })
}

/// Gain, innovation covariance and filtered covariance of a predicted state.
///
/// Shared by the classical and the robust corrections, which differ only in
/// how the innovation enters the mean.
pub(crate) struct CorrectionTerms {
    pub gain: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub sigma_filt: DMatrix<f64>,
    pub innovation: DVector<f64>,
}

pub(crate) fn correction_terms(
    state: &FilterState,
    model: &ModelSpec,
    y: &DVector<f64>,
) -> Result<CorrectionTerms> {
    let t = state.t;
    let z = model.z_at(t.max(1))?;
    if y.len() != z.nrows() {
        return Err(Error::dimension("observation", z.nrows(), y.len()));
    }
    if state.dim() != z.ncols() {
        return Err(Error::dimension("filter state", z.ncols(), state.dim()));
    }
    let (gain, delta, sigma_filt) = covariance_step(&state.sigma_pred, z, model.v_at(t.max(1))?)?;
    let innovation = y - z * &state.x_pred;
    Ok(CorrectionTerms {
        gain,
        delta,
        sigma_filt,
        innovation,
    })
}

/// `(M0, Delta, Sigma_filt)` from a prediction covariance.
pub fn covariance_step(
    sigma_pred: &DMatrix<f64>,
    z: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let delta = linalg::symmetrize(&(z * sigma_pred * z.transpose() + v));
    let gain = sigma_pred * z.transpose() * pinv_psd(&delta)?;
    let p = sigma_pred.nrows();
    let sigma_filt = linalg::symmetrize(&((DMatrix::identity(p, p) - &gain * z) * sigma_pred));
    Ok((gain, delta, sigma_filt))
}

/// Classical correction `x_filt = x_pred + M0 (y - Z x_pred)`.
pub fn kf_correct(state: &FilterState, model: &ModelSpec, y: &DVector<f64>) -> Result<FilterState> {
    let terms = correction_terms(state, model, y)?;
    Ok(FilterState {
        t: state.t,
        x_pred: state.x_pred.clone(),
        sigma_pred: state.sigma_pred.clone(),
        x_filt: &state.x_pred + &terms.gain * &terms.innovation,
        sigma_filt: terms.sigma_filt,
        gain: terms.gain,
        delta: terms.delta,
    })
}

/// One step of the observation-free covariance recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStep {
    pub t: usize,
    pub sigma_pred: DMatrix<f64>,
    pub sigma_filt: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub delta: DMatrix<f64>,
}

/// Riccati recursion for `t = 1..=horizon`.
pub fn riccati(model: &ModelSpec, horizon: usize) -> Result<Vec<CovarianceStep>> {
    model.validate()?;
    let mut sigma = model.q0.clone();
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let f = model.f_at(t)?;
        let sigma_pred = linalg::symmetrize(&(f * &sigma * f.transpose() + model.q_at(t)?));
        let (gain, delta, sigma_filt) =
            covariance_step(&sigma_pred, model.z_at(t)?, model.v_at(t)?)?;
        sigma = sigma_filt.clone();
        out.push(CovarianceStep {
            t,
            sigma_pred,
            sigma_filt,
            gain,
            delta,
        });
    }
    Ok(out)
}

/// Run the classical filter over `ys` (`ys[k]` observed at `t = k + 1`).
pub fn run_classical(model: &ModelSpec, ys: &[DVector<f64>]) -> Result<Vec<FilterState>> {
    let mut state = kf_init(model)?;
    let mut out = Vec::with_capacity(ys.len());
    for y in ys {
        state = kf_correct(&kf_predict(&state, model)?, model, y)?;
        out.push(state.clone());
    }
    Ok(out)
}
