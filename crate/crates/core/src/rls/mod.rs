//! Robust least-squares filter steps: the Kalman correction with its
//! innovation term clipped in norm (rLS.AO), and the full-tracking correction
//! with the residual from full tracking clipped (rLS.IO).
//!
//! Clipping heights are plain `f64`, with `f64::INFINITY` meaning "no clipping".

mod calibrate;

pub(crate) use calibrate::finish as finish_calibration;
pub use calibrate::{
    calibrate_b_delta, calibrate_b_io, calibrate_b_io_delta, calibrate_b_radius, delta_root,
    radius_root, CalibrationMethod, CalibrationParameter, ClipCalibration, RootOutcome,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{correction_terms, FilterState};
use crate::linalg;
use crate::ssm::ModelSpec;

/// `w * min(1, b / |w|)`.
pub fn huberize(w: &DVector<f64>, b: f64) -> Result<DVector<f64>> {
    if b.is_nan() || b <= 0.0 {
        return Err(Error::Argument(format!(
            "clipping height must be positive, got {b}"
        )));
    }
    Ok(clip(w, b))
}

/// Huberization extended to `b = 0` (everything clipped away).
pub(crate) fn clip(w: &DVector<f64>, b: f64) -> DVector<f64> {
    if b == f64::INFINITY {
        return w.clone();
    }
    let norm = w.norm();
    if norm <= b {
        w.clone()
    } else {
        w * (b / norm)
    }
}

fn check_height(b: f64) -> Result<()> {
    if b.is_nan() || b < 0.0 {
        return Err(Error::Argument(format!(
            "clipping height must be non-negative, got {b}"
        )));
    }
    Ok(())
}

/// rLS.AO correction `x_filt = x_pred + H_b(M0 (y - Z x_pred))`.
///
/// Covariances follow the classical recursion. `b = 0` freezes the prediction.
pub fn rls_ao_step(
    state: &FilterState,
    model: &ModelSpec,
    y: &DVector<f64>,
    b: f64,
) -> Result<FilterState> {
    check_height(b)?;
    let terms = correction_terms(state, model, y)?;
    let correction = clip(&(&terms.gain * &terms.innovation), b);
    Ok(FilterState {
        t: state.t,
        x_pred: state.x_pred.clone(),
        sigma_pred: state.sigma_pred.clone(),
        x_filt: &state.x_pred + correction,
        sigma_filt: terms.sigma_filt,
        gain: terms.gain,
        delta: terms.delta,
    })
}

/// `Z^{-1}` for the IO step; square invertible observation matrices only.
pub fn io_transform(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.nrows() != z.ncols() {
        return Err(Error::Unsupported(format!(
            "rLS.IO needs p = q, observation matrix is {}x{}",
            z.nrows(),
            z.ncols()
        )));
    }
    linalg::checked_inverse(z, "observation matrix Z")
}

/// The IO mean update given `Z^{-1}`, `M0` and the innovation.
pub(crate) fn io_update(
    x_pred: &DVector<f64>,
    z_inv: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    innovation: &DVector<f64>,
    b: f64,
) -> DVector<f64> {
    if b == f64::INFINITY {
        return x_pred + gain * innovation;
    }
    let track = z_inv * innovation;
    let residual = &track - gain * innovation;
    x_pred + track - clip(&residual, b)
}

/// rLS.IO correction `x_filt = x_pred + Z^{-1} dy - H_b(Z^{-1} dy - M0 dy)`.
///
/// `b = inf` is the classical correction, `b = 0` follows the observation.
pub fn rls_io_step(
    state: &FilterState,
    model: &ModelSpec,
    y: &DVector<f64>,
    b: f64,
) -> Result<FilterState> {
    check_height(b)?;
    let z_inv = io_transform(model.z_at(state.t.max(1))?)?;
    let terms = correction_terms(state, model, y)?;
    Ok(FilterState {
        t: state.t,
        x_pred: state.x_pred.clone(),
        sigma_pred: state.sigma_pred.clone(),
        x_filt: io_update(&state.x_pred, &z_inv, &terms.gain, &terms.innovation, b),
        sigma_filt: terms.sigma_filt,
        gain: terms.gain,
        delta: terms.delta,
    })
}

/// Serde adapter writing infinite clipping heights as `"inf"`.
pub mod serde_height {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(b: &f64, s: S) -> Result<S::Ok, S::Error> {
        if b.is_infinite() && *b > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*b)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" || t == "+inf" || t == "infinity" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(D::Error::custom(format!(
                "expected a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// [`serde_height`] for sequences of heights.
pub mod serde_heights {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, serde::Deserialize)]
    struct H(#[serde(with = "super::serde_height")] f64);

    pub fn serialize<S: Serializer>(bs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(bs.len()))?;
        for b in bs {
            seq.serialize_element(&H(*b))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<H>::deserialize(d)?.into_iter().map(|h| h.0).collect())
    }
}
