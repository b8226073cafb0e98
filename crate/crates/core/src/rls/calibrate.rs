//! Clipping-height calibration.
//!
//! Radius criterion: `(1 - r) E (|W| - b)_+ = r b`.
//! Efficiency criterion: `E (|W| - b)_+^2 = delta * trace Sigma_filt`, the excess
//! MSE of the clipped correction over the classical one when `E[dX | dY]` is linear.
//! `W = M0 dY` for rLS.AO and `W = (Z^{-1} - M0) dY` for rLS.IO.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{io_transform, serde_height};
use crate::error::{Error, Result};
use crate::expect::{Engine, Functional, MagnitudeLaw};
use crate::linalg;
use crate::root::{positive_root_decreasing, ROOT_RTOL};

/// Residual tolerance for deterministic engines.
pub const DETERMINISTIC_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    Delta,
    Radius,
    RadiusRange,
    /// A user-supplied height.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CalibrationParameter {
    Value(f64),
    Range([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipCalibration {
    #[serde(with = "serde_height")]
    pub b: f64,
    pub method: CalibrationMethod,
    pub parameter: CalibrationParameter,
    pub engine: Engine,
    /// Calibration equation evaluated at `b` (left minus right side).
    pub residual: f64,
    /// Standard error of the left side at `b`; zero for deterministic engines.
    pub std_error: f64,
}

/// Root of a calibration equation with its plug-back residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOutcome {
    pub b: f64,
    pub residual: f64,
    pub std_error: f64,
}

impl RootOutcome {
    fn exact(b: f64) -> Self {
        RootOutcome {
            b,
            residual: 0.0,
            std_error: 0.0,
        }
    }
}

/// `b(r)` for the magnitude law `law`; `b(0) = inf`, `b(1) = 0`.
pub fn radius_root(law: &MagnitudeLaw, r: f64) -> Result<RootOutcome> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!(
            "radius must lie in [0, 1], got {r}"
        )));
    }
    if r == 0.0 {
        return Ok(RootOutcome::exact(f64::INFINITY));
    }
    if r == 1.0 {
        return Ok(RootOutcome::exact(0.0));
    }
    let equation = |b: f64| (1.0 - r) * law.expect(Functional::Excess(b)).value - r * b;
    let b = positive_root_decreasing(equation, ROOT_RTOL)?;
    Ok(RootOutcome {
        b,
        residual: equation(b),
        std_error: law.combined_se(|m| (1.0 - r) * (m - b).max(0.0)),
    })
}

/// `b(delta)` solving `E (|W| - b)_+^2 = target` with `target = delta * trace Sigma_filt`.
///
/// `target = 0` gives `b = inf`. When already `E |W|^2 <= target` every height
/// meets the premium and the smallest one, `b = 0`, is returned with zero residual.
pub fn delta_root(law: &MagnitudeLaw, target: f64) -> Result<RootOutcome> {
    if target.is_nan() || target < 0.0 {
        return Err(Error::Argument(format!(
            "efficiency premium must be non-negative, got {target}"
        )));
    }
    if target == 0.0 {
        return Ok(RootOutcome::exact(f64::INFINITY));
    }
    if law.expect(Functional::Second).value <= target {
        return Ok(RootOutcome::exact(0.0));
    }
    let equation = |b: f64| law.expect(Functional::ExcessSquared(b)).value - target;
    let b = positive_root_decreasing(equation, ROOT_RTOL)?;
    Ok(RootOutcome {
        b,
        residual: equation(b),
        std_error: law.combined_se(|m| (m - b).max(0.0).powi(2)),
    })
}

pub(crate) fn finish(
    law: &MagnitudeLaw,
    root: RootOutcome,
    method: CalibrationMethod,
    parameter: CalibrationParameter,
) -> Result<ClipCalibration> {
    let tol = if law.is_monte_carlo() {
        3.0 * root.std_error + DETERMINISTIC_TOL
    } else {
        DETERMINISTIC_TOL
    };
    if !(root.residual.abs() <= tol) {
        return Err(Error::Numerical(format!(
            "calibration residual {:e} exceeds tolerance {tol:e}",
            root.residual
        )));
    }
    Ok(ClipCalibration {
        b: root.b,
        method,
        parameter,
        engine: law.engine(),
        residual: root.residual,
        std_error: root.std_error,
    })
}

fn innovation_law(
    weight: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    engine: Engine,
) -> Result<MagnitudeLaw> {
    if weight.ncols() != delta.nrows() {
        return Err(Error::dimension(
            "gain columns vs innovation covariance",
            delta.nrows(),
            weight.ncols(),
        ));
    }
    linalg::check_finite(delta, "Delta")?;
    let cov = linalg::symmetrize(&(weight * delta * weight.transpose()));
    MagnitudeLaw::gaussian(&cov, engine)
}

/// `b(r)` for the rLS.AO correction `M0 dY`, `dY ~ N(0, Delta)`.
pub fn calibrate_b_radius(
    gain: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    r: f64,
    engine: Engine,
) -> Result<ClipCalibration> {
    let law = innovation_law(gain, delta, engine)?;
    let root = radius_root(&law, r)?;
    finish(
        &law,
        root,
        CalibrationMethod::Radius,
        CalibrationParameter::Value(r),
    )
}

/// `b(delta)` for the rLS.AO correction.
pub fn calibrate_b_delta(
    gain: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    sigma_filt_trace: f64,
    premium: f64,
    engine: Engine,
) -> Result<ClipCalibration> {
    if premium.is_nan() || premium < 0.0 {
        return Err(Error::Argument(format!(
            "delta must be non-negative, got {premium}"
        )));
    }
    if sigma_filt_trace.is_nan() || sigma_filt_trace < 0.0 {
        return Err(Error::Argument(format!(
            "trace of Sigma_filt must be non-negative, got {sigma_filt_trace}"
        )));
    }
    let law = innovation_law(gain, delta, engine)?;
    let root = delta_root(&law, premium * sigma_filt_trace)?;
    finish(
        &law,
        root,
        CalibrationMethod::Delta,
        CalibrationParameter::Value(premium),
    )
}

fn io_weight(gain: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let z_inv = io_transform(z)?;
    if z_inv.shape() != gain.shape() {
        return Err(Error::dimension(
            "gain",
            format!("{}x{}", z_inv.nrows(), z_inv.ncols()),
            format!("{}x{}", gain.nrows(), gain.ncols()),
        ));
    }
    Ok(z_inv - gain)
}

/// `b(r)` for the rLS.IO residual `(Z^{-1} - M0) dY`.
pub fn calibrate_b_io(
    gain: &DMatrix<f64>,
    z: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    r: f64,
    engine: Engine,
) -> Result<ClipCalibration> {
    let law = innovation_law(&io_weight(gain, z)?, delta, engine)?;
    let root = radius_root(&law, r)?;
    finish(
        &law,
        root,
        CalibrationMethod::Radius,
        CalibrationParameter::Value(r),
    )
}

/// Efficiency calibration of the rLS.IO residual. Under linearity the IO error
/// is the classical error plus `D - H_b(D)`, so the same premium equation applies.
pub fn calibrate_b_io_delta(
    gain: &DMatrix<f64>,
    z: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    sigma_filt_trace: f64,
    premium: f64,
    engine: Engine,
) -> Result<ClipCalibration> {
    if premium.is_nan() || premium < 0.0 {
        return Err(Error::Argument(format!(
            "delta must be non-negative, got {premium}"
        )));
    }
    let law = innovation_law(&io_weight(gain, z)?, delta, engine)?;
    let root = delta_root(&law, premium * sigma_filt_trace)?;
    finish(
        &law,
        root,
        CalibrationMethod::Delta,
        CalibrationParameter::Value(premium),
    )
}
