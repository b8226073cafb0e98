//! Bracketing bisection.

use crate::error::{Error, Result};

/// Smallest lower bracket used for positive roots.
pub const BRACKET_LOWER: f64 = 1e-12;
/// Upper brackets are doubled from 1.0 up to this cap.
pub const BRACKET_CAP: f64 = 1e12;
/// Default relative width at which bisection stops.
pub const ROOT_RTOL: f64 = 1e-12;

const MAX_ITER: usize = 500;

/// Root of a non-increasing `f` on `(0, inf)` with `f(0+) > 0`.
///
/// The upper bracket starts at 1.0 and is doubled until `f <= 0`; beyond
/// `BRACKET_CAP` the search stops with a numerical error.
pub fn positive_root_decreasing<F: FnMut(f64) -> f64>(mut f: F, rtol: f64) -> Result<f64> {
    let mut lo = BRACKET_LOWER;
    let f_lo = f(lo);
    if f_lo.is_nan() {
        return Err(Error::Numerical("objective is NaN at lower bracket".into()));
    }
    if f_lo <= 0.0 {
        return bisect(&mut f, 0.0, lo, rtol * lo);
    }
    let mut hi = 1.0_f64;
    loop {
        let v = f(hi);
        if v.is_nan() {
            return Err(Error::Numerical(format!("objective is NaN at {hi}")));
        }
        if v <= 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > BRACKET_CAP {
            return Err(Error::Numerical(format!(
                "no sign change below bracket cap {BRACKET_CAP:e}"
            )));
        }
    }
    bisect_rel(&mut f, lo, hi, rtol)
}

fn bisect_rel<F: FnMut(f64) -> f64>(f: &mut F, mut lo: f64, mut hi: f64, rtol: f64) -> Result<f64> {
    let f_lo_pos = f(lo) > 0.0;
    for _ in 0..MAX_ITER {
        if hi - lo <= rtol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == f_lo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisection on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs (or one is zero).
/// Stops once the bracket is narrower than `xtol` or cannot shrink further.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.is_nan() || f_hi.is_nan() || (f_lo > 0.0) == (f_hi > 0.0) {
        return Err(Error::Numerical(format!(
            "bisection bracket [{lo}, {hi}] has no sign change ({f_lo}, {f_hi})"
        )));
    }
    let lo_positive = f_lo > 0.0;
    for _ in 0..MAX_ITER {
        if hi - lo <= xtol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if (v > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
