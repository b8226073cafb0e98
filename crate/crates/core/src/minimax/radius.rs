use serde::{Deserialize, Serialize};

use super::pair::{IdealPair, Residual};
use crate::error::{Error, Result};
use crate::expect::{Engine, Functional, MagnitudeLaw};
use crate::rls::{radius_root, serde_height};
use crate::root::bisect;

/// Grid size of the optimality check.
const GRID_POINTS: usize = 11;
/// Width of the final bracket on `r0`.
const RADIUS_XTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TablePoint {
    pub r: f64,
    #[serde(with = "serde_height")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSolution {
    pub r_l: f64,
    pub r_u: f64,
    pub r0: f64,
    /// Clipping height calibrated at `r0`.
    #[serde(with = "serde_height")]
    pub b_at_r0: f64,
    /// Maximal inefficiency `rho0(r0) = max(A_r0/A_rl, B_r0/B_ru)`.
    pub rho0_at_r0: f64,
    /// `A_r0/A_rl - B_r0/B_ru`; zero when `r_u = 1`.
    pub crossing_residual: f64,
    pub rho0_grid: Vec<TablePoint>,
    pub a_table: Vec<TablePoint>,
    pub b_table: Vec<TablePoint>,
}

struct RadiusTerms {
    law: MagnitudeLaw,
    cond_var: f64,
    second: f64,
}

impl RadiusTerms {
    fn new(ideal: &IdealPair, engine: Engine) -> Result<Self> {
        let law = ideal.magnitude_law(Residual::So, engine)?;
        let cond_var = ideal.moments(engine)?.cond_var_term.value;
        let second = law.expect(Functional::Second).value;
        Ok(RadiusTerms {
            law,
            cond_var,
            second,
        })
    }

    fn b(&self, r: f64) -> Result<f64> {
        Ok(radius_root(&self.law, r)?.b)
    }

    /// `A_r = E trace Cov(X|Y) + E (|D| - b(r))_+^2`.
    fn a(&self, r: f64) -> Result<f64> {
        let b = self.b(r)?;
        Ok(self.cond_var + self.law.expect(Functional::ExcessSquared(b)).value)
    }

    /// `B_r = E |D|^2 - E (|D| - b(r))_+^2 + b(r)^2`; `B_0 = inf`, `B_1 = 0`.
    fn b_term(&self, r: f64) -> Result<f64> {
        let b = self.b(r)?;
        if b == 0.0 {
            return Ok(0.0);
        }
        if b == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        Ok(self.second - self.law.expect(Functional::ExcessSquared(b)).value + b * b)
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!(
            "radius must lie in [0, 1], got {r}"
        )));
    }
    Ok(())
}

/// `A_r`, the ideal-model risk of the procedure calibrated at `r`.
pub fn lfr_a(r: f64, ideal: &IdealPair, engine: Engine) -> Result<f64> {
    check_radius(r)?;
    RadiusTerms::new(ideal, engine)?.a(r)
}

/// `B_r`, the per-unit-radius growth of the procedure's maximal risk.
pub fn lfr_b(r: f64, ideal: &IdealPair, engine: Engine) -> Result<f64> {
    check_radius(r)?;
    RadiusTerms::new(ideal, engine)?.b_term(r)
}

/// Radius `r0` in `[r_l, r_u]` minimizing the maximal inefficiency
/// `rho0(r) = max(A_r/A_rl, B_r/B_ru)` when the true radius is only known to
/// lie in `[r_l, r_u]`.
pub fn solve_least_favorable_radius(
    r_l: f64,
    r_u: f64,
    ideal: &IdealPair,
    engine: Engine,
) -> Result<RadiusSolution> {
    check_radius(r_l)?;
    check_radius(r_u)?;
    if !(r_l < r_u) {
        return Err(Error::Argument(format!(
            "need r_l < r_u, got [{r_l}, {r_u}]"
        )));
    }
    let terms = RadiusTerms::new(ideal, engine)?;
    let a_l = terms.a(r_l)?;
    if !(a_l > 0.0) {
        return Err(Error::Numerical(format!(
            "A at r_l is {a_l}; inefficiencies are undefined"
        )));
    }
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            if i + 1 == GRID_POINTS {
                r_u
            } else {
                r_l + (r_u - r_l) * i as f64 / (GRID_POINTS - 1) as f64
            }
        })
        .collect();
    let a_table = grid
        .iter()
        .map(|&r| {
            Ok(TablePoint {
                r,
                value: terms.a(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let b_table = grid
        .iter()
        .map(|&r| {
            Ok(TablePoint {
                r,
                value: terms.b_term(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if r_u == 1.0 {
        // B_1 = 0: every r < 1 has infinite B-ratio, so r0 = 1 with only the A-ratio left.
        let rho0 = terms.a(1.0)? / a_l;
        let rho0_grid = a_table
            .iter()
            .map(|a| TablePoint {
                r: a.r,
                value: if a.r < 1.0 {
                    f64::INFINITY
                } else {
                    a.value / a_l
                },
            })
            .collect();
        return Ok(RadiusSolution {
            r_l,
            r_u,
            r0: 1.0,
            b_at_r0: 0.0,
            rho0_at_r0: rho0,
            crossing_residual: 0.0,
            rho0_grid,
            a_table,
            b_table,
        });
    }

    let b_u = terms.b_term(r_u)?;
    if !(b_u > 0.0) {
        return Err(Error::Numerical(format!(
            "B at r_u is {b_u}; inefficiencies are undefined"
        )));
    }
    let rho0 = |a: f64, b: f64| (a / a_l).max(b / b_u);
    let crossing = |r: f64| -> f64 {
        match (terms.a(r), terms.b_term(r)) {
            (Ok(a), Ok(b)) => a / a_l - b / b_u,
            _ => f64::NAN,
        }
    };
    let r0 = bisect(crossing, r_l, r_u, RADIUS_XTOL)?;
    let a0 = terms.a(r0)?;
    let b0 = terms.b_term(r0)?;
    let best = rho0(a0, b0);
    let rho0_grid: Vec<TablePoint> = a_table
        .iter()
        .zip(&b_table)
        .map(|(a, b)| TablePoint {
            r: a.r,
            value: rho0(a.value, b.value),
        })
        .collect();
    if let Some(worse) = rho0_grid.iter().find(|pt| pt.value < best * (1.0 - 1e-12)) {
        return Err(Error::Numerical(format!(
            "grid point r = {} has inefficiency {} below the solution's {best}",
            worse.r, worse.value
        )));
    }
    Ok(RadiusSolution {
        r_l,
        r_u,
        r0,
        b_at_r0: terms.b(r0)?,
        rho0_at_r0: best,
        crossing_residual: a0 / a_l - b0 / b_u,
        rho0_grid,
        a_table,
        b_table,
    })
}
