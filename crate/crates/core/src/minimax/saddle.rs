use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::pair::{GaussianPair, IdealPair, Residual};
use crate::error::{Error, Result};
use crate::expect::{mean_and_se, Engine, Estimate, Functional, MagnitudeLaw};
use crate::linalg;
use crate::rls::clip;
use crate::rng::{stream_rng, StreamRng};
use crate::root::{positive_root_decreasing, BRACKET_LOWER, ROOT_RTOL};

/// Solved saddle point of the one-step SO (or IO) problem at radius `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub r: f64,
    pub problem: Residual,
    /// Clipping multiplier `rho`.
    pub rho: f64,
    /// Minimax risk `trace Cov X - (1 - r) E[|D|^2 min(1, rho/|D|)]`.
    pub risk: f64,
    /// `|H(rho) - 1|`, i.e. how far the least favorable law is from a probability.
    pub normalization_residual: f64,
    /// Engine error of `risk`.
    pub std_error: f64,
    pub engine: Engine,
}

/// `H(s) = (1 - r)/r * E (|D|/s - 1)_+`; the multiplier solves `H(rho) = 1`.
fn h_function(law: &MagnitudeLaw, r: f64, s: f64) -> f64 {
    (1.0 - r) / r * law.expect(Functional::RelativeExcess(s)).value
}

fn rho_root(law: &MagnitudeLaw, r: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 || r >= 1.0 {
        return Err(Error::Argument(format!(
            "saddle point needs 0 < r < 1 (H is degenerate at the boundary), got {r}"
        )));
    }
    let g = |s: f64| h_function(law, r, s) - 1.0;
    if !(g(BRACKET_LOWER) > 0.0) {
        return Err(Error::Numerical(
            "H never exceeds 1: the clipped residual vanishes under the ideal law".into(),
        ));
    }
    positive_root_decreasing(g, ROOT_RTOL)
}

fn saddle_from_law(
    law: &MagnitudeLaw,
    r: f64,
    problem: Residual,
    total: Estimate,
) -> Result<SaddlePoint> {
    let rho = rho_root(law, r)?;
    let weighted = law.expect(Functional::WeightedSecond(rho));
    let risk = total.value - (1.0 - r) * weighted.value;
    let std_error = (total.std_error.powi(2) + ((1.0 - r) * weighted.std_error).powi(2)).sqrt();
    Ok(SaddlePoint {
        r,
        problem,
        rho,
        risk,
        normalization_residual: (h_function(law, r, rho) - 1.0).abs(),
        std_error,
        engine: law.engine(),
    })
}

/// Multiplier and value of the SO minimax problem.
pub fn solve_rho(ideal: &IdealPair, r: f64, engine: Engine) -> Result<SaddlePoint> {
    let law = ideal.magnitude_law(Residual::So, engine)?;
    let moments = ideal.moments(engine)?;
    saddle_from_law(&law, r, Residual::So, moments.trace_cov_x)
}

/// The IO problem in the additive form: `D` replaced by `D~(y) = y - E[X | y]`.
///
/// Estimating `X` by `f1(y) = y - E eps - H_rho(D~(y))` is estimating the noise
/// by its clipped conditional mean, so the value uses `trace Cov eps`.
pub fn io_saddle(ideal: &IdealPair, r: f64, engine: Engine) -> Result<SaddlePoint> {
    ideal.check_additive()?;
    let law = ideal.magnitude_law(Residual::Io, engine)?;
    let noise = ideal.moments(engine)?.trace_cov_noise.ok_or_else(|| {
        Error::Unsupported("IO problem needs an additive observation model".into())
    })?;
    saddle_from_law(&law, r, Residual::Io, noise)
}

/// `rho` for a Gaussian pair with the default engine (closed form for scalar `y`).
pub fn gaussian_rho(pair: &GaussianPair, r: f64) -> Result<f64> {
    let law = MagnitudeLaw::gaussian(&pair.residual_cov(Residual::So)?, Engine::default())?;
    rho_root(&law, r)
}

/// Density of the least favorable contaminating law relative to the ideal
/// marginal of `Y` and density of the contaminated marginal relative to it:
/// `((1 - r)/r (|D(y)|/rho - 1)_+, (1 - r) + r * di)`.
pub fn lf_density_weight(
    y: &DVector<f64>,
    sp: &SaddlePoint,
    ideal: &IdealPair,
) -> Result<(f64, f64)> {
    let d = ideal.residual(sp.problem, y)?.norm();
    let r = sp.r;
    let di = (1.0 - r) / r * (d / sp.rho - 1.0).max(0.0);
    Ok((di, (1.0 - r) + r * di))
}

/// Contaminating law of `Y` for risk evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Contamination {
    PointMass(DVector<f64>),
    Sample(Vec<DVector<f64>>),
}

/// Risk of the clipped conditional mean `f(y) = E X + H_rho(D(y))` when `Y` is
/// replaced with probability `r` by an independent draw from `contamination`:
///
/// `(1 - r)(E_id trace Cov(X|Y) + E_id (|D| - rho)_+^2) + r trace Cov X + r E_P min(|D|, rho)^2`.
///
/// `rho = inf` gives the classical conditional mean.
pub fn risk_under_contamination(
    ideal: &IdealPair,
    rho: f64,
    r: f64,
    contamination: &Contamination,
    engine: Engine,
) -> Result<Estimate> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!(
            "radius must lie in [0, 1], got {r}"
        )));
    }
    if rho.is_nan() || rho < 0.0 {
        return Err(Error::Argument(format!(
            "clipping threshold must be non-negative, got {rho}"
        )));
    }
    let law = ideal.magnitude_law(Residual::So, engine)?;
    let moments = ideal.moments(engine)?;
    let excess = law.expect(Functional::ExcessSquared(rho));
    let clipped = |y: &DVector<f64>| -> Result<f64> {
        let d = ideal.residual(Residual::So, y)?.norm();
        Ok(d.min(rho).powi(2))
    };
    let outlier = match contamination {
        Contamination::PointMass(y) => Estimate::exact(clipped(y)?),
        Contamination::Sample(ys) => {
            if ys.is_empty() {
                return Err(Error::Argument("contamination sample is empty".into()));
            }
            let vals = ys.iter().map(clipped).collect::<Result<Vec<_>>>()?;
            let mut est = mean_and_se(vals.into_iter());
            if !est.std_error.is_finite() {
                est.std_error = 0.0;
            }
            est
        }
    };
    let value = (1.0 - r) * (moments.cond_var_term.value + excess.value)
        + r * moments.trace_cov_x.value
        + r * outlier.value;
    let std_error = ((1.0 - r).powi(2)
        * (moments.cond_var_term.std_error.powi(2) + excess.std_error.powi(2))
        + r * r * (moments.trace_cov_x.std_error.powi(2) + outlier.std_error.powi(2)))
    .sqrt();
    Ok(Estimate { value, std_error })
}

/// Full Monte Carlo risk of `f(y) = E X + H_rho(D(y))` for a Gaussian pair:
/// with probability `r` the observation is replaced by `contaminant(rng)`,
/// independent of `X`; otherwise `(X, Y)` is ideal.
pub fn simulate_risk<F>(
    pair: &GaussianPair,
    rho: f64,
    r: f64,
    mut contaminant: F,
    samples: usize,
    seed: u64,
) -> Result<Estimate>
where
    F: FnMut(&mut StreamRng) -> Result<DVector<f64>>,
{
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!(
            "radius must lie in [0, 1], got {r}"
        )));
    }
    if samples < 2 {
        return Err(Error::Argument(
            "Monte Carlo risk needs at least two samples".into(),
        ));
    }
    let root_x = linalg::sqrt_psd(pair.sigma_x());
    let root_v = linalg::sqrt_psd(pair.v());
    let mut rng = stream_rng(seed, crate::rng::purpose::MONTE_CARLO);
    let normals = |rng: &mut StreamRng, n: usize| {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let mut losses = Vec::with_capacity(samples);
    for _ in 0..samples {
        let hit = rng.random::<f64>() < r;
        let x = pair.mean_x() + &root_x * normals(&mut rng, pair.p());
        let y = if hit {
            contaminant(&mut rng)?
        } else {
            pair.z() * &x + &root_v * normals(&mut rng, pair.q())
        };
        if y.len() != pair.q() {
            return Err(Error::dimension(
                "contaminating observation",
                pair.q(),
                y.len(),
            ));
        }
        let estimate = pair.mean_x() + clip(&pair.d(&y), rho);
        losses.push((x - estimate).norm_squared());
    }
    Ok(mean_and_se(losses.into_iter()))
}

/// The eSO value `SO value + r (G - E|X|^2)`.
pub fn eso_value(sp: &SaddlePoint, g: f64, second_moment_x: f64) -> Result<f64> {
    if g.is_nan() || g < second_moment_x {
        return Err(Error::Argument(format!(
            "second-moment bound G = {g} is below E|X|^2 = {second_moment_x}"
        )));
    }
    Ok(sp.risk + sp.r * (g - second_moment_x))
}

/// Minimax risk over the extended SO neighbourhood with bound `G` on `E|X_di|^2`.
pub fn minimax_risk_eso(ideal: &IdealPair, r: f64, g: f64, engine: Engine) -> Result<f64> {
    let sp = solve_rho(ideal, r, engine)?;
    let m2 = ideal.moments(engine)?.second_moment_x.value;
    eso_value(&sp, g, m2)
}

/// One draw from the least favorable contaminating law of a pair with scalar `y`.
///
/// With `u = y - E Y`, `kappa = rho/|M0|` and `sigma^2 = Delta`, the law of `u` has
/// density proportional to `phi(u/sigma)(|u| - kappa)_+`. Writing `|u| = kappa + w`,
/// `w` has density proportional to `w exp(-w^2/2sigma^2) exp(-kappa w/sigma^2)`:
/// a Rayleigh proposal accepted with probability `exp(-kappa w / sigma^2)`.
pub fn sample_least_favorable<R: Rng + ?Sized>(
    pair: &GaussianPair,
    rho: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if pair.q() != 1 {
        return Err(Error::Unsupported(
            "least favorable sampling needs a scalar observation".into(),
        ));
    }
    let slope = pair.gain().norm();
    let sigma = pair.delta()[(0, 0)].sqrt();
    if !(slope > 0.0 && sigma > 0.0) || !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Numerical(
            "least favorable law is degenerate for this pair".into(),
        ));
    }
    let kappa = rho / slope;
    const MAX_TRIES: usize = 100_000_000;
    for _ in 0..MAX_TRIES {
        let u1: f64 = rng.random();
        let w = sigma * (-2.0 * (1.0 - u1).ln()).sqrt();
        let u2: f64 = rng.random();
        if u2 < (-kappa * w / (sigma * sigma)).exp() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            return Ok(DVector::from_element(
                1,
                pair.mean_y()[0] + sign * (kappa + w),
            ));
        }
    }
    Err(Error::Numerical(
        "least favorable sampler did not accept a proposal".into(),
    ))
}

/// Density trace `(y, p_id, p_re, p_di)` on `points` equispaced values over
/// `E Y +- 6 sd(Y)`, for Gaussian pairs with scalar `y`.
pub fn density_trace(
    pair: &GaussianPair,
    sp: &SaddlePoint,
    points: usize,
) -> Result<Vec<[f64; 4]>> {
    if pair.q() != 1 {
        return Err(Error::Unsupported(
            "density traces need a scalar observation".into(),
        ));
    }
    if points < 2 {
        return Err(Error::Argument(
            "density trace needs at least two points".into(),
        ));
    }
    let ideal = IdealPair::Gaussian(pair.clone());
    let mu = pair.mean_y()[0];
    let sd = pair.delta()[(0, 0)].sqrt();
    let (lo, hi) = (mu - 6.0 * sd, mu + 6.0 * sd);
    (0..points)
        .map(|i| {
            let y = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let p_id = crate::expect::std_normal_pdf((y - mu) / sd) / sd;
            let (di, re) = lf_density_weight(&DVector::from_element(1, y), sp, &ideal)?;
            Ok([y, p_id, re * p_id, di * p_id])
        })
        .collect()
}

pub fn density_trace_csv(rows: &[[f64; 4]]) -> String {
    let mut out = String::from("y,p_id,p_re,p_di\n");
    for row in rows {
        let _ = writeln!(out, "{},{},{},{}", row[0], row[1], row[2], row[3]);
    }
    out
}
