//! Expectation engines for functionals of a magnitude `|W|`.
//!
//! Every calibration and saddle-point equation in the crate is an expectation
//! of a function of the norm of one random vector (`M0 dY`, `D(Y)`, ...). The
//! engines differ only in how that law is represented:
//!
//! * folded normal: `W` is (numerically) rank-one Gaussian, `|W| ~ |N(0, tau^2)|`,
//!   closed forms below;
//! * line quadrature: `W = D(y)` for a scalar `y` with a known density, adaptive
//!   Gauss-Kronrod over the real line;
//! * Monte Carlo: a seeded sample of `|W|`, with a standard error.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::quad;
use crate::rng::{purpose, stream_rng};

pub const DEFAULT_MC_SAMPLES: usize = 100_000;
const QUAD_ABS_TOL: f64 = 1e-13;
const QUAD_REL_TOL: f64 = 1e-13;

/// How expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Engine {
    /// Closed form when the law allows it, Monte Carlo otherwise.
    Auto {
        samples: usize,
        seed: u64,
    },
    #[serde(rename = "closed-form-1d")]
    ClosedForm,
    Quadrature,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

impl Default for Engine {
    fn default() -> Self {
        Engine::Auto {
            samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

/// A value with its engine error: zero for closed forms, the quadrature error
/// estimate, or the Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
        }
    }
}

/// Functionals `E g(|W|)` needed by the calibration and minimax equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// `E (|W| - b)_+`
    Excess(f64),
    /// `E (|W| - b)_+^2`
    ExcessSquared(f64),
    /// `E (|W|/s - 1)_+`
    RelativeExcess(f64),
    /// `E |W|^2`
    Second,
    /// `E |W|^2 min(1, rho/|W|) = E |W| min(|W|, rho)`
    WeightedSecond(f64),
    /// `E min(|W|, rho)^2`
    ClippedSquared(f64),
}

impl Functional {
    pub fn eval(&self, m: f64) -> f64 {
        match *self {
            Functional::Excess(b) => (m - b).max(0.0),
            Functional::ExcessSquared(b) => (m - b).max(0.0).powi(2),
            Functional::RelativeExcess(s) => (m / s - 1.0).max(0.0),
            Functional::Second => m * m,
            Functional::WeightedSecond(rho) => m * m.min(rho),
            Functional::ClippedSquared(rho) => m.min(rho).powi(2),
        }
    }

    /// Threshold where the integrand has a kink, if any.
    fn kink(&self) -> Option<f64> {
        match *self {
            Functional::Excess(b)
            | Functional::ExcessSquared(b)
            | Functional::RelativeExcess(b) => Some(b),
            Functional::WeightedSecond(r) | Functional::ClippedSquared(r) => Some(r),
            Functional::Second => None,
        }
        .filter(|v| v.is_finite())
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Upper tail `P(N(0,1) > z)`, accurate far into the tail.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Closed forms for `|W|` with `W ~ N(0, tau^2)`.
pub fn folded_normal(tau: f64, functional: Functional) -> f64 {
    if tau == 0.0 {
        return functional.eval(0.0);
    }
    let t2 = tau * tau;
    let tail = |b: f64| {
        if b.is_finite() {
            std_normal_sf(b / tau)
        } else {
            0.0
        }
    };
    let dens = |b: f64| {
        if b.is_finite() {
            std_normal_pdf(b / tau)
        } else {
            0.0
        }
    };
    match functional {
        Functional::Excess(b) => {
            if !b.is_finite() {
                return 0.0;
            }
            2.0 * (tau * dens(b) - b * tail(b))
        }
        Functional::ExcessSquared(b) => {
            if !b.is_finite() {
                return 0.0;
            }
            2.0 * ((t2 + b * b) * tail(b) - b * tau * dens(b))
        }
        Functional::RelativeExcess(s) => folded_normal(tau, Functional::Excess(s)) / s,
        Functional::Second => t2,
        Functional::WeightedSecond(rho) => t2 * (1.0 - 2.0 * tail(rho)),
        Functional::ClippedSquared(rho) => {
            if !rho.is_finite() {
                return t2;
            }
            let z = rho / tau;
            t2 * (1.0 - 2.0 * tail(rho) - 2.0 * z * dens(rho)) + 2.0 * rho * rho * tail(rho)
        }
    }
}

/// `|W| = D(y)` for scalar `y` with density `density`.
pub struct LineLaw {
    pub density: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub magnitude: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Typical spread of `y`, used for the tail transformation.
    pub scale: f64,
    /// When `magnitude(y) = slope * |y - center|`, kinks can be placed exactly.
    pub linear: Option<(f64, f64)>,
    /// Extra split points (at least the centre of the density).
    pub breaks: Vec<f64>,
}

impl std::fmt::Debug for LineLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LineLaw")
            .field("scale", &self.scale)
            .field("linear", &self.linear)
            .field("breaks", &self.breaks)
            .finish()
    }
}

/// Representation of the law of a magnitude `|W|`.
#[derive(Debug)]
pub enum MagnitudeLaw {
    FoldedNormal {
        tau: f64,
    },
    Line(LineLaw),
    Sample {
        values: Vec<f64>,
        samples: usize,
        seed: u64,
    },
}

impl MagnitudeLaw {
    /// Law of `|W|` for `W ~ N(0, cov)` under `engine`.
    ///
    /// Closed form and quadrature need `cov` of numerical rank at most one
    /// (then `|W| ~ |N(0, trace cov)|`).
    pub fn gaussian(cov: &DMatrix<f64>, engine: Engine) -> Result<Self> {
        let rank = linalg::psd_rank(cov);
        let tau = linalg::trace(cov).max(0.0).sqrt();
        match engine {
            Engine::ClosedForm => {
                if rank > 1 {
                    return Err(Error::Unsupported(format!(
                        "closed-form engine needs a rank-one law, covariance has rank {rank}"
                    )));
                }
                Ok(MagnitudeLaw::FoldedNormal { tau })
            }
            Engine::Auto { samples, seed } => {
                if rank <= 1 {
                    Ok(MagnitudeLaw::FoldedNormal { tau })
                } else {
                    Ok(Self::gaussian_sample(cov, samples, seed))
                }
            }
            Engine::Quadrature => {
                if rank > 1 {
                    return Err(Error::Unsupported(format!(
                        "quadrature engine needs a rank-one law, covariance has rank {rank}"
                    )));
                }
                Ok(MagnitudeLaw::Line(LineLaw {
                    density: Box::new(std_normal_pdf),
                    magnitude: Box::new(move |y: f64| tau * y.abs()),
                    scale: 1.0,
                    linear: Some((0.0, tau)),
                    breaks: vec![0.0],
                }))
            }
            Engine::MonteCarlo { samples, seed } => Ok(Self::gaussian_sample(cov, samples, seed)),
        }
    }

    fn gaussian_sample(cov: &DMatrix<f64>, samples: usize, seed: u64) -> Self {
        let root = linalg::sqrt_psd(cov);
        let dim = cov.nrows();
        let mut rng = stream_rng(seed, purpose::MONTE_CARLO);
        let mut z = nalgebra::DVector::zeros(dim);
        let values = (0..samples)
            .map(|_| {
                for v in z.iter_mut() {
                    *v = rng.sample::<f64, _>(StandardNormal);
                }
                (&root * &z).norm()
            })
            .collect();
        MagnitudeLaw::Sample {
            values,
            samples,
            seed,
        }
    }

    /// The engine that actually evaluates this law.
    pub fn engine(&self) -> Engine {
        match self {
            MagnitudeLaw::FoldedNormal { .. } => Engine::ClosedForm,
            MagnitudeLaw::Line(_) => Engine::Quadrature,
            MagnitudeLaw::Sample { samples, seed, .. } => Engine::MonteCarlo {
                samples: *samples,
                seed: *seed,
            },
        }
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self, MagnitudeLaw::Sample { .. })
    }

    pub fn expect(&self, functional: Functional) -> Estimate {
        match self {
            MagnitudeLaw::FoldedNormal { tau } => Estimate::exact(folded_normal(*tau, functional)),
            MagnitudeLaw::Line(law) => {
                let mut breaks = law.breaks.clone();
                if let (Some((center, slope)), Some(k)) = (law.linear, functional.kink()) {
                    if slope > 0.0 {
                        breaks.push(center - k / slope);
                        breaks.push(center + k / slope);
                    }
                }
                let q = quad::integrate_line(
                    |y| {
                        let d = (law.density)(y);
                        if d == 0.0 {
                            0.0
                        } else {
                            d * functional.eval((law.magnitude)(y))
                        }
                    },
                    &breaks,
                    law.scale,
                    QUAD_ABS_TOL,
                    QUAD_REL_TOL,
                );
                Estimate {
                    value: q.value,
                    std_error: q.abs_error,
                }
            }
            MagnitudeLaw::Sample { values, .. } => {
                mean_and_se(values.iter().map(|&m| functional.eval(m)))
            }
        }
    }

    /// Standard error of `E[a(|W|)] - c * E[g(|W|)]` evaluated on one sample
    /// (zero for deterministic engines).
    pub fn combined_se(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            MagnitudeLaw::Sample { values, .. } => {
                mean_and_se(values.iter().map(|&m| f(m))).std_error
            }
            _ => 0.0,
        }
    }
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: impl Iterator<Item = f64>) -> Estimate {
    let mut n = 0.0_f64;
    let mut mean = 0.0_f64;
    let mut m2 = 0.0_f64;
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    if n < 2.0 {
        return Estimate {
            value: mean,
            std_error: f64::INFINITY,
        };
    }
    Estimate {
        value: mean,
        std_error: (m2 / (n - 1.0) / n).sqrt(),
    }
}
