//! Diagnostics for filter errors: a skewness test of the linearity/normality
//! hypothesis, a one-sample Kolmogorov-Smirnov probe, and a kernel-density probe
//! of whether an error law dominates a scaled Gaussian density.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::expect::{std_normal_pdf, std_normal_sf};

/// Asymptotic 1% critical value of the scaled KS distance.
pub const KS_CRITICAL_001: f64 = 1.628;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinTestResult {
    pub n: usize,
    /// `T_n = mean((e^T x_i)^3)`.
    pub t_n: f64,
    /// Root of the largest eigenvalue of the empirical covariance.
    pub sigma_hat: f64,
    /// Its unit eigenvector, first nonzero component positive.
    pub e_hat: Vec<f64>,
    pub alpha: f64,
    /// `sqrt(15/n) sigma_hat^3 u_{alpha/2}`.
    pub critical: f64,
    /// `sqrt(n) T_n / (sqrt(15) sigma_hat^3)`, asymptotically N(0,1) under the null.
    pub standardized: f64,
    pub reject: bool,
}

/// Upper `a`-quantile of the standard normal.
pub fn normal_upper_quantile(a: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - a)
}

/// Skewness test along the top principal direction of a sample of `dX`
/// (rows are draws). Rejects when `|T_n|` exceeds `sqrt(15/n) sigma^3 u_{alpha/2}`.
pub fn linearity_test(sample: &DMatrix<f64>, alpha: f64) -> Result<LinTestResult> {
    let (n, p) = sample.shape();
    if n < 10 {
        return Err(Error::Argument(format!(
            "linearity test needs n >= 10, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::Argument("sample has no columns".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!(
            "level must lie in (0, 1), got {alpha}"
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("sample contains non-finite values".into()));
    }
    let nf = n as f64;
    let mean = sample.row_mean();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        let d = sample.row(i) - &mean;
        cov += d.transpose() * d;
    }
    cov /= nf;
    let cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);
    let (top, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("p >= 1");
    if !(lambda > 0.0) {
        return Err(Error::Numerical(
            "degenerate sample: zero empirical covariance".into(),
        ));
    }
    let mut e: Vec<f64> = eig.eigenvectors.column(top).iter().cloned().collect();
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    e.iter_mut().for_each(|v| *v /= norm);
    if e.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) {
        e.iter_mut().for_each(|v| *v = -*v);
    }
    let t_n = (0..n)
        .map(|i| {
            let proj: f64 = sample.row(i).iter().zip(&e).map(|(x, w)| x * w).sum();
            proj * proj * proj
        })
        .sum::<f64>()
        / nf;
    let sigma_hat = lambda.sqrt();
    let scale = (15.0 / nf).sqrt() * sigma_hat.powi(3);
    let critical = scale * normal_upper_quantile(alpha / 2.0);
    Ok(LinTestResult {
        n,
        t_n,
        sigma_hat,
        e_hat: e,
        alpha,
        critical,
        standardized: t_n / scale,
        reject: t_n.abs() > critical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub n: usize,
    pub ks_distance: f64,
    /// `1.628 / sqrt(n)`.
    pub critical: f64,
    pub reject_at_001: bool,
}

/// One-sample KS distance of the standardized sample from N(0,1).
///
/// `reference = Some((mean, variance))` standardizes with known moments,
/// otherwise the sample mean and variance are used.
pub fn normality_probe(sample: &[f64], reference: Option<(f64, f64)>) -> Result<NormalityResult> {
    let n = sample.len();
    if n < 100 {
        return Err(Error::Argument(format!(
            "normality probe needs n >= 100, got {n}"
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("sample contains non-finite values".into()));
    }
    let nf = n as f64;
    let (mean, var) = match reference {
        Some((m, v)) => (m, v),
        None => {
            let m = sample.iter().sum::<f64>() / nf;
            (
                m,
                sample.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nf - 1.0),
            )
        }
    };
    if !(var > 0.0) {
        return Err(Error::Numerical("zero variance: cannot standardize".into()));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = sample.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let ks_distance = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            let cdf = std_normal_sf(-zi);
            ((i + 1) as f64 / nf - cdf).max(cdf - i as f64 / nf)
        })
        .fold(0.0_f64, f64::max);
    let critical = KS_CRITICAL_001 / nf.sqrt();
    Ok(NormalityResult {
        n,
        ks_distance,
        critical,
        reject_at_001: ks_distance > critical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationPoint {
    pub x: f64,
    pub density: f64,
    /// `(1 - r) phi_Sigma(x)`.
    pub bound: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationResult {
    pub holds: bool,
    /// `min_x p_hat(x) - (1 - r) phi_Sigma(x)` over the grid.
    pub margin: f64,
    /// Grid point attaining the margin.
    pub argmin: f64,
    pub bandwidth: f64,
    pub points: Vec<DominationPoint>,
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (n - 1.0) * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Checks `(1 - r) phi_Sigma(x) <= p_hat(x)` on `grid`, where `p_hat` is a
/// Gaussian-kernel density estimate of the scalar `sample` and `phi_Sigma` the
/// centred normal density with variance `sigma`.
///
/// The tolerance at `x` is three standard errors of `p_hat(x)`: the larger of the
/// bootstrap standard error (its exact resampling limit,
/// `sd_i(K_h(x - X_i)) / sqrt(n)`) and the asymptotic `sqrt(f R(K) / (n h))`
/// with `f = max(p_hat, (1 - r) phi)`, which keeps the tolerance honest in the
/// tails where the bootstrap sees no data.
pub fn eso_domination_probe(
    sample: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    r: f64,
    grid: &[f64],
) -> Result<DominationResult> {
    if sample.ncols() != 1 || sigma.shape() != (1, 1) {
        return Err(Error::Unsupported(
            "domination probe is implemented for p = 1 only".into(),
        ));
    }
    let xs: Vec<f64> = sample.column(0).iter().cloned().collect();
    if xs.len() < 10 {
        return Err(Error::Argument(
            "domination probe needs at least 10 draws".into(),
        ));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!(
            "radius must lie in [0, 1], got {r}"
        )));
    }
    let var = sigma[(0, 0)];
    if !(var > 0.0) {
        return Err(Error::Argument(
            "reference variance must be positive".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Argument("empty evaluation grid".into()));
    }
    let h = silverman_bandwidth(&xs);
    if !(h > 0.0) {
        return Err(Error::Numerical("degenerate sample: zero bandwidth".into()));
    }
    let n = xs.len() as f64;
    let roughness = 0.5 / std::f64::consts::PI.sqrt();
    let sd = var.sqrt();
    let points: Vec<DominationPoint> = grid
        .iter()
        .map(|&x| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for &xi in &xs {
                let k = std_normal_pdf((x - xi) / h) / h;
                s1 += k;
                s2 += k * k;
            }
            let density = s1 / n;
            let boot_var = (s2 / n - density * density).max(0.0) / n;
            let bound = (1.0 - r) * std_normal_pdf(x / sd) / sd;
            let asym_var = density.max(bound) * roughness / (n * h);
            DominationPoint {
                x,
                density,
                bound,
                tolerance: 3.0 * boot_var.max(asym_var).sqrt(),
            }
        })
        .collect();
    let worst = points
        .iter()
        .min_by(|a, b| (a.density - a.bound).total_cmp(&(b.density - b.bound)))
        .expect("non-empty grid");
    Ok(DominationResult {
        holds: points
            .iter()
            .all(|pt| pt.density - pt.bound >= -pt.tolerance),
        margin: worst.density - worst.bound,
        argmin: worst.x,
        bandwidth: h,
        points,
    })
}
