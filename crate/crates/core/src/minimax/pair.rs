use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expect::{mean_and_se, std_normal_pdf, Engine, Estimate, LineLaw, MagnitudeLaw};
use crate::linalg::{self, serde_matrix, serde_vector};
use crate::rls::io_transform;
use crate::rng::{purpose, stream_rng, StreamRng};

/// Which residual is clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Residual {
    /// `D(y) = E[X | y] - E X`, the SO/AO problem.
    So,
    /// `D~(y) = y - E[X | y]` in the additive form, the IO problem.
    Io,
}

/// Ideal joint law `X ~ N(mean_x, sigma_x)`, `Y = Z X + eps`, `eps ~ N(0, V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianIdealSpec {
    #[serde(with = "serde_vector")]
    pub mean_x: DVector<f64>,
    #[serde(rename = "Sigma_x", with = "serde_matrix")]
    pub sigma_x: DMatrix<f64>,
    #[serde(rename = "Z", with = "serde_matrix")]
    pub z: DMatrix<f64>,
    #[serde(rename = "V", with = "serde_matrix")]
    pub v: DMatrix<f64>,
}

/// A validated Gaussian-linear pair with its derived one-step quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianIdealSpec", into = "GaussianIdealSpec")]
pub struct GaussianPair {
    spec: GaussianIdealSpec,
    delta: DMatrix<f64>,
    gain: DMatrix<f64>,
    mean_y: DVector<f64>,
}

impl TryFrom<GaussianIdealSpec> for GaussianPair {
    type Error = Error;

    fn try_from(spec: GaussianIdealSpec) -> Result<Self> {
        GaussianPair::new(spec.mean_x, spec.sigma_x, spec.z, spec.v)
    }
}

impl From<GaussianPair> for GaussianIdealSpec {
    fn from(pair: GaussianPair) -> Self {
        pair.spec
    }
}

impl GaussianPair {
    pub fn new(
        mean_x: DVector<f64>,
        sigma_x: DMatrix<f64>,
        z: DMatrix<f64>,
        v: DMatrix<f64>,
    ) -> Result<Self> {
        let p = mean_x.len();
        if p == 0 {
            return Err(Error::validation(
                "mean_x",
                "state dimension must be positive",
            ));
        }
        linalg::check_square(&sigma_x, p, "Sigma_x")?;
        linalg::check_covariance(&sigma_x, "Sigma_x")?;
        if z.ncols() != p || z.nrows() == 0 {
            return Err(Error::validation(
                "Z",
                format!("expected q x {p}, got {}x{}", z.nrows(), z.ncols()),
            ));
        }
        linalg::check_finite(&z, "Z")?;
        let q = z.nrows();
        linalg::check_square(&v, q, "V")?;
        linalg::check_covariance(&v, "V")?;
        let delta = linalg::symmetrize(&(&z * &sigma_x * z.transpose() + &v));
        let gain = &sigma_x * z.transpose() * linalg::pinv_psd(&delta)?;
        let mean_y = &z * &mean_x;
        Ok(GaussianPair {
            spec: GaussianIdealSpec {
                mean_x,
                sigma_x,
                z,
                v,
            },
            delta,
            gain,
            mean_y,
        })
    }

    /// `X ~ N(0, sx)`, `Y = X + eps`, `eps ~ N(0, sv)`, scalar.
    pub fn scalar_additive(sx: f64, sv: f64) -> Result<Self> {
        let m = |x: f64| DMatrix::from_element(1, 1, x);
        GaussianPair::new(DVector::zeros(1), m(sx), m(1.0), m(sv))
    }

    pub fn spec(&self) -> &GaussianIdealSpec {
        &self.spec
    }
    pub fn p(&self) -> usize {
        self.spec.mean_x.len()
    }
    pub fn q(&self) -> usize {
        self.spec.z.nrows()
    }
    pub fn mean_x(&self) -> &DVector<f64> {
        &self.spec.mean_x
    }
    pub fn sigma_x(&self) -> &DMatrix<f64> {
        &self.spec.sigma_x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.spec.z
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.spec.v
    }
    /// `Delta = Z Sigma_x Z^T + V`.
    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }
    /// `M0 = Sigma_x Z^T Delta^+`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }
    pub fn mean_y(&self) -> &DVector<f64> {
        &self.mean_y
    }

    /// `D(y) = M0 (y - E Y)`.
    pub fn d(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.gain * (y - &self.mean_y)
    }

    /// `(Z^{-1} - M0)`, the map from innovation to IO residual.
    pub fn io_weight(&self) -> Result<DMatrix<f64>> {
        Ok(io_transform(&self.spec.z)? - &self.gain)
    }

    /// `D~(y) = (Z^{-1} - M0)(y - E Y)`.
    pub fn d_tilde(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.io_weight()? * (y - &self.mean_y))
    }

    /// Linear map from `y - E Y` to the residual.
    pub fn weight(&self, residual: Residual) -> Result<DMatrix<f64>> {
        match residual {
            Residual::So => Ok(self.gain.clone()),
            Residual::Io => self.io_weight(),
        }
    }

    /// Covariance of the residual, e.g. `M0 Delta M0^T` for `D`.
    pub fn residual_cov(&self, residual: Residual) -> Result<DMatrix<f64>> {
        let w = self.weight(residual)?;
        Ok(linalg::symmetrize(&(&w * &self.delta * w.transpose())))
    }

    /// `trace (I - M0 Z) Sigma_x`, the expected conditional variance.
    pub fn cond_var_term(&self) -> f64 {
        let p = self.p();
        linalg::trace(&((DMatrix::identity(p, p) - &self.gain * &self.spec.z) * &self.spec.sigma_x))
    }

    pub fn trace_cov_x(&self) -> f64 {
        linalg::trace(&self.spec.sigma_x)
    }

    /// `E |X|^2`.
    pub fn second_moment_x(&self) -> f64 {
        self.spec.mean_x.norm_squared() + self.trace_cov_x()
    }

    /// Trace of the covariance of the transformed noise `Z^{-1} eps`.
    pub fn trace_cov_noise(&self) -> Result<f64> {
        let zi = io_transform(&self.spec.z)?;
        Ok(linalg::trace(&(&zi * &self.spec.v * zi.transpose())))
    }
}

/// A user-described ideal law. The library never estimates `E[X | Y]` itself.
pub trait GenericIdeal: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    /// One draw of `(X, Y)` from the ideal joint law.
    fn sample(&self, rng: &mut StreamRng) -> (DVector<f64>, DVector<f64>);
    fn cond_mean(&self, y: &DVector<f64>) -> DVector<f64>;
    fn mean_x(&self) -> DVector<f64>;
    /// Marginal density of a scalar `Y`, enabling the quadrature engine.
    fn density_y(&self, _y: f64) -> Option<f64> {
        None
    }
    /// Rough spread of `Y` for the quadrature tail map.
    fn y_scale(&self) -> f64 {
        1.0
    }
    /// `Y = X + eps` with `E eps = 0`: required for the IO problem.
    fn is_additive(&self) -> bool {
        false
    }
}

/// Ideal one-step law for the saddle-point solvers.
#[derive(Clone)]
#[allow(clippy::large_enum_variant)]
pub enum IdealPair {
    Gaussian(GaussianPair),
    Generic(Arc<dyn GenericIdeal>),
}

impl fmt::Debug for IdealPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdealPair::Gaussian(g) => f.debug_tuple("Gaussian").field(g).finish(),
            IdealPair::Generic(g) => write!(f, "Generic(p = {}, q = {})", g.dim_x(), g.dim_y()),
        }
    }
}

impl From<GaussianPair> for IdealPair {
    fn from(pair: GaussianPair) -> Self {
        IdealPair::Gaussian(pair)
    }
}

/// Moments entering the risk formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealMoments {
    pub trace_cov_x: Estimate,
    pub cond_var_term: Estimate,
    pub second_moment_x: Estimate,
    /// Trace of the noise covariance of the additive form (IO problem only).
    pub trace_cov_noise: Option<Estimate>,
}

fn mc_budget(engine: Engine) -> (usize, u64) {
    match engine {
        Engine::MonteCarlo { samples, seed } | Engine::Auto { samples, seed } => (samples, seed),
        _ => (crate::expect::DEFAULT_MC_SAMPLES, 0),
    }
}

impl IdealPair {
    pub fn dim_x(&self) -> usize {
        match self {
            IdealPair::Gaussian(g) => g.p(),
            IdealPair::Generic(g) => g.dim_x(),
        }
    }

    pub fn dim_y(&self) -> usize {
        match self {
            IdealPair::Gaussian(g) => g.q(),
            IdealPair::Generic(g) => g.dim_y(),
        }
    }

    /// `D(y)` or `D~(y)`.
    pub fn residual(&self, kind: Residual, y: &DVector<f64>) -> Result<DVector<f64>> {
        match (self, kind) {
            (IdealPair::Gaussian(g), Residual::So) => Ok(g.d(y)),
            (IdealPair::Gaussian(g), Residual::Io) => g.d_tilde(y),
            (IdealPair::Generic(g), Residual::So) => Ok(g.cond_mean(y) - g.mean_x()),
            (IdealPair::Generic(g), Residual::Io) => {
                if !g.is_additive() {
                    return Err(Error::Unsupported(
                        "IO problem needs an additive observation model".into(),
                    ));
                }
                Ok(y - g.cond_mean(y))
            }
        }
    }

    /// Check that the IO problem is defined for this law.
    pub fn check_additive(&self) -> Result<()> {
        match self {
            IdealPair::Gaussian(g) => g.io_weight().map(|_| ()),
            IdealPair::Generic(g) if g.is_additive() => Ok(()),
            IdealPair::Generic(_) => Err(Error::Unsupported(
                "IO problem needs an additive observation model".into(),
            )),
        }
    }

    /// Law of `|D(Y)|` (or `|D~(Y)|`) under the ideal model.
    pub fn magnitude_law(&self, kind: Residual, engine: Engine) -> Result<MagnitudeLaw> {
        match self {
            IdealPair::Gaussian(g) => gaussian_magnitude_law(g, kind, engine),
            IdealPair::Generic(g) => generic_magnitude_law(g, kind, engine),
        }
    }

    pub fn moments(&self, engine: Engine) -> Result<IdealMoments> {
        match self {
            IdealPair::Gaussian(g) => Ok(IdealMoments {
                trace_cov_x: Estimate::exact(g.trace_cov_x()),
                cond_var_term: Estimate::exact(g.cond_var_term()),
                second_moment_x: Estimate::exact(g.second_moment_x()),
                trace_cov_noise: g.trace_cov_noise().ok().map(Estimate::exact),
            }),
            IdealPair::Generic(g) => {
                let (samples, seed) = mc_budget(engine);
                if samples < 2 {
                    return Err(Error::Argument(
                        "Monte Carlo moments need at least two samples".into(),
                    ));
                }
                let mut rng = stream_rng(seed, purpose::MONTE_CARLO);
                let mean = g.mean_x();
                let draws: Vec<_> = (0..samples).map(|_| g.sample(&mut rng)).collect();
                let trace_cov_x =
                    mean_and_se(draws.iter().map(|(x, _)| (x - &mean).norm_squared()));
                let cond_var_term = mean_and_se(
                    draws
                        .iter()
                        .map(|(x, y)| (x - g.cond_mean(y)).norm_squared()),
                );
                let second_moment_x = mean_and_se(draws.iter().map(|(x, _)| x.norm_squared()));
                let trace_cov_noise = if g.is_additive() {
                    let noise: Vec<DVector<f64>> = draws.iter().map(|(x, y)| y - x).collect();
                    let n = noise.len() as f64;
                    let centre = noise
                        .iter()
                        .fold(DVector::zeros(g.dim_y()), |acc, e| acc + e)
                        / n;
                    Some(mean_and_se(
                        noise.iter().map(|e| (e - &centre).norm_squared()),
                    ))
                } else {
                    None
                };
                Ok(IdealMoments {
                    trace_cov_x,
                    cond_var_term,
                    second_moment_x,
                    trace_cov_noise,
                })
            }
        }
    }
}

fn gaussian_magnitude_law(
    g: &GaussianPair,
    kind: Residual,
    engine: Engine,
) -> Result<MagnitudeLaw> {
    if engine != Engine::Quadrature {
        return MagnitudeLaw::gaussian(&g.residual_cov(kind)?, engine);
    }
    if g.q() != 1 {
        return Err(Error::Unsupported(
            "quadrature engine needs a scalar observation".into(),
        ));
    }
    // Integrate over y itself: density N(E Y, Delta), magnitude |w| |y - E Y|.
    let slope = g.weight(kind)?.norm();
    let centre = g.mean_y()[0];
    let sd = g.delta()[(0, 0)].max(0.0).sqrt();
    if sd == 0.0 {
        return Ok(MagnitudeLaw::FoldedNormal { tau: 0.0 });
    }
    Ok(MagnitudeLaw::Line(LineLaw {
        density: Box::new(move |y: f64| std_normal_pdf((y - centre) / sd) / sd),
        magnitude: Box::new(move |y: f64| slope * (y - centre).abs()),
        scale: sd,
        linear: Some((centre, slope)),
        breaks: vec![centre],
    }))
}

fn generic_magnitude_law(
    g: &Arc<dyn GenericIdeal>,
    kind: Residual,
    engine: Engine,
) -> Result<MagnitudeLaw> {
    if kind == Residual::Io && !g.is_additive() {
        return Err(Error::Unsupported(
            "IO problem needs an additive observation model".into(),
        ));
    }
    let magnitude = {
        let g = Arc::clone(g);
        move |y: &DVector<f64>| match kind {
            Residual::So => (g.cond_mean(y) - g.mean_x()).norm(),
            Residual::Io => (y - g.cond_mean(y)).norm(),
        }
    };
    match engine {
        Engine::ClosedForm => Err(Error::Unsupported(
            "closed forms exist only for Gaussian-linear pairs".into(),
        )),
        Engine::Quadrature => {
            if g.dim_y() != 1 || g.density_y(0.0).is_none() {
                return Err(Error::Unsupported(
                    "quadrature needs a scalar observation with a density".into(),
                ));
            }
            let dens = Arc::clone(g);
            Ok(MagnitudeLaw::Line(LineLaw {
                density: Box::new(move |y: f64| dens.density_y(y).unwrap_or(0.0)),
                magnitude: Box::new(move |y: f64| magnitude(&DVector::from_element(1, y))),
                scale: g.y_scale(),
                linear: None,
                breaks: vec![0.0],
            }))
        }
        Engine::MonteCarlo { samples, seed } | Engine::Auto { samples, seed } => {
            let mut rng = stream_rng(seed, purpose::MONTE_CARLO);
            let values = (0..samples)
                .map(|_| magnitude(&g.sample(&mut rng).1))
                .collect();
            Ok(MagnitudeLaw::Sample {
                values,
                samples,
                seed,
            })
        }
    }
}
