use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, serde_vector};
use crate::minimax::{self, GaussianPair};
use crate::rng::{purpose, stream_rng, StreamRng};
use crate::ssm::simulate::{draw_gaussian, RootCache};
use crate::ssm::{ModelSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OutlierKind {
    /// Observation error replaced; states untouched.
    Ao,
    /// State innovation replaced; the distortion propagates.
    Io,
    /// Whole observation replaced by an independent draw.
    So,
}

/// Contaminating distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ContaminationLaw {
    PointMass {
        #[serde(with = "serde_vector")]
        value: DVector<f64>,
    },
    Gaussian {
        #[serde(with = "serde_vector")]
        mean: DVector<f64>,
        #[serde(with = "serde_matrix")]
        cov: DMatrix<f64>,
    },
    /// The ideal law of the replaced quantity with its spread scaled by `kappa`:
    /// `N(0, kappa^2 V_t)` (AO), `N(0, kappa^2 Q_t)` (IO), and for SO
    /// `N(E Y_t, kappa^2 Cov Y_t)` from the unconditional ideal moments.
    ScaledIdeal { kappa: f64 },
    /// SO only, scalar observations: the least favorable contaminating law of the
    /// one-step pair `(X_t, Y_t)` under the ideal unconditional moments at radius `r`.
    LeastFavorable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub kind: OutlierKind,
    #[serde(rename = "r")]
    pub radius: f64,
    pub law: ContaminationLaw,
    /// IO only: after the first hit every later innovation is replaced as well
    /// (level shifts and trends for point-mass laws).
    #[serde(default)]
    pub persistent: bool,
}

impl ContaminationSpec {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !(0.0..=1.0).contains(&self.radius) || self.radius.is_nan() {
            return Err(Error::validation("r", "radius must lie in [0, 1]"));
        }
        let dim = match self.kind {
            OutlierKind::Ao | OutlierKind::So => model.q,
            OutlierKind::Io => model.p,
        };
        match &self.law {
            ContaminationLaw::PointMass { value } => {
                if value.len() != dim {
                    return Err(Error::dimension(
                        "contamination law point mass",
                        dim,
                        value.len(),
                    ));
                }
            }
            ContaminationLaw::Gaussian { mean, cov } => {
                if mean.len() != dim {
                    return Err(Error::dimension("contamination law mean", dim, mean.len()));
                }
                if cov.nrows() != dim || cov.ncols() != dim {
                    return Err(Error::dimension(
                        "contamination law covariance",
                        format!("{dim}x{dim}"),
                        format!("{}x{}", cov.nrows(), cov.ncols()),
                    ));
                }
                linalg::check_covariance(cov, "law.cov")?;
            }
            ContaminationLaw::ScaledIdeal { kappa } => {
                if !(*kappa > 0.0 && kappa.is_finite()) {
                    return Err(Error::validation(
                        "law.kappa",
                        "scale factor must be positive",
                    ));
                }
            }
            ContaminationLaw::LeastFavorable => {
                if self.kind != OutlierKind::So {
                    return Err(Error::validation(
                        "law",
                        "least-favorable law is defined for SO only",
                    ));
                }
                if model.q != 1 {
                    return Err(Error::Unsupported(
                        "least-favorable SO sampling needs scalar observations".into(),
                    ));
                }
                if self.radius >= 1.0 {
                    return Err(Error::validation("r", "least-favorable law needs r < 1"));
                }
            }
        }
        if self.persistent && self.kind != OutlierKind::Io {
            return Err(Error::validation(
                "persistent",
                "only meaningful for IO contamination",
            ));
        }
        Ok(())
    }
}

/// Per-time sampler for the contaminating law.
struct LawSampler<'a> {
    law: &'a ContaminationLaw,
    root: Option<DMatrix<f64>>,
    cache: Option<RootCache>,
}

impl<'a> LawSampler<'a> {
    fn new(law: &'a ContaminationLaw, kind: OutlierKind, model: &ModelSpec) -> Self {
        let (root, cache) = match (law, kind) {
            (ContaminationLaw::Gaussian { cov, .. }, _) => (Some(linalg::sqrt_psd(cov)), None),
            (ContaminationLaw::ScaledIdeal { .. }, OutlierKind::Ao) => {
                (None, Some(RootCache::new(&model.v)))
            }
            (ContaminationLaw::ScaledIdeal { .. }, OutlierKind::Io) => {
                (None, Some(RootCache::new(&model.q_cov)))
            }
            _ => (None, None),
        };
        LawSampler { law, root, cache }
    }

    fn draw(
        &mut self,
        rng: &mut StreamRng,
        kind: OutlierKind,
        model: &ModelSpec,
        t: usize,
        radius: f64,
    ) -> Result<DVector<f64>> {
        match self.law {
            ContaminationLaw::PointMass { value } => Ok(value.clone()),
            ContaminationLaw::Gaussian { mean, .. } => {
                Ok(draw_gaussian(rng, Some(mean), self.root.as_ref().unwrap()))
            }
            ContaminationLaw::ScaledIdeal { kappa } => match kind {
                OutlierKind::Ao => {
                    let root = self.cache.as_mut().unwrap().at(&model.v, t)?;
                    Ok(draw_gaussian(rng, None, root) * *kappa)
                }
                OutlierKind::Io => {
                    let root = self.cache.as_mut().unwrap().at(&model.q_cov, t)?;
                    Ok(draw_gaussian(rng, None, root) * *kappa)
                }
                OutlierKind::So => {
                    let (mean, cov) = observation_moments(model, t)?;
                    Ok(mean + draw_gaussian(rng, None, &linalg::sqrt_psd(&cov)) * *kappa)
                }
            },
            ContaminationLaw::LeastFavorable => {
                let (mx, sx) = model.state_moments(t)?;
                let pair =
                    GaussianPair::new(mx, sx, model.z_at(t)?.clone(), model.v_at(t)?.clone())?;
                let rho = minimax::gaussian_rho(&pair, radius)?;
                minimax::sample_least_favorable(&pair, rho, rng)
            }
        }
    }
}

/// Unconditional ideal moments `(E Y_t, Cov Y_t)`.
fn observation_moments(model: &ModelSpec, t: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mx, sx) = model.state_moments(t)?;
    let z = model.z_at(t)?;
    let cov = linalg::symmetrize(&(z * sx * z.transpose() + model.v_at(t)?));
    Ok((z * mx, cov))
}

/// Inject AO/IO/SO outliers into an ideal trajectory of `model`.
///
/// Indicators `U_t ~ Bernoulli(r)` come from the `(seed, CONTAMINATE_HITS)`
/// stream (one uniform per step), contaminating draws from `(seed, CONTAMINATE_LAW)`.
pub fn contaminate(
    model: &ModelSpec,
    ideal: &Trajectory,
    spec: &ContaminationSpec,
    seed: u64,
) -> Result<Trajectory> {
    spec.validate(model)?;
    let horizon = ideal.horizon;
    if ideal.x.len() != horizon + 1
        || ideal.y.len() != horizon
        || ideal.innovations.len() != horizon
        || ideal.obs_errors.len() != horizon
    {
        return Err(Error::validation(
            "trajectory",
            "lengths inconsistent with horizon",
        ));
    }
    if ideal.state_dim() != model.p || ideal.obs_dim() != model.q {
        return Err(Error::dimension(
            "trajectory vs model",
            format!("p={}, q={}", model.p, model.q),
            format!("p={}, q={}", ideal.state_dim(), ideal.obs_dim()),
        ));
    }

    let mut hit_rng = stream_rng(seed, purpose::CONTAMINATE_HITS);
    let mut law_rng = stream_rng(seed, purpose::CONTAMINATE_LAW);
    let mut sampler = LawSampler::new(&spec.law, spec.kind, model);
    let mut hits: Vec<bool> = (0..horizon)
        .map(|_| hit_rng.random::<f64>() < spec.radius)
        .collect();
    let mut out = ideal.clone();
    out.contamination_seed = Some(seed);

    match spec.kind {
        OutlierKind::Ao => {
            for t in 1..=horizon {
                if hits[t - 1] {
                    let e = sampler.draw(&mut law_rng, spec.kind, model, t, spec.radius)?;
                    out.y[t - 1] = model.z_at(t)? * &out.x[t] + &e;
                    out.obs_errors[t - 1] = e;
                }
            }
        }
        OutlierKind::Io => {
            let mut shifted = false;
            for t in 1..=horizon {
                if spec.persistent && shifted {
                    hits[t - 1] = true;
                }
                if hits[t - 1] {
                    shifted = true;
                    out.innovations[t - 1] =
                        sampler.draw(&mut law_rng, spec.kind, model, t, spec.radius)?;
                }
                out.x[t] = model.f_at(t)? * &out.x[t - 1] + &out.innovations[t - 1];
                out.y[t - 1] = model.z_at(t)? * &out.x[t] + &out.obs_errors[t - 1];
            }
        }
        OutlierKind::So => {
            for t in 1..=horizon {
                if hits[t - 1] {
                    let y = sampler.draw(&mut law_rng, spec.kind, model, t, spec.radius)?;
                    out.obs_errors[t - 1] = &y - model.z_at(t)? * &out.x[t];
                    out.y[t - 1] = y;
                }
            }
        }
    }
    out.hits = hits;
    Ok(out)
}
