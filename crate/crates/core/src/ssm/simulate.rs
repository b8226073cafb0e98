use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_vectors};
use crate::rng::{purpose, stream_rng};
use crate::ssm::ModelSpec;

/// A realized path of the state-space model.
///
/// `x[t]` is the state at time `t = 0..=T`; `y[k]`, `hits[k]`,
/// `innovations[k]` and `obs_errors[k]` belong to time `t = k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub horizon: usize,
    #[serde(with = "serde_vectors")]
    pub x: Vec<DVector<f64>>,
    #[serde(with = "serde_vectors")]
    pub y: Vec<DVector<f64>>,
    pub hits: Vec<bool>,
    /// State innovations `v_t` actually used.
    #[serde(with = "serde_vectors")]
    pub innovations: Vec<DVector<f64>>,
    /// Observation errors `e_t` actually used (`y_t - Z_t x_t` unless the observation was substituted).
    #[serde(with = "serde_vectors")]
    pub obs_errors: Vec<DVector<f64>>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination_seed: Option<u64>,
}

/// Draw from `N(mean, root * root^T)` using exactly `root.ncols()` standard normals.
pub(crate) fn draw_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    mean: Option<&DVector<f64>>,
    root: &DMatrix<f64>,
) -> DVector<f64> {
    let z = DVector::from_fn(root.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let out = root * z;
    match mean {
        Some(m) => out + m,
        None => out,
    }
}

/// Caches symmetric square roots of a (possibly time-varying) covariance sequence.
pub(crate) struct RootCache {
    constant: Option<DMatrix<f64>>,
    varying: Vec<Option<DMatrix<f64>>>,
}

impl RootCache {
    pub(crate) fn new(seq: &crate::ssm::MatrixSeq) -> Self {
        match seq {
            crate::ssm::MatrixSeq::Constant(m) => RootCache {
                constant: Some(linalg::sqrt_psd(m)),
                varying: Vec::new(),
            },
            crate::ssm::MatrixSeq::Varying(list) => RootCache {
                constant: None,
                varying: vec![None; list.len()],
            },
        }
    }

    pub(crate) fn at(&mut self, seq: &crate::ssm::MatrixSeq, t: usize) -> Result<&DMatrix<f64>> {
        if let Some(root) = &self.constant {
            return Ok(root);
        }
        let m = seq.at(t)?;
        let slot = &mut self.varying[t - 1];
        if slot.is_none() {
            *slot = Some(linalg::sqrt_psd(m));
        }
        Ok(slot.as_ref().unwrap())
    }
}

/// Simulate the ideal model for `horizon` steps.
///
/// Draw order on the `(seed, SIMULATE)` stream: `x_0`, then `v_t` and `e_t`
/// for `t = 1..=T`; identical inputs give bit-identical trajectories.
pub fn simulate_ideal(model: &ModelSpec, horizon: usize, seed: u64) -> Result<Trajectory> {
    model.validate()?;
    model.check_horizon(horizon)?;
    let mut rng = stream_rng(seed, purpose::SIMULATE);
    let mut q_roots = RootCache::new(&model.q_cov);
    let mut v_roots = RootCache::new(&model.v);

    let x0 = draw_gaussian(&mut rng, Some(&model.a0), &linalg::sqrt_psd(&model.q0));
    let mut x = Vec::with_capacity(horizon + 1);
    let mut y = Vec::with_capacity(horizon);
    let mut innovations = Vec::with_capacity(horizon);
    let mut obs_errors = Vec::with_capacity(horizon);
    x.push(x0);
    for t in 1..=horizon {
        let v = draw_gaussian(&mut rng, None, q_roots.at(&model.q_cov, t)?);
        let e = draw_gaussian(&mut rng, None, v_roots.at(&model.v, t)?);
        let xt = model.f_at(t)? * &x[t - 1] + &v;
        y.push(model.z_at(t)? * &xt + &e);
        x.push(xt);
        innovations.push(v);
        obs_errors.push(e);
    }
    Ok(Trajectory {
        horizon,
        x,
        y,
        hits: vec![false; horizon],
        innovations,
        obs_errors,
        seed,
        contamination_seed: None,
    })
}

impl Trajectory {
    pub fn state_dim(&self) -> usize {
        self.x.first().map_or(0, |v| v.len())
    }

    pub fn obs_dim(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }

    pub fn hit_rate(&self) -> f64 {
        if self.hits.is_empty() {
            return 0.0;
        }
        self.hits.iter().filter(|&&h| h).count() as f64 / self.hits.len() as f64
    }

    /// CSV with header `t,x_1..x_p,y_1..y_q,hit`; the `t = 0` row carries only the state.
    pub fn to_csv(&self) -> String {
        let (p, q) = (self.state_dim(), self.obs_dim());
        let mut out = String::from("t");
        for i in 1..=p {
            let _ = write!(out, ",x_{i}");
        }
        for j in 1..=q {
            let _ = write!(out, ",y_{j}");
        }
        out.push_str(",hit\n");
        for t in 0..=self.horizon {
            let _ = write!(out, "{t}");
            for v in self.x[t].iter() {
                let _ = write!(out, ",{v}");
            }
            if t == 0 {
                out.push_str(&",".repeat(q + 1));
            } else {
                for v in self.y[t - 1].iter() {
                    let _ = write!(out, ",{v}");
                }
                let _ = write!(out, ",{}", u8::from(self.hits[t - 1]));
            }
            out.push('\n');
        }
        out
    }

    /// Read the observation columns `y_*` back from a trajectory CSV (rows `t >= 1`).
    pub fn observations_from_csv(text: &str) -> Result<Vec<DVector<f64>>> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::validation("observations", "empty CSV"))?
            .split(',')
            .map(str::trim)
            .collect();
        let t_col = header.iter().position(|h| *h == "t");
        let y_cols: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("y_"))
            .map(|(i, _)| i)
            .collect();
        if y_cols.is_empty() {
            return Err(Error::validation(
                "observations",
                "no y_* columns in CSV header",
            ));
        }
        let mut out = Vec::new();
        for (row, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != header.len() {
                return Err(Error::validation(
                    format!("observations[{row}]"),
                    "row length does not match header",
                ));
            }
            if let Some(tc) = t_col {
                if cells[tc] == "0" {
                    continue;
                }
            }
            let values = y_cols
                .iter()
                .map(|&c| {
                    cells[c].parse::<f64>().map_err(|_| {
                        Error::validation(
                            format!("observations[{row}].{}", header[c]),
                            "not a number",
                        )
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(DVector::from_vec(values));
        }
        Ok(out)
    }
}
