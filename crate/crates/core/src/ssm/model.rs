use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, serde_vector};

/// A hyper-parameter that is either constant over time or given per time step.
///
/// Serialized as a single row-major matrix (constant) or a list of matrices
/// (entry `k` applies at time `t = k + 1`).
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSeq {
    Constant(DMatrix<f64>),
    Varying(Vec<DMatrix<f64>>),
}

impl MatrixSeq {
    /// Matrix in force at time `t >= 1`.
    pub fn at(&self, t: usize) -> Result<&DMatrix<f64>> {
        match self {
            MatrixSeq::Constant(m) => Ok(m),
            MatrixSeq::Varying(list) => {
                if t == 0 || t > list.len() {
                    Err(Error::Argument(format!(
                        "time-varying hyper-parameter has {} entries, time {t} requested",
                        list.len()
                    )))
                } else {
                    Ok(&list[t - 1])
                }
            }
        }
    }

    /// Number of explicit time entries, `None` when constant.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            MatrixSeq::Constant(_) => None,
            MatrixSeq::Varying(list) => Some(list.len()),
        }
    }

    fn iter(&self) -> Box<dyn Iterator<Item = (usize, &DMatrix<f64>)> + '_> {
        match self {
            MatrixSeq::Constant(m) => Box::new(std::iter::once((0, m))),
            MatrixSeq::Varying(list) => Box::new(list.iter().enumerate()),
        }
    }

    fn label(&self, name: &str, k: usize) -> String {
        match self {
            MatrixSeq::Constant(_) => name.to_string(),
            MatrixSeq::Varying(_) => format!("{name}[{k}]"),
        }
    }
}

impl From<DMatrix<f64>> for MatrixSeq {
    fn from(m: DMatrix<f64>) -> Self {
        MatrixSeq::Constant(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixSeqRepr {
    Constant(Vec<Vec<f64>>),
    Varying(Vec<Vec<Vec<f64>>>),
}

impl Serialize for MatrixSeq {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MatrixSeq::Constant(m) => MatrixSeqRepr::Constant(serde_matrix::to_rows(m)),
            MatrixSeq::Varying(list) => {
                MatrixSeqRepr::Varying(list.iter().map(serde_matrix::to_rows).collect())
            }
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatrixSeq {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match MatrixSeqRepr::deserialize(d)? {
            MatrixSeqRepr::Constant(rows) => serde_matrix::from_rows(&rows)
                .map(MatrixSeq::Constant)
                .map_err(D::Error::custom),
            MatrixSeqRepr::Varying(list) => list
                .iter()
                .map(|rows| serde_matrix::from_rows(rows))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(MatrixSeq::Varying)
                .map_err(D::Error::custom),
        }
    }
}

/// Hyper-parameters of the linear Gaussian state-space model
///
/// `x_t = F_t x_{t-1} + v_t`, `v_t ~ N(0, Q_t)`;
/// `y_t = Z_t x_t + e_t`, `e_t ~ N(0, V_t)`; `x_0 ~ N(a0, Q0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub p: usize,
    pub q: usize,
    #[serde(rename = "F")]
    pub f: MatrixSeq,
    #[serde(rename = "Z")]
    pub z: MatrixSeq,
    #[serde(rename = "Q")]
    pub q_cov: MatrixSeq,
    #[serde(rename = "V")]
    pub v: MatrixSeq,
    #[serde(with = "serde_vector")]
    pub a0: DVector<f64>,
    #[serde(rename = "Q0", with = "serde_matrix")]
    pub q0: DMatrix<f64>,
}

impl ModelSpec {
    /// Time-invariant model; validates before returning.
    pub fn constant(
        f: DMatrix<f64>,
        z: DMatrix<f64>,
        q_cov: DMatrix<f64>,
        v: DMatrix<f64>,
        a0: DVector<f64>,
        q0: DMatrix<f64>,
    ) -> Result<Self> {
        let model = ModelSpec {
            p: f.nrows(),
            q: z.nrows(),
            f: f.into(),
            z: z.into(),
            q_cov: q_cov.into(),
            v: v.into(),
            a0,
            q0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Scalar model with `F = Z = Q = V = Q0 = 1`, `a0 = 0`.
    pub fn scalar_unit() -> Self {
        let one = || DMatrix::from_element(1, 1, 1.0);
        ModelSpec::constant(one(), one(), one(), one(), DVector::zeros(1), one())
            .expect("unit model is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.p, self.q);
        if p == 0 {
            return Err(Error::validation("p", "state dimension must be positive"));
        }
        if q == 0 {
            return Err(Error::validation(
                "q",
                "observation dimension must be positive",
            ));
        }
        for (k, f) in self.f.iter() {
            linalg::check_finite(f, &self.f.label("F", k))?;
            linalg::check_square(f, p, &self.f.label("F", k))?;
        }
        for (k, z) in self.z.iter() {
            let field = self.z.label("Z", k);
            linalg::check_finite(z, &field)?;
            if z.nrows() != q || z.ncols() != p {
                return Err(Error::validation(
                    field,
                    format!("expected {q}x{p}, got {}x{}", z.nrows(), z.ncols()),
                ));
            }
        }
        for (k, m) in self.q_cov.iter() {
            let field = self.q_cov.label("Q", k);
            linalg::check_square(m, p, &field)?;
            linalg::check_covariance(m, &field)?;
        }
        for (k, m) in self.v.iter() {
            let field = self.v.label("V", k);
            linalg::check_square(m, q, &field)?;
            linalg::check_covariance(m, &field)?;
        }
        if self.a0.len() != p {
            return Err(Error::validation(
                "a0",
                format!("expected length {p}, got {}", self.a0.len()),
            ));
        }
        if !self.a0.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("a0", "entries must be finite"));
        }
        linalg::check_square(&self.q0, p, "Q0")?;
        linalg::check_covariance(&self.q0, "Q0")?;
        Ok(())
    }

    /// Shortest explicit horizon among time-varying hyper-parameters.
    pub fn max_horizon(&self) -> Option<usize> {
        [&self.f, &self.z, &self.q_cov, &self.v]
            .iter()
            .filter_map(|m| m.horizon())
            .min()
    }

    /// Checks that the model defines hyper-parameters for every `t <= horizon`.
    pub fn check_horizon(&self, horizon: usize) -> Result<()> {
        if horizon == 0 {
            return Err(Error::Argument("horizon T must be at least 1".into()));
        }
        match self.max_horizon() {
            Some(h) if h < horizon => Err(Error::validation(
                "model",
                format!("time-varying hyper-parameters cover {h} steps, horizon is {horizon}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn f_at(&self, t: usize) -> Result<&DMatrix<f64>> {
        self.f.at(t)
    }
    pub fn z_at(&self, t: usize) -> Result<&DMatrix<f64>> {
        self.z.at(t)
    }
    pub fn q_at(&self, t: usize) -> Result<&DMatrix<f64>> {
        self.q_cov.at(t)
    }
    pub fn v_at(&self, t: usize) -> Result<&DMatrix<f64>> {
        self.v.at(t)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ModelSpec = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    /// Unconditional moments `(E X_t, Cov X_t)` of the ideal state at time `t`.
    pub fn state_moments(&self, t: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut mean = self.a0.clone();
        let mut cov = self.q0.clone();
        for s in 1..=t {
            let f = self.f_at(s)?;
            mean = f * mean;
            cov = linalg::symmetrize(&(f * cov * f.transpose() + self.q_at(s)?));
        }
        Ok((mean, cov))
    }
}
