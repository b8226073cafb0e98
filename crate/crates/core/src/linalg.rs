//! Small dense linear-algebra helpers shared by the filters and solvers.
//!
//! Covariances throughout the crate are symmetric positive semi-definite and
//! possibly singular, so everything here goes through the symmetric
//! eigendecomposition rather than Cholesky.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which `pinv_psd` treats a direction as null.
pub const PINV_RTOL: f64 = 1e-12;

/// Admissible negative eigenvalue of a PSD input, relative to the largest eigenvalue.
pub const PSD_RTOL: f64 = 1e-10;

/// Relative asymmetry tolerated by `pinv_psd`.
pub const SYMMETRY_RTOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_square(m: &DMatrix<f64>, n: usize, field: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::validation(
            field,
            format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn check_finite(m: &DMatrix<f64>, field: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::validation(field, "entries must be finite"))
    }
}

/// Exact symmetry plus `min eig >= -PSD_RTOL * max eig`.
pub fn check_covariance(m: &DMatrix<f64>, field: &str) -> Result<()> {
    check_finite(m, field)?;
    if m.nrows() != m.ncols() {
        return Err(Error::validation(field, "covariance must be square"));
    }
    if asymmetry(m) != 0.0 {
        return Err(Error::validation(
            field,
            "covariance must be exactly symmetric",
        ));
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_RTOL * max.max(0.0) || (max <= 0.0 && min < 0.0) {
        return Err(Error::validation(
            field,
            format!("covariance is not positive semi-definite (min eigenvalue {min:e})"),
        ));
    }
    Ok(())
}

/// Moore-Penrose inverse of a symmetric PSD matrix via its eigendecomposition.
///
/// Eigenvalues at or below `PINV_RTOL * max eigenvalue` (and all negative
/// rounding noise) are treated as zero.
pub fn pinv_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::dimension(
            "pinv_psd",
            "square matrix",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    check_finite(a, "pinv_psd input")?;
    let scale = max_abs(a);
    if asymmetry(a) > SYMMETRY_RTOL * scale {
        return Err(Error::validation(
            "pinv_psd input",
            "matrix is not symmetric",
        ));
    }
    let n = a.nrows();
    if n == 0 || scale == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(symmetrize(a));
    let lmax = eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = PINV_RTOL * lmax;
    let inv = eigenvalues.map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let out = &eigenvectors * DMatrix::from_diagonal(&inv) * eigenvectors.transpose();
    Ok(symmetrize(&out))
}

/// Symmetric square root of a PSD matrix; negative rounding noise is clipped to zero.
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(symmetrize(a));
    let root = eigenvalues.map(|l| l.max(0.0).sqrt());
    &eigenvectors * DMatrix::from_diagonal(&root) * eigenvectors.transpose()
}

/// Numerical rank of a PSD matrix at the `pinv_psd` threshold.
pub fn psd_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    let eig = SymmetricEigen::new(symmetrize(a)).eigenvalues;
    let lmax = eig.iter().cloned().fold(0.0_f64, f64::max);
    if lmax <= 0.0 {
        return 0;
    }
    eig.iter().filter(|&&l| l > PINV_RTOL * lmax).count()
}

/// Inverse of a square matrix, refusing numerically singular input.
pub fn checked_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Unsupported(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::Unsupported(format!("{what} is singular")));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Unsupported(format!("{what} is singular")))
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Serde adapters for row-major nested-array matrices and plain-array vectors.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().cloned().collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".to_string());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub mod serde_vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(DVector::from_vec)
            .collect())
    }
}
