//! Ridge-regularised canonical correlation analysis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Leading coefficients above this suggest strong interplay between the two sides.
pub const INTERPLAY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaResult {
    /// Sorted descending, clipped to `[0, 1]`.
    pub coefficients: Vec<f64>,
    pub leading: f64,
    pub interplay_flag: bool,
}

fn to_centered(t: &Tensor) -> DMatrix<f64> {
    let means = t.col_means();
    DMatrix::from_fn(t.rows(), t.cols(), |r, c| t.get(r, c) - means.data()[c])
}

/// `C^{-1/2}` of a symmetric PSD matrix; directions with eigenvalue at
/// numerical zero are dropped.
fn inv_sqrt(c: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = top * 1e-12;
    let d = eig.eigenvalues.map(|l| {
        if l > floor && l > 0.0 {
            1.0 / l.sqrt()
        } else {
            0.0
        }
    });
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Canonical correlations between the rows of `a` and `b`.
pub fn cca(a: &Tensor, b: &Tensor, ridge: f64) -> Result<CcaResult> {
    let n = a.rows();
    if n < 3 {
        return Err(Error::Size(format!("CCA needs at least 3 rows, got {n}")));
    }
    if b.rows() != n {
        return Err(Error::Contract(format!(
            "CCA sides have {n} and {} rows",
            b.rows()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Contract(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    let x = to_centered(a);
    let y = to_centered(b);
    let k = 1.0 / (n - 1) as f64;
    let cxx = x.transpose() * &x * k + DMatrix::identity(a.cols(), a.cols()) * ridge;
    let cyy = y.transpose() * &y * k + DMatrix::identity(b.cols(), b.cols()) * ridge;
    let cxy = x.transpose() * &y * k;

    let t = inv_sqrt(cxx) * cxy * inv_sqrt(cyy);
    let mut coefficients: Vec<f64> = t
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    coefficients.sort_by(|p, q| q.total_cmp(p));
    let leading = coefficients.first().copied().unwrap_or(0.0);
    Ok(CcaResult {
        coefficients,
        leading,
        interplay_flag: leading > INTERPLAY_THRESHOLD,
    })
}
