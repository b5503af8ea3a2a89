//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Cholesky factorization of `a + jitter * I`.
pub fn cholesky_jittered(a: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    Cholesky::new(m).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{}x{} matrix, jitter {jitter:e}", a.nrows(), a.ncols()))
    })
}

/// Eigendecomposition of a symmetric matrix with eigenvalues clamped at zero.
pub fn psd_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let values = eig.eigenvalues.map(|v| v.max(0.0));
    (values, eig.eigenvectors)
}

/// Symmetrizes in place by mirroring the upper triangle, so the result is
/// bit-exactly symmetric.
pub fn mirror_upper(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
