//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Symmetric PSD square root; negative eigenvalues (round-off) are clipped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.abs()))
}

/// Power iteration estimate of the spectral norm of a symmetric matrix.
/// Deterministic start vector; slightly overestimates via a safety factor.
pub fn power_norm_sym(m: &DMatrix<f64>, iterations: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919 % 97) as f64 / 97.0));
    x /= x.norm();
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let y = m * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm;
        x = y / norm;
    }
    estimate
}

/// Column-major vectorization.
pub fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec_col_major(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v)
}
