use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter ladder `1e-12 · tr(G)/M`, ×10 per rung, up to `1e-6 · tr(G)/M`.
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// A symmetric kernel Gram matrix with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramSystem {
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GramSystem {
    /// Factorizes `matrix`, walking the jitter ladder when the plain factorization
    /// fails or leaves a residual above `1e-10`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if m == 0 || matrix.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "gram matrix must be square and non-empty, got {}x{}",
                m,
                matrix.ncols()
            )));
        }
        let scale = matrix.trace() / m as f64;
        let mut ladder = vec![0.0];
        let mut rung = JITTER_START;
        while rung <= JITTER_MAX * (1.0 + 1e-9) {
            ladder.push(rung * scale);
            rung *= 10.0;
        }
        for &jitter in &ladder {
            let mut shifted = matrix.clone();
            for i in 0..m {
                shifted[(i, i)] += jitter;
            }
            if let Some(factor) = Cholesky::new(shifted) {
                let system = Self {
                    matrix: matrix.clone(),
                    factor,
                    jitter,
                };
                if system.residual() <= 1e-10 {
                    return Ok(system);
                }
            }
        }
        Err(singular(&matrix, *ladder.last().unwrap_or(&0.0)))
    }

    /// Gram matrix of `kernel` over `points`.
    pub fn from_kernel<P>(points: &[P], kernel: impl Fn(&P, &P) -> f64) -> Result<Self> {
        let m = points.len();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = kernel(&points[i], &points[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Self::new(g)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    /// `‖G − LLᵀ‖_F / ‖G‖_F` (the jitter is part of the factored matrix).
    pub fn residual(&self) -> f64 {
        let l = self.factor.l();
        let mut shifted = self.matrix.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += self.jitter;
        }
        let norm = self.matrix.norm();
        if norm == 0.0 {
            return 0.0;
        }
        (shifted - &l * l.transpose()).norm() / norm
    }
}

fn singular(matrix: &DMatrix<f64>, jitter: f64) -> Error {
    let eig = nalgebra::SymmetricEigen::new(matrix.clone()).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    Error::SingularGram {
        jitter,
        condition: if min > 0.0 { max / min } else { f64::INFINITY },
    }
}
