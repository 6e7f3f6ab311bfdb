//! Solver for the semidefinite least-squares program
//!
//! ```text
//! min  vᵀHv + λ (tr((G⊗I)A) + Bᵀ(G⊗I)B)   over A ⪰ 0, B,   v = (1, B, vec A)
//! ```
//!
//! by monotone accelerated projected gradient (FISTA with function-value
//! restart). The only constraint is the PSD cone on `A`, whose Euclidean
//! projection is eigenvalue clipping.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::assembly::QuadraticProgram;
use crate::error::{Error, Result};
use crate::linalg;

/// Frobenius-nearest symmetric PSD matrix.
pub fn project_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return a.clone();
    }
    let eig = SymmetricEigen::new(linalg::symmetrize(a));
    if eig.eigenvalues.iter().all(|l| *l >= 0.0) {
        return linalg::symmetrize(a);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    linalg::symmetrize(&out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Stop once the gradient mapping is below `gradient_tol·(1 + ‖H‖)`.
    pub gradient_tol: f64,
    /// Iterations without a relative decrease above `stall_tol` before giving up.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub power_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            gradient_tol: 1e-8,
            stall_window: 2_000,
            stall_tol: 1e-15,
            power_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTol,
    MaxIter,
    Stall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Objective at the start point and after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Smallest eigenvalue of `A*`.
    pub psd_residual: f64,
    pub gradient_mapping_norm: f64,
    /// Final Lipschitz estimate after backtracking.
    pub lipschitz: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportFile {
    #[serde(rename = "Qn")]
    qn: usize,
    /// Row-major.
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    objective: Vec<f64>,
    final_objective: f64,
    iterations: usize,
    termination: Termination,
    psd_residual: f64,
    gradient_mapping_norm: f64,
    lipschitz: f64,
}

impl SolveReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("trajectory holds the start point")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let qn = self.b.len();
        let file = ReportFile {
            qn,
            a: self.a.transpose().as_slice().to_vec(),
            b: self.b.as_slice().to_vec(),
            objective: self.objective.clone(),
            final_objective: self.final_objective(),
            iterations: self.iterations,
            termination: self.termination,
            psd_residual: self.psd_residual,
            gradient_mapping_norm: self.gradient_mapping_norm,
            lipschitz: self.lipschitz,
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: ReportFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let qn = file.qn;
        if file.a.len() != qn * qn || file.b.len() != qn || file.objective.is_empty() {
            return Err(Error::schema(path, format!("inconsistent sizes for Qn = {qn}")));
        }
        Ok(Self {
            a: DMatrix::from_row_slice(qn, qn, &file.a),
            b: DVector::from_vec(file.b),
            objective: file.objective,
            iterations: file.iterations,
            termination: file.termination,
            psd_residual: file.psd_residual,
            gradient_mapping_norm: file.gradient_mapping_norm,
            lipschitz: file.lipschitz,
        })
    }
}

/// The objective as `c + 2pᵀx + xᵀPx` in `x = (B, vec A)`.
struct Quadratic {
    c: f64,
    p: DVector<f64>,
    big_p: DMatrix<f64>,
    qn: usize,
}

impl Quadratic {
    fn new(qp: &QuadraticProgram) -> Self {
        let qn = qp.qn();
        let d = qn + qn * qn;
        let h = &qp.h;
        let mut p = DVector::from_fn(d, |k, _| h[(1 + k, 0)]);
        let mut big_p = h.view((1, 1), (d, d)).into_owned();
        let g = kron_identity(&qp.gram_q, qp.n);
        for j in 0..qn {
            for i in 0..qn {
                // tr((G⊗I)A) = ⟨G⊗I, A⟩ since both are symmetric
                p[qn + i + j * qn] += 0.5 * qp.lambda * g[(i, j)];
                big_p[(i, j)] += qp.lambda * g[(i, j)];
            }
        }
        Self {
            c: h[(0, 0)],
            p,
            big_p,
            qn,
        }
    }

    fn dim(&self) -> usize {
        self.p.len()
    }

    /// Objective from `x` and `Px`.
    fn value(&self, x: &DVector<f64>, px: &DVector<f64>) -> f64 {
        self.c + 2.0 * self.p.dot(x) + x.dot(px)
    }

    fn gradient(&self, px: &DVector<f64>) -> DVector<f64> {
        (&self.p + px) * 2.0
    }

    /// Projection onto `ℝ^{Qn} × vec(PSD)`.
    fn project(&self, x: &mut DVector<f64>) {
        let qn = self.qn;
        let a = linalg::unvec_col_major(&x.as_slice()[qn..], qn, qn);
        let a = project_psd(&a);
        x.rows_mut(qn, qn * qn).copy_from_slice(a.as_slice());
    }

    fn split(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let qn = self.qn;
        (
            linalg::unvec_col_major(&x.as_slice()[qn..], qn, qn),
            DVector::from_column_slice(&x.as_slice()[..qn]),
        )
    }

    /// Best of `A = 0` with the optimal `B`, and the PSD-projected
    /// unconstrained minimiser with its `B` refitted.
    fn start(&self) -> DVector<f64> {
        let qn = self.qn;
        let d = self.dim();
        let mut candidates = vec![DVector::zeros(d)];
        if let Some(b) = self.best_b(&DVector::zeros(d)) {
            let mut x = DVector::zeros(d);
            x.rows_mut(0, qn).copy_from(&b);
            candidates.push(x);
        }
        let scale = self.big_p.diagonal().amax().max(f64::MIN_POSITIVE);
        let ridge = &self.big_p + DMatrix::identity(d, d) * (1e-12 * scale);
        if let Some(chol) = Cholesky::new(ridge) {
            let mut x = -chol.solve(&self.p);
            if x.iter().all(|v| v.is_finite()) {
                self.project(&mut x);
                if let Some(b) = self.best_b(&x) {
                    x.rows_mut(0, qn).copy_from(&b);
                }
                candidates.push(x);
            }
        }
        let mut best = candidates.swap_remove(0);
        let mut best_f = self.value(&best, &(&self.big_p * &best));
        for x in candidates {
            let f = self.value(&x, &(&self.big_p * &x));
            if f.is_finite() && f < best_f {
                best = x;
                best_f = f;
            }
        }
        best
    }

    /// Minimiser over `B` with `A` taken from `x`.
    fn best_b(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let qn = self.qn;
        if qn == 0 {
            return None;
        }
        let pbb = self.big_p.view((0, 0), (qn, qn)).into_owned();
        let pba = self.big_p.view((0, qn), (qn, qn * qn));
        let rhs = -(self.p.rows(0, qn) + pba * x.rows(qn, qn * qn));
        let scale = pbb.diagonal().amax().max(f64::MIN_POSITIVE);
        let chol = Cholesky::new(pbb + DMatrix::identity(qn, qn) * (1e-12 * scale))?;
        let b = chol.solve(&rhs);
        b.iter().all(|v| v.is_finite()).then_some(b)
    }
}

fn kron_identity(g: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(g.nrows() * n, g.ncols() * n, |r, c| if r % n == c % n { g[(r / n, c / n)] } else { 0.0 })
}

fn check_finite(x: &DVector<f64>, what: &str, iteration: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what} at iteration {iteration}")))
    }
}

pub fn solve(qp: &QuadraticProgram, opts: &SolveOptions) -> Result<SolveReport> {
    let dim = qp.dim();
    if qp.h.nrows() != dim || qp.h.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "H is {}×{}, expected {dim}×{dim}",
            qp.h.nrows(),
            qp.h.ncols()
        )));
    }
    if !(qp.lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {}", qp.lambda)));
    }
    if qp.h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("H has non-finite entries".into()));
    }
    let h_max = qp.h.amax();
    let asym = (&qp.h - qp.h.transpose()).amax();
    if asym > 1e-10 * h_max.max(1.0) {
        return Err(Error::Numerical(format!("H is not symmetric (max |H − Hᵀ| = {asym:e})")));
    }

    let quad = Quadratic::new(qp);
    let h_norm = linalg::power_norm_sym(&qp.h, opts.power_iterations);
    let tol = opts.gradient_tol * (1.0 + h_norm);
    let mut lipschitz = 2.0 * linalg::power_norm_sym(&quad.big_p, opts.power_iterations) * 1.05;
    if !(lipschitz > 0.0) {
        lipschitz = 1.0;
    }

    let mut x = quad.start();
    let mut px = &quad.big_p * &x;
    let mut fx = quad.value(&x, &px);
    let mut x_old = x.clone();
    let mut px_old = px.clone();
    let mut y = x.clone();
    let mut py = px.clone();
    let mut fy = fx;
    let mut t = 1.0_f64;
    let mut trajectory = vec![fx];
    let mut termination = Termination::MaxIter;
    let mut gm_norm = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let g = quad.gradient(&py);
        check_finite(&g, "gradient", iterations)?;
        let (z, pz, fz) = loop {
            let mut z = &y - &g * (1.0 / lipschitz);
            quad.project(&mut z);
            let pz = &quad.big_p * &z;
            let fz = quad.value(&z, &pz);
            let step = &z - &y;
            let model = fy + g.dot(&step) + 0.5 * lipschitz * step.norm_squared();
            if fz <= model + 1e-12 * fy.abs().max(1.0) || !fz.is_finite() {
                break (z, pz, fz);
            }
            lipschitz *= 2.0;
        };
        check_finite(&z, "iterate", iterations)?;
        if !fz.is_finite() {
            return Err(Error::Numerical(format!("non-finite objective at iteration {iterations}")));
        }
        gm_norm = lipschitz * (&y - &z).norm();

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fz <= fx {
            std::mem::swap(&mut x_old, &mut x);
            std::mem::swap(&mut px_old, &mut px);
            x = z;
            px = pz;
            fx = fz;
            let beta = (t - 1.0) / t_next;
            y = &x + (&x - &x_old) * beta;
            py = &px + (&px - &px_old) * beta;
            t = t_next;
        } else {
            // restart the momentum from the last accepted point
            y = x.clone();
            py = px.clone();
            t = 1.0;
        }
        fy = quad.value(&y, &py);
        trajectory.push(fx);

        if gm_norm <= tol {
            termination = Termination::GradientTol;
            break;
        }
        if iterations >= opts.stall_window {
            let before = trajectory[iterations - opts.stall_window];
            if before - fx <= opts.stall_tol * before.abs().max(1.0) {
                termination = Termination::Stall;
                break;
            }
        }
    }

    let (a, b) = quad.split(&x);
    let a = linalg::symmetrize(&a);
    let psd_residual = linalg::min_eigenvalue(&a);
    Ok(SolveReport {
        a,
        b,
        objective: trajectory,
        iterations,
        termination,
        psd_residual,
        gradient_mapping_norm: gm_norm,
        lipschitz,
    })
}

/// `(∇_A f, ∇_B f)` of the full objective at `(A, B)`.
pub fn objective_gradient(qp: &QuadraticProgram, a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let qn = qp.qn();
    let v = qp.pack(a, b);
    let hv = &qp.h * &v * 2.0;
    let g = kron_identity(&qp.gram_q, qp.n);
    let grad_b = hv.rows(1, qn).into_owned() + &g * b * (2.0 * qp.lambda);
    let grad_a = linalg::unvec_col_major(&hv.as_slice()[1 + qn..], qn, qn) + g * qp.lambda;
    (grad_a, grad_b)
}
