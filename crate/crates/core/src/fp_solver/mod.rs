//! Forward solver for `∂ₜp = L*p + f` on a box with zero-flux walls, in one
//! and two space dimensions.
//!
//! The spatial operator is written in divergence form, `∂ₜp = −∇·J + f` with
//! `J_i = b_i p − ½ Σ_j ∂_j((a + αI)_{ij} p)`, and discretised on the lattice
//! nodes with trapezoid control volumes (half cells on the walls). Fluxes
//! live on the faces between nodes and vanish on the walls, so the trapezoid
//! mass changes only through `f`.
//!
//! Time stepping is Crank–Nicolson in 1-D and the Douglas ADI scheme with
//! `θ = ½` in 2-D; the mixed-derivative part of the flux is explicit.

mod metrics;

pub use metrics::{
    calibrate_stability_constant, discretization_floor, metric_e, observation_gap, refine_lattice, stability_check,
    StabilityInputs, StabilityVerdict,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::density::{GridDensity, Lattice};
use crate::error::{Error, Result};

pub type Source<'a> = &'a (dyn Fn(f64, &[f64]) -> f64 + Sync);

/// Step size in units of the squared finest spacing when none is given.
pub const DEFAULT_DT_FACTOR: f64 = 10.0;

pub struct FpProblem<'a> {
    pub field: &'a dyn CoefficientField,
    pub alpha: f64,
    pub lattice: Lattice,
    /// `p̄` on the space lattice.
    pub initial: Vec<f64>,
    /// Defaults to `10·dx²`, divided by 4 when the diffusion has off-diagonal entries.
    pub dt: Option<f64>,
    pub source: Option<Source<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpStats {
    pub dt: f64,
    pub steps: usize,
    /// Largest `|∫p(t_k) − ∫p̄|` over the lattice times.
    pub max_mass_drift: f64,
    pub min_value: f64,
    pub cross_terms: bool,
}

/// `f` on the space lattice, rescaled to unit trapezoid mass.
pub fn normalized_initial(lattice: &Lattice, f: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
    let values: Vec<f64> = lattice.points().iter().map(|x| f(x)).collect();
    let mass: f64 = lattice.space_weights().iter().zip(&values).map(|(w, v)| w * v).sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::InvalidParameter(format!("initial density has mass {mass} on the lattice")));
    }
    Ok(values.into_iter().map(|v| v / mass).collect())
}

pub fn solve_fp(problem: &FpProblem) -> Result<GridDensity> {
    solve_fp_with_stats(problem).map(|(p, _)| p)
}

pub fn solve_fp_with_stats(problem: &FpProblem) -> Result<(GridDensity, FpStats)> {
    let lat = &problem.lattice;
    let n = lat.n;
    if n == 0 || n > 2 {
        return Err(Error::InvalidParameter(format!("the forward solver handles n = 1, 2; got {n}")));
    }
    if problem.field.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "{}-d coefficients on a {n}-d lattice",
            problem.field.dim()
        )));
    }
    if !(problem.alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be non-negative, got {}", problem.alpha)));
    }
    if problem.initial.len() != lat.space_len() {
        return Err(Error::DimensionMismatch(format!(
            "initial density has {} values for {} nodes",
            problem.initial.len(),
            lat.space_len()
        )));
    }
    let weights = lat.space_weights();
    let mass0: f64 = weights.iter().zip(&problem.initial).map(|(w, v)| w * v).sum();
    if problem.initial.iter().any(|v| !(*v >= 0.0)) || (mass0 - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "initial density must be non-negative with unit mass (mass {mass0})"
        )));
    }
    if lat.times.windows(2).any(|w| w[1] <= w[0]) || lat.times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidParameter("lattice times must be non-negative and increasing".into()));
    }

    let grid = Grid::new(lat);
    let t_end = *lat.times.last().unwrap_or(&0.0);
    let cross_terms = n == 2 && grid.has_cross_terms(problem.field, t_end);
    let dx2 = lat.spacing.iter().fold(f64::INFINITY, |m, h| m.min(h * h));
    let dt_max = match problem.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}"))),
        None => DEFAULT_DT_FACTOR * dx2 / if cross_terms { 4.0 } else { 1.0 },
    };

    let mut p = problem.initial.clone();
    let mut t = 0.0;
    let mut values = Vec::with_capacity(lat.len());
    let mut steps = 0;
    let mut max_drift: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    let mut source_mass = 0.0;
    for &target in &lat.times {
        let span = target - t;
        if span > 0.0 {
            let count = (span / dt_max).ceil().max(1.0) as usize;
            let dt = span / count as f64;
            for k in 0..count {
                let t0 = t + k as f64 * dt;
                p = grid.step(problem, &p, t0, dt)?;
                steps += 1;
                if let Some(f) = problem.source {
                    let mid = grid.eval_source(f, t0 + 0.5 * dt);
                    source_mass += dt * weights.iter().zip(&mid).map(|(w, v)| w * v).sum::<f64>();
                }
            }
            t = target;
        }
        let mass: f64 = weights.iter().zip(&p).map(|(w, v)| w * v).sum();
        if problem.source.is_none() {
            max_drift = max_drift.max((mass - mass0).abs());
        } else {
            max_drift = max_drift.max((mass - mass0 - source_mass).abs());
        }
        min_value = p.iter().fold(min_value, |m, v| m.min(*v));
        values.extend_from_slice(&p);
    }
    let stats = FpStats {
        dt: dt_max,
        steps,
        max_mass_drift: max_drift,
        min_value,
        cross_terms,
    };
    Ok((GridDensity::new(lat.clone(), values)?, stats))
}

/// Per-node coefficients frozen over one step.
struct Frozen {
    /// `(a + αI)` row-major per node.
    diff: Vec<f64>,
    drift: Vec<f64>,
}

struct Grid {
    n: usize,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    points: Vec<Vec<f64>>,
}

/// Tridiagonal system rows `lower[i] p[i−1] + diag[i] p[i] + upper[i] p[i+1]`.
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let c = x.len();
        for i in 0..c {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.lower[i] * x[i - 1];
            }
            if i + 1 < c {
                v += self.upper[i] * x[i + 1];
            }
            out[i] = v;
        }
    }

    /// Solves `(I − s·T) x = rhs` by the Thomas algorithm.
    fn solve_shifted(&self, s: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let c = rhs.len();
        let mut cp = vec![0.0; c];
        let mut dp = vec![0.0; c];
        let mut piv = 1.0 - s * self.diag[0];
        if piv.abs() < 1e-300 {
            return Err(Error::Numerical("zero pivot in tridiagonal solve".into()));
        }
        cp[0] = -s * self.upper[0] / piv;
        dp[0] = rhs[0] / piv;
        for i in 1..c {
            let lo = -s * self.lower[i];
            piv = 1.0 - s * self.diag[i] - lo * cp[i - 1];
            if piv.abs() < 1e-300 || !piv.is_finite() {
                return Err(Error::Numerical(format!("zero pivot in tridiagonal solve at row {i}")));
            }
            cp[i] = if i + 1 < c { -s * self.upper[i] / piv } else { 0.0 };
            dp[i] = (rhs[i] - lo * dp[i - 1]) / piv;
        }
        for i in (0..c - 1).rev() {
            dp[i] -= cp[i] * dp[i + 1];
        }
        Ok(dp)
    }
}

impl Grid {
    fn new(lat: &Lattice) -> Self {
        let n = lat.n;
        let mut strides = vec![1; n];
        for d in (0..n.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * lat.counts[d + 1];
        }
        Self {
            n,
            counts: lat.counts.clone(),
            spacing: lat.spacing.clone(),
            strides,
            points: lat.points(),
        }
    }

    fn has_cross_terms(&self, field: &dyn CoefficientField, t_end: f64) -> bool {
        [0.0, 0.5 * t_end, t_end]
            .iter()
            .any(|&t| self.points.iter().any(|x| field.value(t, x).0[1] != 0.0))
    }

    fn freeze(&self, field: &dyn CoefficientField, alpha: f64, t: f64) -> Frozen {
        let n = self.n;
        let evaluated: Vec<(Vec<f64>, Vec<f64>)> = self.points.par_iter().map(|x| field.value(t, x)).collect();
        let mut diff = Vec::with_capacity(self.points.len() * n * n);
        let mut drift = Vec::with_capacity(self.points.len() * n);
        for (a, b) in evaluated {
            for i in 0..n {
                for j in 0..n {
                    diff.push(a[i * n + j] + if i == j { alpha } else { 0.0 });
                }
            }
            drift.extend(b);
        }
        Frozen { diff, drift }
    }

    fn eval_source(&self, f: Source, t: f64) -> Vec<f64> {
        self.points.iter().map(|x| f(t, x)).collect()
    }

    /// Start indices of every line along axis `d`.
    fn line_starts(&self, d: usize) -> Vec<usize> {
        (0..self.points.len())
            .filter(|k| (k / self.strides[d]).is_multiple_of(self.counts[d]))
            .collect()
    }

    /// Axis-`d` part of `L*` on the line through `start`.
    fn line_operator(&self, fz: &Frozen, d: usize, start: usize) -> Tridiagonal {
        let (n, c, h, stride) = (self.n, self.counts[d], self.spacing[d], self.strides[d]);
        let node = |i: usize| start + i * stride;
        let dd = |i: usize| fz.diff[node(i) * n * n + d * n + d];
        let bb = |i: usize| fz.drift[node(i) * n + d];
        let mut t = Tridiagonal {
            lower: vec![0.0; c],
            diag: vec![0.0; c],
            upper: vec![0.0; c],
        };
        for i in 0..c {
            let vol = if i == 0 || i + 1 == c { 0.5 * h } else { h };
            // J_{i+½} = p_i(β/2 + D_i/2h) + p_{i+1}(β/2 − D_{i+1}/2h)
            if i + 1 < c {
                let beta = 0.5 * (bb(i) + bb(i + 1));
                t.diag[i] -= (0.5 * beta + 0.5 * dd(i) / h) / vol;
                t.upper[i] -= (0.5 * beta - 0.5 * dd(i + 1) / h) / vol;
            }
            if i > 0 {
                let beta = 0.5 * (bb(i - 1) + bb(i));
                t.lower[i] += (0.5 * beta + 0.5 * dd(i - 1) / h) / vol;
                t.diag[i] += (0.5 * beta - 0.5 * dd(i) / h) / vol;
            }
        }
        t
    }

    /// Explicit mixed-derivative part of `−∇·J` in 2-D.
    fn cross_term(&self, fz: &Frozen, p: &[f64], out: &mut [f64]) {
        let (c0, c1) = (self.counts[0], self.counts[1]);
        let (h0, h1) = (self.spacing[0], self.spacing[1]);
        let idx = |i: usize, j: usize| i * c1 + j;
        let u: Vec<f64> = (0..p.len()).map(|k| fz.diff[k * 4 + 1] * p[k]).collect();
        // centred derivative of u along the other axis, one-sided on the walls
        let du1 = |i: usize, j: usize| {
            let (lo, hi) = (j.saturating_sub(1), (j + 1).min(c1 - 1));
            (u[idx(i, hi)] - u[idx(i, lo)]) / ((hi - lo) as f64 * h1)
        };
        let du0 = |i: usize, j: usize| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(c0 - 1));
            (u[idx(hi, j)] - u[idx(lo, j)]) / ((hi - lo) as f64 * h0)
        };
        for i in 0..c0 {
            let vol0 = if i == 0 || i + 1 == c0 { 0.5 * h0 } else { h0 };
            for j in 0..c1 {
                let vol1 = if j == 0 || j + 1 == c1 { 0.5 * h1 } else { h1 };
                // face fluxes −½∂_1(a₀₁p) across axis-0 faces, −½∂_0(a₁₀p) across axis-1 faces
                let f0 = |a: usize| -0.25 * (du1(a, j) + du1(a + 1, j));
                let f1 = |b: usize| -0.25 * (du0(i, b) + du0(i, b + 1));
                let mut v = 0.0;
                if i + 1 < c0 {
                    v -= f0(i) / vol0;
                }
                if i > 0 {
                    v += f0(i - 1) / vol0;
                }
                if j + 1 < c1 {
                    v -= f1(j) / vol1;
                }
                if j > 0 {
                    v += f1(j - 1) / vol1;
                }
                out[idx(i, j)] += v;
            }
        }
    }

    /// One Douglas step (Crank–Nicolson when `n = 1`) from `t0` to `t0 + dt`.
    fn step(&self, problem: &FpProblem, p: &[f64], t0: f64, dt: f64) -> Result<Vec<f64>> {
        let fz = self.freeze(problem.field, problem.alpha, t0 + 0.5 * dt);
        let size = p.len();
        let operators: Vec<Vec<(usize, Tridiagonal)>> = (0..self.n)
            .map(|d| {
                self.line_starts(d)
                    .into_par_iter()
                    .map(|s| (s, self.line_operator(&fz, d, s)))
                    .collect()
            })
            .collect();
        // L_d p for each axis
        let mut axis_terms = Vec::with_capacity(self.n);
        for (d, ops) in operators.iter().enumerate() {
            let mut lp = vec![0.0; size];
            for (s, op) in ops {
                let line = self.gather(p, d, *s);
                let mut out = vec![0.0; line.len()];
                op.apply(&line, &mut out);
                self.scatter(&mut lp, d, *s, &out);
            }
            axis_terms.push(lp);
        }
        let mut y: Vec<f64> = p.to_vec();
        for lp in &axis_terms {
            for (yk, v) in y.iter_mut().zip(lp) {
                *yk += dt * v;
            }
        }
        if self.n == 2 {
            let mut cross = vec![0.0; size];
            self.cross_term(&fz, p, &mut cross);
            for (yk, v) in y.iter_mut().zip(&cross) {
                *yk += dt * v;
            }
        }
        if let Some(f) = problem.source {
            let f0 = self.eval_source(f, t0);
            let f1 = self.eval_source(f, t0 + dt);
            for ((yk, a), b) in y.iter_mut().zip(&f0).zip(&f1) {
                *yk += 0.5 * dt * (a + b);
            }
        }
        for (d, ops) in operators.iter().enumerate() {
            let rhs: Vec<f64> = y.iter().zip(&axis_terms[d]).map(|(a, b)| a - 0.5 * dt * b).collect();
            let solved: Vec<(usize, Vec<f64>)> = ops
                .par_iter()
                .map(|(s, op)| op.solve_shifted(0.5 * dt, &self.gather(&rhs, d, *s)).map(|x| (*s, x)))
                .collect::<Result<_>>()?;
            for (s, x) in solved {
                self.scatter(&mut y, d, s, &x);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite density after the step at t = {t0}")));
        }
        Ok(y)
    }

    fn gather(&self, v: &[f64], d: usize, start: usize) -> Vec<f64> {
        (0..self.counts[d]).map(|i| v[start + i * self.strides[d]]).collect()
    }

    fn scatter(&self, v: &mut [f64], d: usize, start: usize, line: &[f64]) {
        for (i, x) in line.iter().enumerate() {
            v[start + i * self.strides[d]] = *x;
        }
    }
}

/// `L*` applied to `p` on the lattice, with coefficients frozen at `t`.
pub fn apply_discrete_dual(field: &dyn CoefficientField, alpha: f64, lattice: &Lattice, t: f64, p: &[f64]) -> Vec<f64> {
    let grid = Grid::new(lattice);
    let fz = grid.freeze(field, alpha, t);
    let mut out = vec![0.0; p.len()];
    for d in 0..grid.n {
        for s in grid.line_starts(d) {
            let op = grid.line_operator(&fz, d, s);
            let line = grid.gather(p, d, s);
            let mut lp = vec![0.0; line.len()];
            op.apply(&line, &mut lp);
            for (i, v) in lp.iter().enumerate() {
                out[s + i * grid.strides[d]] += v;
            }
        }
    }
    if grid.n == 2 {
        grid.cross_term(&fz, p, &mut out);
    }
    out
}
