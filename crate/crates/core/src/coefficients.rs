//! Drift and diffusion coefficient fields.
//!
//! Every field exposes a [`CoefficientJet`]: the diffusion `a` with its first
//! and second spatial derivatives, and the drift `b` with its Jacobian. That is
//! exactly what the dual generator consumes. Matrices are stored row-major in
//! flat vectors of length `n²`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{GramSystem, KernelSpec, RadialJet, WindowedKernel};
use crate::linalg;

/// Pointwise values and spatial derivatives of `(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientJet {
    pub n: usize,
    /// `a_{ij}` at `i*n + j`.
    pub a: Vec<f64>,
    /// `∂_k a` for each `k`.
    pub da: Vec<Vec<f64>>,
    /// `∂_k ∂_l a` at index `k*n + l`.
    pub d2a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// `∂_k b_i` at `i*n + k`.
    pub db: Vec<f64>,
}

impl CoefficientJet {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![0.0; n * n],
            da: vec![vec![0.0; n * n]; n],
            d2a: vec![vec![0.0; n * n]; n * n],
            b: vec![0.0; n],
            db: vec![0.0; n * n],
        }
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.a)
    }

    pub fn b_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b)
    }
}

/// A diffusion/drift pair on `[0,T] × ℝⁿ`.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;

    fn jet(&self, t: f64, y: &[f64]) -> CoefficientJet;

    /// Radius of the ball outside of which both coefficients vanish, if any.
    fn support_radius(&self) -> Option<f64>;

    /// JSON description written into dataset manifests.
    fn describe(&self) -> serde_json::Value;

    fn evaluate_a(&self, t: f64, y: &[f64]) -> DMatrix<f64> {
        self.jet(t, y).a_matrix()
    }

    fn evaluate_b(&self, t: f64, y: &[f64]) -> DVector<f64> {
        self.jet(t, y).b_vector()
    }

    /// `(a, b)` without derivatives; fields override this when derivatives are costly.
    fn value(&self, t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let j = self.jet(t, y);
        (j.a, j.b)
    }
}

impl<F: CoefficientField + ?Sized> CoefficientField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn jet(&self, t: f64, y: &[f64]) -> CoefficientJet {
        (**self).jet(t, y)
    }
    fn support_radius(&self) -> Option<f64> {
        (**self).support_radius()
    }
    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
    fn value(&self, t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (**self).value(t, y)
    }
}

impl<F: CoefficientField + ?Sized> CoefficientField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn jet(&self, t: f64, y: &[f64]) -> CoefficientJet {
        (**self).jet(t, y)
    }
    fn support_radius(&self) -> Option<f64> {
        (**self).support_radius()
    }
    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
    fn value(&self, t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (**self).value(t, y)
    }
}

/// Radial cutoff equal to 1 on `‖y‖ ≤ R − 1` and 0 outside `‖y‖ < R`, built from
/// the quintic smoothstep so that it is C² across both edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub radius: f64,
}

impl Cutoff {
    /// `(χ, χ', χ'')` as functions of `r = ‖y‖`.
    fn profile(&self, r: f64) -> (f64, f64, f64) {
        let s = r - (self.radius - 1.0);
        if s <= 0.0 {
            (1.0, 0.0, 0.0)
        } else if s >= 1.0 {
            (0.0, 0.0, 0.0)
        } else {
            let step = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
            let d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s);
            let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
            (1.0 - step, -d1, -d2)
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.profile(norm(y)).0
    }

    pub fn jet(&self, y: &[f64]) -> RadialJet {
        let n = y.len();
        let r = norm(y);
        let (v, d1, d2) = self.profile(r);
        let mut jet = RadialJet::zeros(n);
        jet.value = v;
        if d1 == 0.0 && d2 == 0.0 {
            return jet;
        }
        // r ≥ R − 1 > 0 here, so dividing by r is safe.
        for i in 0..n {
            jet.grad[i] = d1 * y[i] / r;
            for j in 0..n {
                let u = y[i] * y[j] / (r * r);
                let delta = if i == j { 1.0 } else { 0.0 };
                jet.hess[i * n + j] = d2 * u + d1 / r * (delta - u);
            }
        }
        jet
    }
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Ornstein–Uhlenbeck coefficients `b = −θ y χ(y)`, `a = σ² χ(y) I`, where `χ`
/// is the [`Cutoff`] at radius `R*` (or `χ ≡ 1` when unbounded).
#[derive(Debug, Clone, PartialEq)]
pub struct OuField {
    theta: f64,
    sigma2: f64,
    n: usize,
    cutoff: Option<Cutoff>,
}

/// Ornstein–Uhlenbeck ground truth; `radius = None` disables the cutoff.
pub fn ou_field(theta: f64, sigma2: f64, n: usize, radius: Option<f64>) -> Result<OuField> {
    if !(theta >= 0.0) || !(sigma2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "OU parameters must be non-negative (theta = {theta}, sigma2 = {sigma2})"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if let Some(r) = radius {
        if !(r > 1.0) {
            return Err(Error::InvalidParameter(format!("support radius must exceed 1, got {r}")));
        }
    }
    Ok(OuField {
        theta,
        sigma2,
        n,
        cutoff: radius.map(|radius| Cutoff { radius }),
    })
}

impl OuField {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

impl CoefficientField for OuField {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, _t: f64, y: &[f64]) -> CoefficientJet {
        let n = self.n;
        let chi = match &self.cutoff {
            Some(c) => c.jet(y),
            None => RadialJet {
                value: 1.0,
                grad: vec![0.0; n],
                hess: vec![0.0; n * n],
            },
        };
        let mut jet = CoefficientJet::zeros(n);
        for i in 0..n {
            jet.a[i * n + i] = self.sigma2 * chi.value;
            jet.b[i] = -self.theta * y[i] * chi.value;
            for k in 0..n {
                jet.da[k][i * n + i] = self.sigma2 * chi.grad[k];
                let delta = if i == k { 1.0 } else { 0.0 };
                jet.db[i * n + k] = -self.theta * (delta * chi.value + y[i] * chi.grad[k]);
                for l in 0..n {
                    jet.d2a[k * n + l][i * n + i] = self.sigma2 * chi.hess[k * n + l];
                }
            }
        }
        jet
    }

    fn support_radius(&self) -> Option<f64> {
        self.cutoff.map(|c| c.radius)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "family": "ou",
            "theta": self.theta,
            "sigma2": self.sigma2,
            "support_radius": self.support_radius(),
        })
    }

    fn value(&self, _t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let chi = self.cutoff.map_or(1.0, |c| c.value(y));
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = self.sigma2 * chi;
        }
        (a, y.iter().map(|v| -self.theta * v * chi).collect())
    }
}

/// Spatially constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ConstantField {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "a is {}x{}, b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let n = b.len();
        Ok(Self {
            a: (0..n * n).map(|k| a[(k / n, k % n)]).collect(),
            b: b.iter().copied().collect(),
        })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            a: vec![0.0; n * n],
            b: vec![0.0; n],
        }
    }
}

impl CoefficientField for ConstantField {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn jet(&self, _t: f64, _y: &[f64]) -> CoefficientJet {
        let mut jet = CoefficientJet::zeros(self.b.len());
        jet.a.clone_from(&self.a);
        jet.b.clone_from(&self.b);
        jet
    }

    fn support_radius(&self) -> Option<f64> {
        None
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "family": "constant", "a": self.a, "b": self.b })
    }

    fn value(&self, _t: f64, _y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.a.clone(), self.b.clone())
    }
}

/// `base` with a constant vector added to its drift.
#[derive(Debug, Clone)]
pub struct DriftShift<F> {
    pub base: F,
    pub shift: Vec<f64>,
}

impl<F: CoefficientField> CoefficientField for DriftShift<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn jet(&self, t: f64, y: &[f64]) -> CoefficientJet {
        let mut jet = self.base.jet(t, y);
        jet.b.iter_mut().zip(&self.shift).for_each(|(b, s)| *b += s);
        jet
    }

    fn support_radius(&self) -> Option<f64> {
        None
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "family": "drift-shift", "shift": self.shift, "base": self.base.describe() })
    }

    fn value(&self, t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (a, mut b) = self.base.value(t, y);
        b.iter_mut().zip(&self.shift).for_each(|(b, s)| *b += s);
        (a, b)
    }
}

/// `a + αI` for a base field and `α > 0`.
#[derive(Debug, Clone)]
pub struct RegularizedDiffusion<F> {
    pub base: F,
    pub alpha: f64,
}

impl<F: CoefficientField> RegularizedDiffusion<F> {
    pub fn new(base: F, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { base, alpha })
    }

    pub fn evaluate(&self, t: f64, y: &[f64]) -> DMatrix<f64> {
        let n = self.base.dim();
        let (a, _) = self.base.value(t, y);
        DMatrix::from_row_slice(n, n, &a) + DMatrix::identity(n, n) * self.alpha
    }

    /// Symmetric square root of `a + αI`.
    pub fn sqrt(&self, t: f64, y: &[f64]) -> DMatrix<f64> {
        sqrt_regularized(&self.evaluate(t, y))
    }
}

/// Symmetric PSD square root of an already regularized diffusion matrix.
pub fn sqrt_regularized(a_alpha: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::sqrt_psd(a_alpha)
}

/// Diffusion `Φ A Φᵀ` and drift `Φ B` on the windowed kernel features, where
/// `Φ(t,y)` is the `n × Qn` matrix with blocks `K_D((t,y), c_ℓ) I_n`.
#[derive(Debug, Clone)]
pub struct LearnedCoefficients {
    n: usize,
    alpha: f64,
    centers: Vec<Vec<f64>>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    kernel: WindowedKernel,
    alpha_floor: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct LearnedFile {
    n: usize,
    #[serde(rename = "Q")]
    q: usize,
    alpha: f64,
    centers: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    kernel: KernelSpec,
    #[serde(default)]
    alpha_floor: bool,
}

impl LearnedCoefficients {
    pub fn new(
        kernel: WindowedKernel,
        centers: Vec<Vec<f64>>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        alpha: f64,
    ) -> Result<Self> {
        let n = kernel.dim();
        let qn = centers.len() * n;
        if a.nrows() != qn || a.ncols() != qn || b.len() != qn {
            return Err(Error::DimensionMismatch(format!(
                "Q = {}, n = {n}: A is {}x{}, B has length {}",
                centers.len(),
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != n + 1) {
            return Err(Error::DimensionMismatch(format!("center {c:?} is not a point of [0,T] x R^{n}")));
        }
        let scale = a.norm().max(f64::MIN_POSITIVE);
        if (&a - a.transpose()).norm() > 1e-10 * scale {
            return Err(Error::InvalidParameter("A must be symmetric".into()));
        }
        if qn > 0 && linalg::min_eigenvalue(&a) < -1e-8 * linalg::spectral_norm_sym(&a) {
            return Err(Error::InvalidParameter("A must be positive semidefinite".into()));
        }
        Ok(Self {
            n,
            alpha,
            centers,
            a: linalg::symmetrize(&a),
            b,
            kernel,
            alpha_floor: false,
        })
    }

    /// Enables the variant `χ·ã + (1 − χ)·αI`, which keeps the diffusion above
    /// `αI` away from the core of the ball.
    pub fn with_alpha_floor(mut self, on: bool) -> Self {
        self.alpha_floor = on;
        self
    }

    pub fn zero(kernel: WindowedKernel, centers: Vec<Vec<f64>>, alpha: f64) -> Result<Self> {
        let qn = centers.len() * kernel.dim();
        Self::new(kernel, centers, DMatrix::zeros(qn, qn), DVector::zeros(qn), alpha)
    }

    /// Feasible comparison point for a ground-truth field: `b̃` interpolates `b*`
    /// at the centers, and `A = RᵀR` where `Σ_ℓ K_D(·, c_ℓ) R_ℓ` interpolates
    /// `√a*` entrywise.
    pub fn projection_point<F: CoefficientField>(
        field: &F,
        kernel: WindowedKernel,
        centers: Vec<Vec<f64>>,
        alpha: f64,
    ) -> Result<Self> {
        let n = kernel.dim();
        let q = centers.len();
        let gram = GramSystem::from_kernel(&centers, |c1: &Vec<f64>, c2: &Vec<f64>| {
            kernel.value(c1[0], &c1[1..], c2)
        })?;
        let ginv = gram.inverse();
        let mut roots = Vec::with_capacity(q);
        let mut drifts = Vec::with_capacity(q);
        for c in &centers {
            let (a, b) = field.value(c[0], &c[1..]);
            roots.push(linalg::sqrt_psd(&DMatrix::from_row_slice(n, n, &a)));
            drifts.push(b);
        }
        let mut r = DMatrix::zeros(n, q * n);
        let mut b = DVector::zeros(q * n);
        for l in 0..q {
            for lp in 0..q {
                let g = ginv[(l, lp)];
                for i in 0..n {
                    b[l * n + i] += g * drifts[lp][i];
                    for j in 0..n {
                        r[(i, l * n + j)] += g * roots[lp][(i, j)];
                    }
                }
            }
        }
        let a = r.transpose() * &r;
        Self::new(kernel, centers, a, b, alpha)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.centers.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_vector(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn kernel(&self) -> &WindowedKernel {
        &self.kernel
    }

    pub fn alpha_floor(&self) -> bool {
        self.alpha_floor
    }

    /// `(ã(t,y), b̃(t,y))`.
    pub fn evaluate_learned(&self, t: f64, y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (a, b) = self.value(t, y);
        (DMatrix::from_row_slice(self.n, self.n, &a), DVector::from_column_slice(&b))
    }

    fn floor_cutoff(&self) -> Cutoff {
        Cutoff {
            radius: self.kernel.radius(),
        }
    }

    fn jets(&self, t: f64, y: &[f64]) -> Vec<RadialJet> {
        self.centers.iter().map(|c| self.kernel.y_jet(t, y, c)).collect()
    }

    /// `Σ_{ℓℓ'} f_ℓ g_ℓ' A_{ℓℓ'}` as a flat `n × n` block.
    fn contract(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for (l, fl) in f.iter().enumerate() {
            if *fl == 0.0 {
                continue;
            }
            for (lp, gl) in g.iter().enumerate() {
                let s = fl * gl;
                if s == 0.0 {
                    continue;
                }
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] += s * self.a[(l * n + i, lp * n + j)];
                    }
                }
            }
        }
        out
    }

    fn apply_floor(&self, y: &[f64], jet: &mut CoefficientJet) {
        let n = self.n;
        let chi = self.floor_cutoff().jet(y);
        let base = jet.clone();
        let floor = |i: usize, j: usize| if i == j { self.alpha } else { 0.0 };
        for i in 0..n {
            for j in 0..n {
                let e = i * n + j;
                let diff = base.a[e] - floor(i, j);
                jet.a[e] = chi.value * base.a[e] + (1.0 - chi.value) * floor(i, j);
                for k in 0..n {
                    jet.da[k][e] = chi.value * base.da[k][e] + chi.grad[k] * diff;
                    for l in 0..n {
                        jet.d2a[k * n + l][e] = chi.value * base.d2a[k * n + l][e]
                            + chi.grad[k] * base.da[l][e]
                            + chi.grad[l] * base.da[k][e]
                            + chi.hess[k * n + l] * diff;
                    }
                }
            }
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let q = self.q();
        let qn = q * self.n;
        let file = LearnedFile {
            n: self.n,
            q,
            alpha: self.alpha,
            centers: self.centers.clone(),
            a: (0..qn * qn).map(|k| self.a[(k / qn, k % qn)]).collect(),
            b: self.b.iter().copied().collect(),
            kernel: self.kernel.spec(),
            alpha_floor: self.alpha_floor,
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: LearnedFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let qn = file.q * file.n;
        if file.centers.len() != file.q || file.a.len() != qn * qn || file.b.len() != qn {
            return Err(Error::schema(path, "Q, n, centers, A and B sizes disagree"));
        }
        if file.kernel.family != "windowed-matern" || file.kernel.domain.n != file.n {
            return Err(Error::schema(path, format!("unsupported kernel {:?}", file.kernel)));
        }
        let kernel = WindowedKernel::from_spec(&file.kernel);
        Ok(Self::new(
            kernel,
            file.centers,
            DMatrix::from_row_slice(qn, qn, &file.a),
            DVector::from_vec(file.b),
            file.alpha,
        )?
        .with_alpha_floor(file.alpha_floor))
    }
}

impl CoefficientField for LearnedCoefficients {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, t: f64, y: &[f64]) -> CoefficientJet {
        let n = self.n;
        let mut jet = CoefficientJet::zeros(n);
        if self.kernel.contains(t, y) {
            let ks = self.jets(t, y);
            let val: Vec<f64> = ks.iter().map(|k| k.value).collect();
            let grad: Vec<Vec<f64>> = (0..n).map(|k| ks.iter().map(|j| j.grad[k]).collect()).collect();
            jet.a = self.contract(&val, &val);
            for k in 0..n {
                let da = self.contract(&grad[k], &val);
                // ∂_k a = Σ (∂_k K_ℓ K_ℓ' + K_ℓ ∂_k K_ℓ') A_ℓℓ'; A symmetric makes the second term the transpose.
                jet.da[k] = (0..n * n).map(|e| da[e] + da[(e % n) * n + e / n]).collect();
                for l in 0..n {
                    let hkl: Vec<f64> = ks.iter().map(|j| j.hess[k * n + l]).collect();
                    let p = self.contract(&hkl, &val);
                    let cross = self.contract(&grad[k], &grad[l]);
                    jet.d2a[k * n + l] = (0..n * n)
                        .map(|e| {
                            let et = (e % n) * n + e / n;
                            p[e] + p[et] + cross[e] + cross[et]
                        })
                        .collect();
                }
            }
            for (l, kj) in ks.iter().enumerate() {
                for i in 0..n {
                    let bi = self.b[l * n + i];
                    jet.b[i] += kj.value * bi;
                    for k in 0..n {
                        jet.db[i * n + k] += kj.grad[k] * bi;
                    }
                }
            }
        }
        if self.alpha_floor {
            self.apply_floor(y, &mut jet);
        }
        jet
    }

    fn support_radius(&self) -> Option<f64> {
        if self.alpha_floor {
            None
        } else {
            Some(self.kernel.radius())
        }
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "family": "learned", "Q": self.q(), "kernel": self.kernel.spec() })
    }

    fn value(&self, t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let (mut a, mut b) = (vec![0.0; n * n], vec![0.0; n]);
        if self.kernel.contains(t, y) {
            let val: Vec<f64> = self.centers.iter().map(|c| self.kernel.value(t, y, c)).collect();
            a = self.contract(&val, &val);
            for (l, v) in val.iter().enumerate() {
                for i in 0..n {
                    b[i] += v * self.b[l * n + i];
                }
            }
        }
        if self.alpha_floor {
            let chi = self.floor_cutoff().value(y);
            for i in 0..n {
                for j in 0..n {
                    let floor = if i == j { self.alpha } else { 0.0 };
                    a[i * n + j] = chi * a[i * n + j] + (1.0 - chi) * floor;
                }
            }
        }
        (a, b)
    }
}
