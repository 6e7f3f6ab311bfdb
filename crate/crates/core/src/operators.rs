//! The Kolmogorov generator, its formal adjoint, and the feature functions
//! that make the Fokker–Planck residual of `p̂` linear in `(A, B)`.
//!
//! With `K_ℓ = K_D(·, c_ℓ)`, `ã = Σ K_ℓK_ℓ' A_{ℓℓ'}` and `b̃ = Σ K_ℓ B_ℓ`:
//!
//! ```text
//! U_{(ℓ,i)}            = ∂_i(p̂ K_ℓ)
//! V_{(ℓ,i),(ℓ',j)}     = ½ ∂_i∂_j(p̂ K_ℓ K_ℓ')
//! r                    = (α/2) Δp̂
//! q̃                   = ∂_t p̂ − r
//! (L*)p̂               = tr(V A) − U·B + r
//! ∂_t p̂ − (L*)p̂       = q̃ − tr(V A) + U·B = w · (1, B, vec A)
//! ```
//!
//! where `w = (q̃, U, −vec V)`. Indices `(ℓ,i)` flatten to `ℓ·n + i` and `vec`
//! is column-major.

use nalgebra::{DMatrix, DVector};

use crate::coefficients::{CoefficientField, CoefficientJet, LearnedCoefficients};
use crate::density::{DensityJet, DensityModel};
use crate::kernels::RadialJet;

/// `L φ = ½ Σ (a+αI)_{ij} ∂_{ij}φ + Σ b_i ∂_iφ` from pointwise jets.
pub fn generator_from_jets(coeff: &CoefficientJet, alpha: f64, phi: &RadialJet) -> f64 {
    let n = coeff.n;
    let mut out = 0.0;
    for i in 0..n {
        out += coeff.b[i] * phi.grad[i];
        out += 0.5 * alpha * phi.hess[i * n + i];
        for j in 0..n {
            out += 0.5 * coeff.a[i * n + j] * phi.hess[i * n + j];
        }
    }
    out
}

/// `L* u = ½ Σ ∂_i∂_j((a+αI)_{ij} u) − Σ ∂_i(b_i u)`, expanded by the product rule.
pub fn dual_from_jets(coeff: &CoefficientJet, alpha: f64, u: &RadialJet) -> f64 {
    let n = coeff.n;
    let mut second = 0.0;
    let mut first = 0.0;
    for i in 0..n {
        for j in 0..n {
            let e = i * n + j;
            let a_alpha = coeff.a[e] + if i == j { alpha } else { 0.0 };
            second += coeff.d2a[i * n + j][e] * u.value
                + coeff.da[i][e] * u.grad[j]
                + coeff.da[j][e] * u.grad[i]
                + a_alpha * u.hess[e];
        }
        first += coeff.db[i * n + i] * u.value + coeff.b[i] * u.grad[i];
    }
    0.5 * second - first
}

/// A function of `(t, y)` with spatial derivatives up to order two.
pub trait SpatialFunction: Sync {
    fn jet(&self, t: f64, y: &[f64]) -> RadialJet;
}

impl<F: Fn(f64, &[f64]) -> RadialJet + Sync> SpatialFunction for F {
    fn jet(&self, t: f64, y: &[f64]) -> RadialJet {
        self(t, y)
    }
}

impl SpatialFunction for DensityModel {
    fn jet(&self, t: f64, y: &[f64]) -> RadialJet {
        let j = self.eval(t, y);
        RadialJet {
            value: j.value,
            grad: j.grad,
            hess: j.hess,
        }
    }
}

pub fn apply_generator<F: CoefficientField, P: SpatialFunction + ?Sized>(
    field: &F,
    alpha: f64,
    phi: &P,
    t: f64,
    y: &[f64],
) -> f64 {
    generator_from_jets(&field.jet(t, y), alpha, &phi.jet(t, y))
}

pub fn apply_dual<F: CoefficientField, P: SpatialFunction + ?Sized>(
    field: &F,
    alpha: f64,
    u: &P,
    t: f64,
    y: &[f64],
) -> f64 {
    dual_from_jets(&field.jet(t, y), alpha, &u.jet(t, y))
}

/// Features at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEval {
    pub u: DVector<f64>,
    pub v: DMatrix<f64>,
    pub r: f64,
    pub qtilde: f64,
}

impl FeatureEval {
    /// `q̃ − tr(V A) + U·B`, the Fokker–Planck residual of `p̂` under `(A, B)`.
    pub fn residual(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        self.qtilde - self.v.component_mul(a).sum() + self.u.dot(b)
    }

    /// `tr(V A) − U·B + r`, i.e. `(L*)p̂`.
    pub fn dual(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        self.v.component_mul(a).sum() - self.u.dot(b) + self.r
    }
}

/// Writes `w = (q̃, U, −vec V)` for one point into `out`, scaled by `scale`.
/// `out.len()` must be `1 + Qn + (Qn)²`.
pub fn feature_row(p: &DensityJet, k: &[RadialJet], alpha: f64, scale: f64, out: &mut [f64]) {
    let n = p.grad.len();
    let qn = k.len() * n;
    debug_assert_eq!(out.len(), 1 + qn + qn * qn);
    let r = 0.5 * alpha * p.laplacian();
    out[0] = scale * (p.dt - r);
    for (l, kl) in k.iter().enumerate() {
        for i in 0..n {
            out[1 + l * n + i] = scale * (p.grad[i] * kl.value + p.value * kl.grad[i]);
        }
    }
    let base = 1 + qn;
    for (l, g) in k.iter().enumerate() {
        for (lp, h) in k.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let v = 0.5 * triple_second(p, g, h, i, j, n);
                    // column-major position of ((ℓ,i), (ℓ',j))
                    out[base + (l * n + i) + (lp * n + j) * qn] = -scale * v;
                }
            }
        }
    }
}

/// `∂_i∂_j(f g h)`.
fn triple_second(f: &DensityJet, g: &RadialJet, h: &RadialJet, i: usize, j: usize, n: usize) -> f64 {
    let e = i * n + j;
    f.hess[e] * g.value * h.value
        + f.value * g.hess[e] * h.value
        + f.value * g.value * h.hess[e]
        + f.grad[i] * (g.grad[j] * h.value + g.value * h.grad[j])
        + f.grad[j] * (g.grad[i] * h.value + g.value * h.grad[i])
        + f.value * (g.grad[i] * h.grad[j] + g.grad[j] * h.grad[i])
}

/// Features of `p̂` against the kernel centers of `model` at `(t, y)`.
pub fn features(density: &DensityModel, model: &LearnedCoefficients, t: f64, y: &[f64]) -> FeatureEval {
    let p = density.eval(t, y);
    let k: Vec<RadialJet> = model.centers().iter().map(|c| model.kernel().y_jet(t, y, c)).collect();
    features_from_jets(&p, &k, model.alpha())
}

pub fn features_from_jets(p: &DensityJet, k: &[RadialJet], alpha: f64) -> FeatureEval {
    let n = p.grad.len();
    let qn = k.len() * n;
    let mut row = vec![0.0; 1 + qn + qn * qn];
    feature_row(p, k, alpha, 1.0, &mut row);
    let r = 0.5 * alpha * p.laplacian();
    FeatureEval {
        u: DVector::from_column_slice(&row[1..1 + qn]),
        v: -DMatrix::from_column_slice(qn, qn, &row[1 + qn..]),
        r,
        qtilde: row[0],
    }
}
