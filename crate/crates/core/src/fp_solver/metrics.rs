//! Validation quantities built on the forward solver.

use serde::{Deserialize, Serialize};

use super::{normalized_initial, solve_fp, FpProblem, Source};
use crate::coefficients::CoefficientField;
use crate::density::{space_time_integral, GridDensity, Lattice};
use crate::error::{Error, Result};

/// `E = ∫₀ᵀ ‖p_{a,b}(t) − p(t)‖² dt`, with `p_{a,b}` solved on the reference lattice from `initial`.
pub fn metric_e(field: &dyn CoefficientField, alpha: f64, reference: &GridDensity, initial: &[f64]) -> Result<f64> {
    let p = solve_fp(&FpProblem {
        field,
        alpha,
        lattice: reference.lattice.clone(),
        initial: initial.to_vec(),
        dt: None,
        source: None,
    })?;
    Ok(p.difference(reference)?.l2_norm_sq())
}

/// The lattice with every space cell halved and the same times.
pub fn refine_lattice(lattice: &Lattice) -> Lattice {
    Lattice {
        n: lattice.n,
        origin: lattice.origin.clone(),
        spacing: lattice.spacing.iter().map(|h| 0.5 * h).collect(),
        counts: lattice.counts.iter().map(|c| 2 * c - 1).collect(),
        times: lattice.times.clone(),
    }
}

/// Restriction of a density on `refine_lattice(coarse)` to the coarse nodes.
fn restrict(fine: &GridDensity, coarse: &Lattice) -> Result<GridDensity> {
    let n = coarse.n;
    let space = coarse.space_len();
    let mut values = Vec::with_capacity(coarse.len());
    for k in 0..coarse.times.len() {
        let slice = fine.slice(k);
        for s in 0..space {
            let mut rest = s;
            let mut idx = 0;
            let mut stride = 1;
            for d in (0..n).rev() {
                let i = rest % coarse.counts[d];
                rest /= coarse.counts[d];
                idx += 2 * i * stride;
                stride *= fine.lattice.counts[d];
            }
            values.push(slice[idx]);
        }
    }
    GridDensity::new(coarse.clone(), values)
}

/// Estimate of `E` between the solver's output on `lattice` and the exact
/// solution: `E(coarse, refined)` scaled by `(4/3)²`, the Richardson factor
/// for a second-order scheme.
pub fn discretization_floor(
    field: &dyn CoefficientField,
    alpha: f64,
    lattice: &Lattice,
    initial: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let fine_lattice = refine_lattice(lattice);
    let solve = |lat: &Lattice| {
        solve_fp(&FpProblem {
            field,
            alpha,
            lattice: lat.clone(),
            initial: normalized_initial(lat, &initial)?,
            dt: None,
            source: None,
        })
    };
    let coarse = solve(lattice)?;
    let fine = restrict(&solve(&fine_lattice)?, lattice)?;
    Ok(coarse.difference(&fine)?.l2_norm_sq() * 16.0 / 9.0)
}

/// `(|∫∫ f (p₁ − p₂)|, ‖f‖·‖p₁ − p₂‖)` with the lattice quadrature.
pub fn observation_gap(f: impl Fn(f64, &[f64]) -> f64 + Sync, p1: &GridDensity, p2: &GridDensity) -> Result<(f64, f64)> {
    let diff = p1.difference(p2)?;
    let fg = GridDensity::from_fn(p1.lattice.clone(), f)?;
    let lhs = fg.inner(&diff)?.abs();
    let rhs = fg.l2_norm_sq().sqrt() * diff.l2_norm_sq().sqrt();
    Ok((lhs, rhs))
}

/// Two forward problems sharing coefficients and differing in data.
pub struct StabilityInputs<'a> {
    pub initial1: &'a [f64],
    pub initial2: &'a [f64],
    pub source1: Option<Source<'a>>,
    pub source2: Option<Source<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    /// `max_k ‖p₁(t_k) − p₂(t_k)‖²`.
    pub lhs: f64,
    /// `‖p̄₁ − p̄₂‖² + ∫₀ᵀ‖f₁ − f₂‖²`.
    pub data: f64,
    pub constant: f64,
    pub rhs: f64,
    pub pass: bool,
    /// `rhs − lhs`.
    pub margin: f64,
}

fn stability_sides(field: &dyn CoefficientField, alpha: f64, lattice: &Lattice, inputs: &StabilityInputs) -> Result<(f64, f64)> {
    let solve = |initial: &[f64], source: Option<Source>| {
        solve_fp(&FpProblem {
            field,
            alpha,
            lattice: lattice.clone(),
            initial: initial.to_vec(),
            dt: None,
            source,
        })
    };
    let p1 = solve(inputs.initial1, inputs.source1)?;
    let p2 = solve(inputs.initial2, inputs.source2)?;
    let diff = p1.difference(&p2)?;
    let lhs = (0..lattice.times.len()).map(|k| diff.l2_norm_sq_at(k)).fold(0.0, f64::max);
    let weights = lattice.space_weights();
    let initial_gap: f64 = weights
        .iter()
        .zip(inputs.initial1.iter().zip(inputs.initial2))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum();
    let points = lattice.points();
    let space = lattice.space_len();
    let zero = |_t: f64, _x: &[f64]| 0.0;
    let f1: Source = inputs.source1.unwrap_or(&zero);
    let f2: Source = inputs.source2.unwrap_or(&zero);
    let source_gap = space_time_integral(lattice, |k| {
        let t = lattice.times[k / space];
        let x = &points[k % space];
        let d = f1(t, x) - f2(t, x);
        d * d
    });
    Ok((lhs, initial_gap + source_gap))
}

/// `safety · lhs / data` from one calibration pair. Fails if the pair has no data gap.
pub fn calibrate_stability_constant(
    field: &dyn CoefficientField,
    alpha: f64,
    lattice: &Lattice,
    inputs: &StabilityInputs,
    safety: f64,
) -> Result<f64> {
    let (lhs, data) = stability_sides(field, alpha, lattice, inputs)?;
    if !(data > 0.0) {
        return Err(Error::InvalidParameter("calibration pair has identical data".into()));
    }
    Ok(safety * lhs / data)
}

/// Checks `sup_t ‖p₁(t) − p₂(t)‖² ≤ C (‖p̄₁ − p̄₂‖² + ∫‖f₁ − f₂‖²)` with a frozen `C`.
pub fn stability_check(
    field: &dyn CoefficientField,
    alpha: f64,
    lattice: &Lattice,
    inputs: &StabilityInputs,
    constant: f64,
) -> Result<StabilityVerdict> {
    let (lhs, data) = stability_sides(field, alpha, lattice, inputs)?;
    let rhs = constant * data;
    Ok(StabilityVerdict {
        lhs,
        data,
        constant,
        rhs,
        pass: lhs <= rhs,
        margin: rhs - lhs,
    })
}
