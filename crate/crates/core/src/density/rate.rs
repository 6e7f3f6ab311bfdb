//! Monte-Carlo check of how `L(p̂)` decays with `(M, N, R)` against an exactly
//! known reference density.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::{loss_l, GridDensity, Lattice};
use super::DensityModel;
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::kernels::MaternKernel;
use crate::sde_sim::{simulate, InitialLaw, SimulationSpec};

/// Time marginal of `dX = −θX dt + √s dW` from a Gaussian start.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMarginal {
    pub mean0: Vec<f64>,
    pub cov0: DMatrix<f64>,
    pub theta: f64,
    /// Total diffusion `s = σ² + α`.
    pub diffusion: f64,
}

impl GaussianMarginal {
    pub fn mean(&self, t: f64) -> Vec<f64> {
        let decay = (-self.theta * t).exp();
        self.mean0.iter().map(|m| m * decay).collect()
    }

    pub fn covariance(&self, t: f64) -> DMatrix<f64> {
        let n = self.mean0.len();
        let added = if self.theta == 0.0 {
            self.diffusion * t
        } else {
            self.diffusion * (1.0 - (-2.0 * self.theta * t).exp()) / (2.0 * self.theta)
        };
        &self.cov0 * (-2.0 * self.theta * t).exp() + DMatrix::identity(n, n) * added
    }

    pub fn density(&self, t: f64, x: &[f64]) -> f64 {
        let n = x.len();
        let cov = self.covariance(t);
        let mean = self.mean(t);
        let chol = cov.cholesky().expect("marginal covariance is positive definite");
        let d = nalgebra::DVector::from_iterator(n, x.iter().zip(&mean).map(|(a, b)| a - b));
        let z = chol.solve(&d);
        let det = chol.l().diagonal().iter().map(|v| v * v).product::<f64>();
        (-0.5 * d.dot(&z)).exp() / ((2.0 * std::f64::consts::PI).powi(n as i32) * det).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(rename = "R")]
    pub bandwidth: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log L` against `log N`, when `N` varies.
    pub slope_vs_n: Option<f64>,
    /// Whether each loss is at most twice the previous one.
    pub non_increasing: Option<bool>,
}

/// Simulation and lattice settings shared by every row of a rate experiment.
#[derive(Debug, Clone)]
pub struct RateOptions {
    pub alpha: f64,
    pub law: InitialLaw,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    /// Smoothness index of the time kernel (`ν = m + 1/2`).
    pub time_smoothness: usize,
    pub lattice: Lattice,
}

/// Least-squares slope of `ln y` against `ln x`; `None` for fewer than two
/// distinct abscissae or non-positive data.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx < 1e-14 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// `L(p̂)` for each `(M, N, R)` in `schedule`, with data simulated from `field`
/// and `reference` the exact marginal density.
pub fn empirical_rate_report<F: CoefficientField>(
    field: &F,
    reference: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    schedule: &[(usize, usize, f64)],
    opts: &RateOptions,
) -> Result<RateReport> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty schedule".into()));
    }
    let p_ref = GridDensity::from_fn(opts.lattice.clone(), reference)?;
    let mut rows = Vec::with_capacity(schedule.len());
    for &(m, samples, bandwidth) in schedule {
        let spec = SimulationSpec {
            alpha: opts.alpha,
            law: opts.law.clone(),
            m,
            samples,
            t_end: opts.t_end,
            dt: opts.dt,
            seed: opts.seed,
        };
        let obs = simulate(field, &spec)?;
        let model = DensityModel::build(&obs, bandwidth, MaternKernel::sobolev_time(opts.time_smoothness, 1.0))?;
        let loss = loss_l(&model.on_lattice(&opts.lattice)?, &p_ref)?;
        rows.push(RateRow {
            m,
            samples,
            bandwidth,
            loss,
        });
    }
    let slope_vs_n = if rows.len() >= 2 {
        let n: Vec<f64> = rows.iter().map(|r| r.samples as f64).collect();
        let l: Vec<f64> = rows.iter().map(|r| r.loss).collect();
        log_log_slope(&n, &l)
    } else {
        None
    };
    let non_increasing = (rows.len() >= 2).then(|| rows.windows(2).all(|w| w[1].loss <= 2.0 * w[0].loss));
    Ok(RateReport {
        rows,
        slope_vs_n,
        non_increasing,
    })
}
