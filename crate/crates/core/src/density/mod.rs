//! The kernel density model `p̂(t,x) = Σ_ℓ c_ℓ(t) ĝ_ℓ(x)` with
//! `ĝ_ℓ(x) = (1/N) Σ_j ρ_R(x − X_{ℓ,j})`.
//!
//! `p̂` is the raw model: it is neither clipped to be non-negative nor
//! renormalised. `ĝ_ℓ` has unit Fourier value at the origin, so it integrates
//! to one over `ℝⁿ`, but it takes negative values between samples.

pub mod grid;
pub mod rate;

pub use grid::{loss_l, space_time_integral, GridDensity, Lattice};
pub use rate::{empirical_rate_report, GaussianMarginal, RateReport, RateRow};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{BandlimitedKernel, MaternKernel, RadialJet, TimeCoefficients};
use crate::sde_sim::ObservationSet;

/// Value, time derivative, gradient and Hessian of `p̂` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityJet {
    pub value: f64,
    pub dt: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl DensityJet {
    pub fn laplacian(&self) -> f64 {
        let n = self.grad.len();
        (0..n).map(|i| self.hess[i * n + i]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct DensityModel {
    n: usize,
    kernel: BandlimitedKernel,
    time: TimeCoefficients,
    /// Per time index, samples flattened `[j][i]`.
    samples: Vec<Vec<f64>>,
    count: usize,
    max_norm: f64,
    t_end: f64,
}

impl DensityModel {
    pub fn build(obs: &ObservationSet, bandwidth: f64, time_kernel: MaternKernel) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let time = TimeCoefficients::new(obs.times(), time_kernel)?;
        Ok(Self {
            n: obs.n(),
            kernel: BandlimitedKernel::new(bandwidth, obs.n()),
            time,
            samples: (0..obs.m()).map(|l| obs.time_slice(l).to_vec()).collect(),
            count: obs.samples_per_time(),
            max_norm: obs.max_norm(),
            t_end: obs.t_end(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.samples.len()
    }

    pub fn samples_per_time(&self) -> usize {
        self.count
    }

    pub fn bandwidth(&self) -> f64 {
        self.kernel.bandwidth()
    }

    pub fn kernel(&self) -> &BandlimitedKernel {
        &self.kernel
    }

    pub fn time_coefficients(&self) -> &TimeCoefficients {
        &self.time
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Samples at time index `ℓ` as points.
    pub fn samples(&self, l: usize) -> impl Iterator<Item = &[f64]> {
        self.samples[l].chunks(self.n)
    }

    /// Half-width `max ‖X‖ + 40/R` of the box used for spatial integrals.
    pub fn truncation_half_width(&self) -> f64 {
        self.max_norm + 40.0 / self.bandwidth()
    }

    fn shifted(&self, x: &[f64], s: &[f64], buf: &mut [f64]) {
        for i in 0..self.n {
            buf[i] = x[i] - s[i];
        }
    }

    /// `ĝ_ℓ(x)`.
    pub fn g_hat(&self, l: usize, x: &[f64]) -> f64 {
        let mut d = vec![0.0; self.n];
        let sum: f64 = self
            .samples(l)
            .map(|s| {
                self.shifted(x, s, &mut d);
                self.kernel.value(&d)
            })
            .sum();
        sum / self.count as f64
    }

    /// Value, gradient and Hessian of `ĝ_ℓ` at `x`.
    pub fn g_hat_jet(&self, l: usize, x: &[f64]) -> RadialJet {
        let mut acc = RadialJet::zeros(self.n);
        let mut d = vec![0.0; self.n];
        for s in self.samples(l) {
            self.shifted(x, s, &mut d);
            acc.add_scaled(&self.kernel.jet(&d), 1.0);
        }
        let mut out = RadialJet::zeros(self.n);
        out.add_scaled(&acc, 1.0 / self.count as f64);
        out
    }

    /// `p̂(t, x)`.
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.time
            .coeffs(t)
            .iter()
            .enumerate()
            .map(|(l, c)| c * self.g_hat(l, x))
            .sum()
    }

    /// Full jet of `p̂` at `(t, x)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> DensityJet {
        let jets: Vec<RadialJet> = (0..self.m()).map(|l| self.g_hat_jet(l, x)).collect();
        self.combine(&jets, &self.time.coeffs(t), &self.time.coeffs_dt(t))
    }

    /// Combines precomputed `ĝ_ℓ` jets at one `x` with time weights.
    pub fn combine(&self, jets: &[RadialJet], c: &[f64], c_dt: &[f64]) -> DensityJet {
        let n = self.n;
        let mut out = DensityJet {
            value: 0.0,
            dt: 0.0,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
        };
        for ((g, cl), dl) in jets.iter().zip(c).zip(c_dt) {
            out.value += cl * g.value;
            out.dt += dl * g.value;
            for (o, v) in out.grad.iter_mut().zip(&g.grad) {
                *o += cl * v;
            }
            for (o, v) in out.hess.iter_mut().zip(&g.hess) {
                *o += cl * v;
            }
        }
        out
    }

    /// `p̂` on every node of a lattice. `ĝ_ℓ` is evaluated once per space node.
    pub fn on_lattice(&self, lattice: &Lattice) -> Result<GridDensity> {
        if lattice.n != self.n {
            return Err(Error::DimensionMismatch(format!(
                "{}-d lattice for a {}-d density",
                lattice.n, self.n
            )));
        }
        let points = lattice.points();
        let g: Vec<Vec<f64>> = points
            .par_iter()
            .map(|x| (0..self.m()).map(|l| self.g_hat(l, x)).collect())
            .collect();
        let mut values = Vec::with_capacity(lattice.len());
        for &t in &lattice.times {
            let c = self.time.coeffs(t);
            values.extend(g.iter().map(|gx| gx.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()));
        }
        GridDensity::new(lattice.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::rho;

    fn set(samples: Vec<Vec<Vec<f64>>>) -> ObservationSet {
        ObservationSet::from_samples(samples[0][0].len(), 1.0, samples, 0).unwrap()
    }

    fn pseudo(seed: u64, count: usize) -> Vec<f64> {
        let mut s = seed;
        (0..count)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn model_1d(seed: u64, m: usize, n: usize) -> DensityModel {
        let samples = (0..m)
            .map(|l| pseudo(seed + l as u64, n).into_iter().map(|v| vec![v]).collect())
            .collect();
        DensityModel::build(&set(samples), 1.5, MaternKernel::sobolev_time(1, 1.0)).unwrap()
    }

    #[test]
    fn single_sample_reproduces_kernel() {
        let model = DensityModel::build(&set(vec![vec![vec![0.0, 0.0]]]), 2.0, MaternKernel::sobolev_time(1, 1.0)).unwrap();
        for x in [[0.0, 0.0], [0.3, -0.1], [1.0, 2.0]] {
            assert!((model.value(0.0, &x) - rho(&x, 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolates_at_grid_times() {
        let model = model_1d(3, 4, 10);
        for (l, &t) in model.time_coefficients().times().to_vec().iter().enumerate() {
            for x in [-1.3, 0.0, 0.77] {
                assert!((model.value(t, &[x]) - model.g_hat(l, &[x])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn jet_matches_finite_differences() {
        let samples = (0..3)
            .map(|l| {
                let v = pseudo(10 + l, 16);
                v.chunks(2).map(|c| c.to_vec()).collect()
            })
            .collect();
        let model = DensityModel::build(&set(samples), 1.0, MaternKernel::sobolev_time(1, 1.0)).unwrap();
        let h = 1e-4;
        for k in 0..20 {
            let t = 0.02 + 0.047 * k as f64;
            let x = [0.3 * (k as f64).sin(), 0.5 * (k as f64 * 0.7).cos()];
            let jet = model.eval(t, &x);
            let fd_t = (model.value(t + h, &x) - model.value(t - h, &x)) / (2.0 * h);
            assert!((jet.dt - fd_t).abs() < 1e-5 * (1.0 + fd_t.abs()), "{} vs {fd_t}", jet.dt);
            let mut lap = 0.0;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                lap += (model.value(t, &xp) - 2.0 * model.value(t, &x) + model.value(t, &xm)) / (h * h);
            }
            assert!((jet.laplacian() - lap).abs() < 1e-4 * (1.0 + lap.abs()), "{} vs {lap}", jet.laplacian());
        }
    }

    #[test]
    fn g_hat_takes_negative_values() {
        let model = model_1d(5, 2, 3);
        let negative = (0..400).any(|i| model.g_hat(0, &[-5.0 + 0.025 * i as f64]) < 0.0);
        assert!(negative);
    }

    #[test]
    fn union_averages_the_parts() {
        let a: Vec<Vec<f64>> = pseudo(1, 8).into_iter().map(|v| vec![v]).collect();
        let b: Vec<Vec<f64>> = pseudo(2, 8).into_iter().map(|v| vec![v]).collect();
        let both: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let k = || MaternKernel::sobolev_time(1, 1.0);
        let ma = DensityModel::build(&set(vec![a]), 1.3, k()).unwrap();
        let mb = DensityModel::build(&set(vec![b]), 1.3, k()).unwrap();
        let mu = DensityModel::build(&set(vec![both]), 1.3, k()).unwrap();
        for x in [-2.0, -0.4, 0.1, 1.9] {
            let avg = 0.5 * (ma.g_hat(0, &[x]) + mb.g_hat(0, &[x]));
            assert!((mu.g_hat(0, &[x]) - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn g_hat_integrates_to_one_on_truncation_box() {
        let model = model_1d(7, 1, 20);
        let half = model.truncation_half_width();
        let lat = Lattice::uniform(&[-half], &[half], &[40001], 1.0, 1).unwrap();
        let grid = model.on_lattice(&lat).unwrap();
        assert!((grid.mass(0) - 1.0).abs() < 1e-3, "mass {}", grid.mass(0));
    }
}
