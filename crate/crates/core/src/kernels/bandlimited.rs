use std::f64::consts::PI;

use super::bessel::{gamma_half_integer, lambda_run};

/// The radial kernel `ρ_R(x) = R^{n/2} ‖x‖^{-n/2} J_{n/2}(2πR‖x‖)` whose Fourier
/// transform (convention `e^{-2πi ξ·x}`) is the indicator of the radius-`R` ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandlimitedKernel {
    bandwidth: f64,
    dim: usize,
    scale: f64,
    kappa: f64,
}

/// Value and spatial derivatives of a scalar function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialJet {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `n × n`.
    pub hess: Vec<f64>,
}

impl RadialJet {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
        }
    }

    pub fn laplacian(&self) -> f64 {
        let n = self.grad.len();
        (0..n).map(|i| self.hess[i * n + i]).sum()
    }

    pub fn add_scaled(&mut self, other: &RadialJet, s: f64) {
        self.value += s * other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += s * b;
        }
        for (a, b) in self.hess.iter_mut().zip(&other.hess) {
            *a += s * b;
        }
    }
}

impl BandlimitedKernel {
    pub fn new(bandwidth: f64, dim: usize) -> Self {
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        assert!(dim >= 1, "dimension must be positive");
        let nu = dim as f64 / 2.0;
        Self {
            bandwidth,
            dim,
            scale: (2.0 * PI).powf(nu) * bandwidth.powi(dim as i32),
            kappa: 2.0 * PI * bandwidth,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn z(&self, x: &[f64]) -> f64 {
        self.kappa * x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.scale * lambda_run(self.dim, 1, self.z(x))[0]
    }

    /// `ρ_R(0) = V_n R^n`, the volume of the radius-`R` ball.
    pub fn value_at_origin(&self) -> f64 {
        self.scale * lambda_run(self.dim, 1, 0.0)[0]
    }

    pub fn jet(&self, x: &[f64]) -> RadialJet {
        let n = self.dim;
        let l = lambda_run(n, 3, self.z(x));
        let k2 = self.kappa * self.kappa;
        let c1 = -self.scale * k2 * l[1];
        let c2 = self.scale * k2 * k2 * l[2];
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hess[i * n + j] = c2 * x[i] * x[j] + if i == j { c1 } else { 0.0 };
            }
        }
        RadialJet {
            value: self.scale * l[0],
            grad: x.iter().map(|xi| c1 * xi).collect(),
            hess,
        }
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let l = lambda_run(self.dim, 2, self.z(x));
        -self.scale * self.kappa * self.kappa * (l[0] - 2.0 * l[1])
    }

    pub fn bilaplacian(&self, x: &[f64]) -> f64 {
        let l = lambda_run(self.dim, 3, self.z(x));
        self.scale * self.kappa.powi(4) * (l[0] - 4.0 * l[1] + 8.0 * l[2])
    }

    /// `(ρ, Δρ, Δ²ρ)` at `x` from a single Bessel evaluation. Since `ρ̂ = 𝟙_{B_R}`
    /// is idempotent, these are also `∫ρ(y−x₁)ρ(y−x₂)dy`, `∫ρ(y−x₁)Δρ(y−x₂)dy`
    /// and `∫Δρ(y−x₁)Δρ(y−x₂)dy` for `x = x₁ − x₂`.
    pub fn laplacian_powers(&self, x: &[f64]) -> [f64; 3] {
        let l = lambda_run(self.dim, 3, self.z(x));
        let k2 = self.kappa * self.kappa;
        [
            self.scale * l[0],
            -self.scale * k2 * (l[0] - 2.0 * l[1]),
            self.scale * k2 * k2 * (l[0] - 4.0 * l[1] + 8.0 * l[2]),
        ]
    }
}

/// `ρ_R(x)` as a free function.
pub fn rho(x: &[f64], bandwidth: f64) -> f64 {
    BandlimitedKernel::new(bandwidth, x.len()).value(x)
}

/// Volume of the unit ball in `ℝⁿ`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    PI.powf(half) / gamma_half_integer(n + 2)
}
