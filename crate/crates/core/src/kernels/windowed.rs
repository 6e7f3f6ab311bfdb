use serde::{Deserialize, Serialize};

use super::bandlimited::RadialJet;
use super::matern::MaternKernel;

/// `w(y) = (1 - ‖y‖²/ρ²)³` inside the ball of radius `ρ`, zero outside.
/// `w`, `∇w` and `∇²w` all vanish on the sphere `‖y‖ = ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub radius: f64,
}

impl Window {
    pub fn value(&self, y: &[f64]) -> f64 {
        let u = 1.0 - y.iter().map(|v| v * v).sum::<f64>() / (self.radius * self.radius);
        if u <= 0.0 {
            0.0
        } else {
            u * u * u
        }
    }

    pub fn jet(&self, y: &[f64]) -> RadialJet {
        let n = y.len();
        let r2 = self.radius * self.radius;
        let u = 1.0 - y.iter().map(|v| v * v).sum::<f64>() / r2;
        if u <= 0.0 {
            return RadialJet::zeros(n);
        }
        let g = -6.0 * u * u / r2;
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hess[i * n + j] = 24.0 * u * y[i] * y[j] / (r2 * r2) + if i == j { g } else { 0.0 };
            }
        }
        RadialJet {
            value: u * u * u,
            grad: y.iter().map(|v| g * v).collect(),
            hess,
        }
    }
}

/// Serializable description of the space-time kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: String,
    pub params: KernelParams,
    pub domain: DomainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub nu: f64,
    pub length_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub t_end: f64,
    pub radius: f64,
    pub n: usize,
}

/// The windowed space-time kernel
/// `K_D((t,y),(s,x)) = w(y) w(x) k(‖(t-s, y-x)‖)` on `D = [0,T] × B(0, R*)`,
/// with `k` a Matérn kernel on `ℝ^{1+n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedKernel {
    base: MaternKernel,
    window: Window,
    t_end: f64,
    n: usize,
}

/// Smoothness of the coefficient space: `d(m) = 2(m+1) + ⌊n/2⌋`.
pub fn coefficient_smoothness(m: usize, n: usize) -> usize {
    2 * (m + 1) + n / 2
}

impl WindowedKernel {
    pub fn new(base: MaternKernel, radius: f64, t_end: f64, n: usize) -> Self {
        assert!(base.has_hessian(), "windowed kernel needs a twice differentiable base");
        assert!(radius > 0.0 && t_end > 0.0);
        Self {
            base,
            window: Window { radius },
            t_end,
            n,
        }
    }

    /// Base Matérn order chosen so the native space of `k` on `ℝ^{1+n}` embeds in
    /// `H^{d(m)}`: the smallest half-integer `ν ≥ d(m) − (1+n)/2`, at least `5/2`.
    pub fn for_smoothness(m: usize, n: usize, radius: f64, t_end: f64, length_scale: f64) -> Self {
        let d = coefficient_smoothness(m, n) as f64;
        let target_nu = d - (1.0 + n as f64) / 2.0;
        let order = ((target_nu - 0.5).ceil() as usize).max(2);
        Self::new(MaternKernel::new(order, length_scale), radius, t_end, n)
    }

    pub fn from_spec(spec: &KernelSpec) -> Self {
        let order = (spec.params.nu - 0.5).round() as usize;
        Self::new(
            MaternKernel::new(order, spec.params.length_scale),
            spec.domain.radius,
            spec.domain.t_end,
            spec.domain.n,
        )
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec {
            family: "windowed-matern".to_string(),
            params: KernelParams {
                nu: self.base.nu(),
                length_scale: self.base.length_scale(),
            },
            domain: DomainSpec {
                t_end: self.t_end,
                radius: self.window.radius,
                n: self.n,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> f64 {
        self.window.radius
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn base(&self) -> &MaternKernel {
        &self.base
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Whether `(t, y)` lies in `D`.
    pub fn contains(&self, t: f64, y: &[f64]) -> bool {
        (0.0..=self.t_end).contains(&t) && y.iter().map(|v| v * v).sum::<f64>() <= self.window.radius.powi(2)
    }

    fn diff(t: f64, y: &[f64], center: &[f64]) -> Vec<f64> {
        let mut d = Vec::with_capacity(y.len() + 1);
        d.push(t - center[0]);
        d.extend(y.iter().zip(&center[1..]).map(|(a, b)| a - b));
        d
    }

    /// `K_D((t,y), center)` with `center = [t_c, x_c…]`.
    pub fn value(&self, t: f64, y: &[f64], center: &[f64]) -> f64 {
        let wy = self.window.value(y);
        if wy == 0.0 {
            return 0.0;
        }
        let wc = self.window.value(&center[1..]);
        wy * wc * self.base.value(&Self::diff(t, y, center))
    }

    /// Value, `y`-gradient and `y`-Hessian of `K_D((t,y), center)`.
    pub fn y_jet(&self, t: f64, y: &[f64], center: &[f64]) -> RadialJet {
        let n = self.n;
        let w = self.window.jet(y);
        if w.value == 0.0 && w.grad.iter().all(|g| *g == 0.0) {
            return RadialJet::zeros(n);
        }
        let wc = self.window.value(&center[1..]);
        let (k, kg, kh) = self.base.jet(&Self::diff(t, y, center));
        // drop the time component of the base derivatives
        let kg = &kg[1..];
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hess[i * n + j] = wc
                    * (w.hess[i * n + j] * k
                        + w.grad[i] * kg[j]
                        + kg[i] * w.grad[j]
                        + w.value * kh[(i + 1) * (n + 1) + (j + 1)]);
            }
        }
        RadialJet {
            value: wc * w.value * k,
            grad: (0..n).map(|i| wc * (w.grad[i] * k + w.value * kg[i])).collect(),
            hess,
        }
    }
}
