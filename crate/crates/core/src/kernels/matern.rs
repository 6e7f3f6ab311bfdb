/// Half-integer Matérn kernel `k(r) = e^{-s} P_p(s)`, `s = √(2ν) r / ℓ`,
/// `ν = p + 1/2`, evaluated as a function of the difference vector.
///
/// Radial derivatives are kept in the division-free forms
/// `∇k = c² φ₁(s) d` and `∇²k = c² φ₁(s) I + c⁴ φ₂(s) d dᵀ` with `c = √(2ν)/ℓ`,
/// where `φ₁ = k'(s)/s` and `φ₂ = φ₁'(s)/s` are again `e^{-s}` times polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct MaternKernel {
    order: usize,
    length_scale: f64,
    c: f64,
    poly: Vec<f64>,
    phi1: Vec<f64>,
    phi2: Option<Vec<f64>>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

/// `(P' - P) / s`; the constant term of `P' - P` must vanish.
fn derivative_over_s(p: &[f64]) -> Option<Vec<f64>> {
    let mut q: Vec<f64> = p.iter().map(|c| -c).collect();
    for (k, c) in p.iter().enumerate().skip(1) {
        q[k - 1] += k as f64 * c;
    }
    let scale = p.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if q[0].abs() > 1e-12 * scale {
        return None;
    }
    Some(q[1..].to_vec())
}

impl MaternKernel {
    /// `ν = order + 1/2`; `order ≥ 1` is required for a differentiable kernel.
    pub fn new(order: usize, length_scale: f64) -> Self {
        assert!(order >= 1, "Matérn order must be at least 1 (ν ≥ 3/2)");
        assert!(length_scale > 0.0, "length scale must be positive");
        let nu = order as f64 + 0.5;
        let lead = factorial(order) / factorial(2 * order);
        let mut poly = vec![0.0; order + 1];
        for i in 0..=order {
            let coeff = factorial(order + i) / (factorial(i) * factorial(order - i));
            poly[order - i] = lead * coeff * 2f64.powi((order - i) as i32);
        }
        let phi1 = derivative_over_s(&poly).expect("order >= 1 gives k'(0) = 0");
        let phi2 = derivative_over_s(&phi1);
        Self {
            order,
            length_scale,
            c: (2.0 * nu).sqrt() / length_scale,
            poly,
            phi1,
            phi2,
        }
    }

    /// Matérn kernel of smoothness `ν = m + 1/2`, whose native space is `H^{m+1}(ℝ)`.
    pub fn sobolev_time(m: usize, length_scale: f64) -> Self {
        Self::new(m, length_scale)
    }

    pub fn nu(&self) -> f64 {
        self.order as f64 + 0.5
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn has_hessian(&self) -> bool {
        self.phi2.is_some()
    }

    fn s(&self, d: &[f64]) -> f64 {
        self.c * d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn value(&self, d: &[f64]) -> f64 {
        let s = self.s(d);
        (-s).exp() * horner(&self.poly, s)
    }

    /// `k` at scalar distance `r`.
    pub fn radial(&self, r: f64) -> f64 {
        let s = self.c * r.abs();
        (-s).exp() * horner(&self.poly, s)
    }

    /// Value and gradient with respect to `d`.
    pub fn value_grad(&self, d: &[f64]) -> (f64, Vec<f64>) {
        let s = self.s(d);
        let e = (-s).exp();
        let g = self.c * self.c * e * horner(&self.phi1, s);
        (e * horner(&self.poly, s), d.iter().map(|x| g * x).collect())
    }

    /// Value, gradient and row-major Hessian with respect to `d`. Requires `ν ≥ 5/2`.
    pub fn jet(&self, d: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let phi2 = self.phi2.as_ref().expect("Hessian needs Matérn order >= 2");
        let n = d.len();
        let s = self.s(d);
        let e = (-s).exp();
        let c2 = self.c * self.c;
        let p1 = c2 * e * horner(&self.phi1, s);
        let p2 = c2 * c2 * e * horner(phi2, s);
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hess[i * n + j] = p2 * d[i] * d[j] + if i == j { p1 } else { 0.0 };
            }
        }
        (e * horner(&self.poly, s), d.iter().map(|x| p1 * x).collect(), hess)
    }
}
