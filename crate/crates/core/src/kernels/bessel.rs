//! The entire function `Λ_μ(z) = z^{-μ} J_μ(z)` for half-integer and integer
//! orders `μ ≥ 0`.
//!
//! Derivatives of radial band-limited kernels close over this family:
//! `Λ_μ'(z) = -z Λ_{μ+1}(z)`, so value, gradient and Hessian of the kernel need
//! only `Λ_ν, Λ_{ν+1}, Λ_{ν+2}` and never divide by `‖x‖`.

use std::f64::consts::PI;

/// Orders are passed doubled (`twice_mu = 2μ`) to keep them exact.
const SERIES_CUTOFF: f64 = 4.0;

/// `Γ(x)` for `x = twice_x / 2 > 0`.
pub(crate) fn gamma_half_integer(twice_x: usize) -> f64 {
    assert!(twice_x > 0);
    if twice_x.is_multiple_of(2) {
        let k = twice_x / 2;
        (1..k).map(|i| i as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut x: f64 = 0.5;
        while ((2.0 * x).round() as usize) < twice_x {
            g *= x;
            x += 1.0;
        }
        g
    }
}

fn lambda_series(twice_mu: usize, z: f64) -> f64 {
    let mu = twice_mu as f64 / 2.0;
    let q = 0.25 * z * z;
    let mut term = 1.0 / (2f64.powf(mu) * gamma_half_integer(twice_mu + 2));
    let mut sum = term;
    for k in 0..60 {
        let kf = k as f64;
        term *= -q / ((kf + 1.0) * (kf + mu + 1.0));
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Spherical Bessel `j_0..=j_kmax` by upward recurrence (stable for z > kmax).
fn spherical_bessel_upward(kmax: usize, z: f64) -> Vec<f64> {
    let (s, c) = z.sin_cos();
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(s / z);
    if kmax >= 1 {
        out.push(s / (z * z) - c / z);
    }
    for k in 1..kmax {
        let next = (2 * k + 1) as f64 / z * out[k] - out[k - 1];
        out.push(next);
    }
    out
}

/// `J_0..=J_kmax` at `z` for integer orders, from the periodic trapezoid rule on
/// Bessel's integral (exponentially convergent) followed by upward recurrence.
fn bessel_j_integer(kmax: usize, z: f64) -> Vec<f64> {
    let nodes = (z.abs().ceil() as usize + 48).max(64);
    let mut j0 = 0.0;
    let mut j1 = 0.0;
    for i in 0..nodes {
        let tau = 2.0 * PI * i as f64 / nodes as f64;
        let phase = z * tau.sin();
        j0 += phase.cos();
        j1 += (tau - phase).cos();
    }
    j0 /= nodes as f64;
    j1 /= nodes as f64;
    let mut out = vec![j0, j1];
    for k in 1..kmax {
        let next = 2.0 * k as f64 / z * out[k] - out[k - 1];
        out.push(next);
    }
    out.truncate(kmax + 1);
    out
}

/// `Λ_μ(z)` for `μ = twice_mu/2`.
pub fn lambda(twice_mu: usize, z: f64) -> f64 {
    lambda_run(twice_mu, 1, z)[0]
}

/// `[Λ_μ(z), Λ_{μ+1}(z), …]` with `count` entries.
pub fn lambda_run(twice_mu: usize, count: usize, z: f64) -> Vec<f64> {
    let z = z.abs();
    if z < SERIES_CUTOFF {
        return (0..count).map(|k| lambda_series(twice_mu + 2 * k, z)).collect();
    }
    let top = twice_mu + 2 * (count - 1);
    if twice_mu % 2 == 1 {
        // μ = k + 1/2:  Λ_μ(z) = sqrt(2/π) j_k(z) / z^k.
        let kmax = top / 2;
        let j = spherical_bessel_upward(kmax.max(1), z);
        let norm = (2.0 / PI).sqrt();
        (0..count)
            .map(|i| {
                let k = twice_mu / 2 + i;
                norm * j[k] / z.powi(k as i32)
            })
            .collect()
    } else {
        let kmax = top / 2;
        let j = bessel_j_integer(kmax.max(1), z);
        (0..count)
            .map(|i| {
                let k = twice_mu / 2 + i;
                j[k] / z.powi(k as i32)
            })
            .collect()
    }
}
