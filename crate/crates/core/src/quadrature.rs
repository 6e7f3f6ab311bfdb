//! Gauss–Legendre and Gauss–Kronrod rules, composite panels and a scalar
//! adaptive integrator.

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

// QUADPACK G7/K15 abscissae (non-negative half) and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.000_000_000_000_000_0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// A 15-point Kronrod node on a panel together with its embedded 7-point
/// Gauss weight (zero for the Kronrod-only nodes).
#[derive(Debug, Clone, Copy)]
pub struct KronrodNode {
    pub x: f64,
    pub kronrod_weight: f64,
    pub gauss_weight: f64,
}

/// The G7/K15 pair mapped onto `[a, b]`.
pub fn kronrod_panel(a: f64, b: f64) -> Vec<KronrodNode> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = Vec::with_capacity(15);
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let gauss = if j % 2 == 1 { WG[j / 2] } else { 0.0 };
        if j == 7 {
            out.push(KronrodNode {
                x: c,
                kronrod_weight: w * h,
                gauss_weight: WG[3] * h,
            });
        } else {
            out.push(KronrodNode {
                x: c - h * x,
                kronrod_weight: w * h,
                gauss_weight: gauss * h,
            });
            out.push(KronrodNode {
                x: c + h * x,
                kronrod_weight: w * h,
                gauss_weight: gauss * h,
            });
        }
    }
    out.sort_by(|p, q| p.x.total_cmp(&q.x));
    out
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for node in kronrod_panel(a, b) {
        let v = f(node.x);
        kronrod += node.kronrod_weight * v;
        gauss += node.gauss_weight * v;
    }
    (kronrod, (kronrod - gauss).abs())
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_subdivisions: 2000,
        }
    }
}

/// Globally adaptive G7/K15 integration of `f` over `[a, b]`, splitting the
/// worst panel until the summed error estimate meets the tolerance.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: AdaptiveOptions) -> Result<f64> {
    integrate_adaptive_breaks(f, &[a, b], opts)
}

/// Like [`integrate_adaptive`], with the initial panels given by `breaks`
/// (kinks of the integrand should be listed there).
pub fn integrate_adaptive_breaks<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: AdaptiveOptions) -> Result<f64> {
    let mut panels: Vec<(f64, f64, f64, f64)> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk15(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    if panels.is_empty() {
        return Ok(0.0);
    }
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok(total);
        }
        if panels.len() >= opts.max_subdivisions {
            return Err(Error::Quadrature(format!(
                "{} subdivisions reached with error estimate {err:e} on value {total:e}",
                panels.len()
            )));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (a, b, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (a + b);
        let (v1, e1) = gk15(&f, a, mid);
        let (v2, e2) = gk15(&f, mid, b);
        panels.push((a, mid, v1, e1));
        panels.push((mid, b, v2, e2));
    }
}

/// Composite Gauss–Legendre nodes: `panels` equal panels of `order` points each.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(lo + 0.5 * width * (xi + 1.0));
            weights.push(0.5 * width * wi);
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn kronrod_weights_sum_to_length() {
        let nodes = kronrod_panel(-1.0, 3.0);
        let k: f64 = nodes.iter().map(|n| n.kronrod_weight).sum();
        let g: f64 = nodes.iter().map(|n| n.gauss_weight).sum();
        assert!((k - 4.0).abs() < 1e-14);
        assert!((g - 4.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = integrate_adaptive(|x: f64| x.abs().sqrt(), -1.0, 1.0, AdaptiveOptions::default()).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-9);
        let v = integrate_adaptive(|x: f64| (10.0 * x).sin().powi(2), 0.0, 3.0, AdaptiveOptions::default()).unwrap();
        let exact = 1.5 - (60.0_f64).sin() / 40.0;
        assert!((v - exact).abs() < 1e-10);
    }
}
