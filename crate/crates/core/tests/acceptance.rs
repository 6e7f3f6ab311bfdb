//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion with the measured value, its tolerance and its runtime, and
//! exits non-zero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use fokker_fit::assembly::{assemble_h, QuadratureConfig};
use fokker_fit::coefficients::{ou_field, CoefficientField, ConstantField, LearnedCoefficients};
use fokker_fit::density::{loss_l, DensityModel, GaussianMarginal, GridDensity, Lattice};
use fokker_fit::fp_solver::{normalized_initial, solve_fp, solve_fp_with_stats, FpProblem};
use fokker_fit::kernels::{bessel, make_centers, BandlimitedKernel, Domain, MaternKernel, RadialJet, TimeCoefficients, WindowedKernel};
use fokker_fit::linalg;
use fokker_fit::operators::{apply_dual, apply_generator, dual_from_jets, SpatialFunction};
use fokker_fit::pipeline::{self, Config, RunReport};
use fokker_fit::quadrature::{composite_gauss_legendre, integrate_adaptive_breaks, AdaptiveOptions};
use fokker_fit::sde_sim::{observation_times, simulate, InitialLaw, SimulationSpec};
use fokker_fit::sdp::{solve, SolveOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `∫_{−L}^{L} f` on Gauss–Legendre panels of width `width`.
fn panel_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, width: f64) -> f64 {
    let (x, w) = composite_gauss_legendre(a, b, ((b - a) / width).ceil() as usize, 8);
    x.iter().zip(&w).map(|(x, w)| w * f(*x)).sum()
}

fn kernel_identities() -> Outcome {
    let r = 1.0;
    let probes = [0.0, 0.3, 0.6, 0.85, 1.15, 1.5, 2.0];
    // Fourier transform `∫ρ(x)e^{−2πiξ·x}dx` on a truncated domain.
    let k1 = BandlimitedKernel::new(r, 1);
    let ft1 = probes
        .iter()
        .map(|&xi| {
            let v = 2.0 * panel_integral(|x| k1.value(&[x]) * (2.0 * PI * xi * x).cos(), 0.0, 400.0, 0.25);
            (v - if xi < r { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max);
    let k2 = BandlimitedKernel::new(r, 2);
    let ft2 = probes
        .iter()
        .map(|&xi| {
            let v = 2.0
                * PI
                * panel_integral(|s| k2.value(&[s, 0.0]) * bessel::lambda(0, 2.0 * PI * xi * s) * s, 0.0, 400.0, 0.25);
            (v - if xi < r { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max);

    let mut rng = common::rng(101);
    let kc = BandlimitedKernel::new(1.5, 1);
    let breaks: Vec<f64> = (0..=4000).map(|k| -1000.0 + 0.5 * k as f64).collect();
    let opts = AdaptiveOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-10,
        max_subdivisions: 20_000,
    };
    let mut conv = 0.0f64;
    for _ in 0..20 {
        let (x1, x2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let lhs = integrate_adaptive_breaks(|y| kc.value(&[y - x1]) * kc.value(&[y - x2]), &breaks, opts).unwrap();
        conv = conv.max((lhs - kc.value(&[x1 - x2])).abs());
    }
    check(
        ft1 <= 2e-2 && ft2 <= 2e-2 && conv <= 1e-3,
        format!("FT vs indicator 1-D {ft1:.2e}, 2-D {ft2:.2e} (tol 2e-2); ρ*ρ = ρ max err {conv:.2e} over 20 pairs (tol 1e-3)"),
    )
}

fn interpolation_exactness() -> Outcome {
    let kernel = MaternKernel::sobolev_time(1, 1.0);
    let (mut nodal, mut deriv) = (0.0f64, 0.0f64);
    for m in [2, 5, 12] {
        let times = observation_times(m, 1.0);
        let tc = TimeCoefficients::new(&times, kernel.clone()).unwrap();
        for (j, t) in times.iter().enumerate() {
            for (l, c) in tc.coeffs(*t).iter().enumerate() {
                nodal = nodal.max((c - if l == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let h = 1e-5;
        for k in 0..7 {
            let t = 0.05 + 0.9 * (k as f64 + 0.37) / 7.0;
            if times.iter().any(|s| (s - t).abs() < 10.0 * h) {
                continue;
            }
            let (up, down) = (tc.coeffs(t + h), tc.coeffs(t - h));
            for (l, d) in tc.coeffs_dt(t).iter().enumerate() {
                deriv = deriv.max((d - (up[l] - down[l]) / (2.0 * h)).abs());
            }
        }
    }
    check(
        nodal <= 1e-8 && deriv <= 1e-5,
        format!("|c_l(t_j) − δ_lj| {nodal:.2e} (tol 1e-8); ċ vs central differences {deriv:.2e} (tol 1e-5); M ∈ {{2, 5, 12}}"),
    )
}

fn duality_gap<F: CoefficientField>(field: &F, alpha: f64, phi: &dyn SpatialFunction, u: &dyn SpatialFunction) -> f64 {
    let opts = AdaptiveOptions {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        max_subdivisions: 4000,
    };
    let breaks: Vec<f64> = (0..=16).map(|k| -3.0 + 6.0 * k as f64 / 16.0).collect();
    let lhs = integrate_adaptive_breaks(
        |y| apply_generator(field, alpha, phi, 0.3, &[y]) * u.jet(0.3, &[y]).value,
        &breaks,
        opts,
    )
    .unwrap();
    let rhs = integrate_adaptive_breaks(
        |y| phi.jet(0.3, &[y]).value * apply_dual(field, alpha, u, 0.3, &[y]),
        &breaks,
        opts,
    )
    .unwrap();
    (lhs - rhs).abs()
}

fn operator_duality() -> Outcome {
    let mut rng = common::rng(303);
    let ou = ou_field(1.0, 0.5, 1, Some(2.0)).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let phi = common::bump(rng.random_range(-1.0..1.0), rng.random_range(0.8..1.6), 1.0);
        let u = common::bump(rng.random_range(-1.0..1.0), rng.random_range(0.8..1.6), 1.0);
        worst = worst.max(duality_gap(&ou, 0.3, &phi, &u));
        let model = common::random_model(&mut rng, 1, 3, 0.3);
        worst = worst.max(duality_gap(&model, 0.3, &phi, &u));
    }
    check(
        worst <= 1e-5,
        format!("|∫(Lφ)u − ∫φ(L*u)| max {worst:.2e} over 5 pairs, OU and kernel models (tol 1e-5)"),
    )
}

fn assembly_consistency() -> Outcome {
    let mut rng = common::rng(404);
    let density = common::density(&mut rng, 1, 3, 50, 1.5);
    let kernel = WindowedKernel::for_smoothness(1, 1, 2.5, 1.0, 1.0);
    let domain = Domain::Cylinder {
        t_end: 1.0,
        radius: 2.5,
        n: 1,
    };
    let centers = make_centers(&domain, 1.0, 9).unwrap();
    let alpha = 0.4;
    let qp = assemble_h(&density, &kernel, &centers, alpha, 0.0, &QuadratureConfig::default()).unwrap();
    let models: Vec<(DMatrix<f64>, DVector<f64>, LearnedCoefficients)> = (0..5)
        .map(|_| {
            let qn = qp.qn();
            let a = common::random_psd(&mut rng, qn, 2) * 0.5;
            let b = common::random_vector(&mut rng, qn);
            let model = LearnedCoefficients::new(kernel.clone(), centers.clone(), a.clone(), b.clone(), alpha).unwrap();
            (a, b, model)
        })
        .collect();
    let half = density.truncation_half_width();
    let (ys, wy) = composite_gauss_legendre(-half, half, (2.0 * half * density.bandwidth() / 0.4).ceil() as usize, 8);
    let g: Vec<Vec<RadialJet>> = ys
        .iter()
        .map(|y| (0..density.m()).map(|l| density.g_hat_jet(l, &[*y])).collect())
        .collect();
    let tc = density.time_coefficients();
    let (ts, wt) = composite_gauss_legendre(0.0, 1.0, 12, 8);
    let mut direct = vec![0.0; models.len()];
    for (t, w1) in ts.iter().zip(&wt) {
        let (c, d) = (tc.coeffs(*t), tc.coeffs_dt(*t));
        for ((y, gy), w2) in ys.iter().zip(&g).zip(&wy) {
            let p = density.combine(gy, &c, &d);
            let pj = RadialJet {
                value: p.value,
                grad: p.grad.clone(),
                hess: p.hess.clone(),
            };
            for (k, (_, _, model)) in models.iter().enumerate() {
                let r = p.dt - dual_from_jets(&model.jet(*t, &[*y]), alpha, &pj);
                direct[k] += w1 * w2 * r * r;
            }
        }
    }
    let worst = models
        .iter()
        .zip(&direct)
        .map(|((a, b, _), d)| (qp.fit_term(a, b) - d).abs() / d)
        .fold(0.0, f64::max);
    check(
        worst <= 1e-2,
        format!("vᵀHv vs quadratured residual norm, max relative {worst:.2e} over 5 models, Q = {} (tol 1e-2)", centers.len()),
    )
}

fn solver_correctness() -> Outcome {
    // planted program: `H = [[x*ᵀMx* + 1, −(Mx*)ᵀ], [−Mx*, M]]` has minimum 1 at `x*` with PSD `A*`
    let mut gap = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for seed in 0..3 {
        let mut rng = common::rng(500 + seed);
        let (q, n) = (2, 2);
        let qn = q * n;
        let d = qn + qn * qn;
        let a_star = common::random_psd(&mut rng, qn, qn) + DMatrix::identity(qn, qn) * 0.2;
        let b_star = common::random_vector(&mut rng, qn);
        let mut x = DVector::zeros(d);
        x.rows_mut(0, qn).copy_from(&b_star);
        x.rows_mut(qn, qn * qn).copy_from(&linalg::vec_col_major(&a_star));
        let m = common::random_psd(&mut rng, d, d) + DMatrix::identity(d, d) * 0.5;
        let p = -(&m * &x);
        let mut h = DMatrix::zeros(d + 1, d + 1);
        h[(0, 0)] = x.dot(&(&m * &x)) + 1.0;
        h.view_mut((1, 0), (d, 1)).copy_from(&p);
        h.view_mut((0, 1), (1, d)).copy_from(&p.transpose());
        h.view_mut((1, 1), (d, d)).copy_from(&m);
        let kernel = WindowedKernel::for_smoothness(1, n, 2.0, 1.0, 1.0);
        let qp = fokker_fit::assembly::QuadraticProgram {
            h,
            q,
            n,
            lambda: 0.0,
            gram_q: DMatrix::identity(q, q),
            centers: (0..q).map(|l| vec![l as f64 / q as f64; 1 + n]).collect(),
            kernel: kernel.spec(),
            alpha: 0.5,
            provenance: None,
        };
        let report = solve(&qp, &SolveOptions::default()).unwrap();
        gap = gap.max((report.final_objective() - 1.0).abs());
        min_eig = min_eig.min(linalg::min_eigenvalue(&report.a));
    }

    let (alpha, radius) = (0.5, 2.5);
    let field = ou_field(1.0, 0.5, 1, Some(radius)).unwrap();
    let spec = SimulationSpec {
        alpha,
        law: InitialLaw::Gaussian {
            mean: vec![0.5],
            covariance: vec![0.25],
        },
        m: 3,
        samples: 50,
        t_end: 1.0,
        dt: 0.01,
        seed: 21,
    };
    let obs = simulate(&field, &spec).unwrap();
    let density = DensityModel::build(&obs, 1.5, MaternKernel::sobolev_time(1, 1.0)).unwrap();
    let kernel = WindowedKernel::for_smoothness(1, 1, radius, 1.0, 1.0);
    let domain = Domain::Cylinder {
        t_end: 1.0,
        radius,
        n: 1,
    };
    let centers = make_centers(&domain, 1.0, 9).unwrap();
    let qp = assemble_h(&density, &kernel, &centers, alpha, 0.05, &QuadratureConfig::default()).unwrap();
    let proj = LearnedCoefficients::projection_point(&field, kernel, centers, alpha).unwrap();
    let at_projection = qp.objective(proj.a_matrix(), proj.b_vector());
    let report = solve(&qp, &SolveOptions::default()).unwrap();
    let at_solution = report.final_objective();
    min_eig = min_eig.min(linalg::min_eigenvalue(&report.a));
    check(
        gap <= 1e-8 && min_eig >= -1e-8 && at_solution <= at_projection,
        format!(
            "planted objective gap {gap:.2e} (tol 1e-8); min eig A {min_eig:.2e} (tol −1e-8); \
             OU fit {at_solution:.4e} ≤ projection {at_projection:.4e}"
        ),
    )
}

fn gaussian_1d(mean: f64, var: f64) -> impl Fn(&[f64]) -> f64 {
    move |x| (-(x[0] - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn l2_error(p: &GridDensity, k: usize, exact: impl Fn(&[f64]) -> f64) -> f64 {
    let w = p.lattice.space_weights();
    p.lattice
        .points()
        .iter()
        .zip(p.slice(k))
        .zip(&w)
        .map(|((x, v), w)| w * (v - exact(x)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn heat_error(nodes: usize, dt: Option<f64>) -> f64 {
    let lat = Lattice::uniform(&[-6.0], &[6.0], &[nodes], 0.5, 1).unwrap();
    let p = solve_fp(&FpProblem {
        field: &ConstantField::zero(1),
        alpha: 1.0,
        lattice: lat.clone(),
        initial: normalized_initial(&lat, gaussian_1d(0.0, 0.25)).unwrap(),
        dt,
        source: None,
    })
    .unwrap();
    l2_error(&p, 1, gaussian_1d(0.0, 0.75))
}

fn fp_solver() -> Outcome {
    let heat = heat_error(241, None);
    let field = ou_field(1.0, 0.5, 1, None).unwrap();
    let t_end = 8.0;
    let lat = Lattice::uniform(&[-6.0], &[6.0], &[241], t_end, 8).unwrap();
    let (p, stats) = solve_fp_with_stats(&FpProblem {
        field: &field,
        alpha: 0.5,
        lattice: lat.clone(),
        initial: normalized_initial(&lat, gaussian_1d(1.0, 0.25)).unwrap(),
        dt: None,
        source: None,
    })
    .unwrap();
    let ou = l2_error(&p, 8, gaussian_1d(0.0, 0.5));
    let drift = stats.max_mass_drift / t_end;
    let factor = heat_error(61, Some(5e-4)) / heat_error(121, Some(5e-4));
    check(
        heat <= 1e-3 && ou <= 1e-3 && drift <= 1e-6 && (3.2..=4.8).contains(&factor),
        format!(
            "heat L² {heat:.2e}, OU stationary L² {ou:.2e} (tol 1e-3); mass drift {drift:.2e}/unit time (tol 1e-6); \
             convergence factor {factor:.3} (range [3.2, 4.8])"
        ),
    )
}

const SWEEP_EPSILON: [f64; 3] = [0.4, 0.3, 0.2];
const SWEEP_SEEDS: [u64; 3] = [1, 2, 3];

fn sweep(root: &std::path::Path) -> Vec<(f64, RunReport)> {
    let mut out = Vec::new();
    for eps in SWEEP_EPSILON {
        for seed in SWEEP_SEEDS {
            let mut cfg = Config::default();
            cfg.fit.epsilon = eps;
            cfg.simulate.seed = seed;
            let dir = root.join(format!("eps{eps}-seed{seed}"));
            out.push((eps, pipeline::run(&cfg, &dir).unwrap()));
        }
    }
    out
}

fn mean_by_epsilon(runs: &[(f64, RunReport)], f: impl Fn(&RunReport) -> f64) -> Vec<f64> {
    SWEEP_EPSILON
        .iter()
        .map(|e| {
            let v: Vec<f64> = runs.iter().filter(|(x, _)| x == e).map(|(_, r)| f(r)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect()
}

/// Each value at most twice its predecessor.
fn within_band(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= 2.0 * w[0])
}

fn end_to_end_trend(runs: &[(f64, RunReport)]) -> Outcome {
    let l = mean_by_epsilon(runs, |r| r.loss_l);
    let e = mean_by_epsilon(runs, |r| r.e);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" → ");
    check(
        within_band(&l) && within_band(&e),
        format!("ε = 0.4 → 0.3 → 0.2, mean over 3 seeds: L(p̂) {}; E {} (2× band)", fmt(&l), fmt(&e)),
    )
}

fn observation_gap(runs: &[(f64, RunReport)]) -> Outcome {
    let pairs: Vec<_> = runs.iter().flat_map(|(_, r)| r.observation_gap.iter()).collect();
    let worst = pairs.iter().map(|g| g.lhs - g.rhs).fold(f64::NEG_INFINITY, f64::max);
    let complete = runs.iter().all(|(_, r)| r.observation_gap.len() == 20);
    check(
        complete && worst <= 1e-10,
        format!("{} pairs over {} runs, max(lhs − rhs) {worst:.2e} (tol 1e-10)", pairs.len(), runs.len()),
    )
}

fn density_rate() -> Outcome {
    let (theta, sigma2, alpha) = (1.0, 0.5, 0.5);
    let field = ou_field(theta, sigma2, 1, None).unwrap();
    let marginal = GaussianMarginal {
        mean0: vec![1.0],
        cov0: DMatrix::from_element(1, 1, 0.25),
        theta,
        diffusion: sigma2 + alpha,
    };
    let lattice = Lattice::uniform(&[-6.0], &[6.0], &[241], 1.0, 8).unwrap();
    let p_ref = GridDensity::from_fn(lattice.clone(), |t, x| marginal.density(t, x)).unwrap();
    let (m, bandwidth) = (12, 3.0);
    let ns = [100usize, 200, 400, 800, 1600];
    let mut slopes = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut losses = Vec::new();
        for &samples in &ns {
            let spec = SimulationSpec {
                alpha,
                law: InitialLaw::Gaussian {
                    mean: vec![1.0],
                    covariance: vec![0.25],
                },
                m,
                samples,
                t_end: 1.0,
                dt: 1e-3,
                seed,
            };
            let obs = simulate(&field, &spec).unwrap();
            let model = DensityModel::build(&obs, bandwidth, MaternKernel::sobolev_time(1, 1.0)).unwrap();
            losses.push(loss_l(&model.on_lattice(&lattice).unwrap(), &p_ref).unwrap());
        }
        let x: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
        let y: Vec<f64> = losses.iter().map(|l| l.ln()).collect();
        let (mx, my) = (x.iter().sum::<f64>() / 5.0, y.iter().sum::<f64>() / 5.0);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        slopes.push(sxy / sxx);
    }
    let pass = slopes.iter().all(|s| (-1.4..=-0.6).contains(s));
    let shown = slopes.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", ");
    check(
        pass,
        format!("M = {m}, R = {bandwidth}, N = 100..1600: slopes of log L(p̂) vs log N per seed [{shown}] (range [−1.4, −0.6])"),
    )
}

fn timed(budget_s: f64, f: impl FnOnce() -> Outcome) -> (Outcome, f64) {
    let start = Instant::now();
    let mut out = f();
    let secs = start.elapsed().as_secs_f64();
    if secs > budget_s {
        out.pass = false;
        out.detail += &format!("; runtime over budget {budget_s:.0} s");
    }
    (out, secs)
}

fn main() {
    let mut results: Vec<(usize, &str, f64, Outcome, f64)> = Vec::new();
    let mut record = |k: usize, name: &'static str, budget: f64, f: &dyn Fn() -> Outcome| {
        let (o, secs) = timed(budget, f);
        let line = format!(
            "criterion {k} [{}] {name}: {} ({secs:.1} s, budget {budget:.0} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        println!("{line}");
        results.push((k, name, budget, o, secs));
    };
    record(1, "kernel identities", 30.0, &kernel_identities);
    record(2, "interpolation exactness", 30.0, &interpolation_exactness);
    record(3, "operator duality", 60.0, &operator_duality);
    record(4, "assembly consistency", 300.0, &assembly_consistency);
    record(5, "solver correctness", 300.0, &solver_correctness);
    record(6, "forward solver", 120.0, &fp_solver);

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let runs = sweep(dir.path());
    let sweep_secs = start.elapsed().as_secs_f64();
    record(7, "end-to-end trend", 1200.0 - sweep_secs, &|| end_to_end_trend(&runs));
    record(8, "observation gap", 1200.0 - sweep_secs, &|| observation_gap(&runs));
    println!("(criteria 7 and 8 share a {sweep_secs:.1} s sweep of 9 runs)");
    record(9, "density rate", 600.0, &density_rate);

    let failed: Vec<usize> = results.iter().filter(|r| !r.3.pass).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
