mod common;

use fokker_fit::assembly::{assemble_h, center_gram, QuadraticProgram, QuadratureConfig};
use fokker_fit::coefficients::{ou_field, LearnedCoefficients};
use fokker_fit::density::DensityModel;
use fokker_fit::kernels::{make_centers, Domain, MaternKernel, WindowedKernel};
use fokker_fit::linalg;
use fokker_fit::sde_sim::{simulate, InitialLaw, SimulationSpec};
use fokker_fit::sdp::{objective_gradient, project_psd, solve, SolveOptions, SolveReport, Termination};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn program(h: DMatrix<f64>, q: usize, n: usize, lambda: f64, gram_q: DMatrix<f64>) -> QuadraticProgram {
    let kernel = WindowedKernel::for_smoothness(1, n, 2.0, 1.0, 1.0);
    QuadraticProgram {
        h,
        q,
        n,
        lambda,
        gram_q,
        centers: (0..q).map(|l| vec![l as f64 / q as f64; 1 + n]).collect(),
        kernel: kernel.spec(),
        alpha: 0.5,
        provenance: None,
    }
}

fn random_spd(rng: &mut ChaCha8Rng, dim: usize, floor: f64) -> DMatrix<f64> {
    common::random_psd(rng, dim, dim) + DMatrix::identity(dim, dim) * floor
}

/// `H = [[x*ᵀMx* + 1, −(Mx*)ᵀ], [−Mx*, M]]`: unconstrained minimiser `x*`, minimum 1.
fn planted(rng: &mut ChaCha8Rng, q: usize, n: usize) -> (QuadraticProgram, DMatrix<f64>, DVector<f64>) {
    let qn = q * n;
    let d = qn + qn * qn;
    let a_star = common::random_psd(rng, qn, qn) + DMatrix::identity(qn, qn) * 0.2;
    let b_star = common::random_vector(rng, qn);
    let mut x = DVector::zeros(d);
    x.rows_mut(0, qn).copy_from(&b_star);
    x.rows_mut(qn, qn * qn).copy_from(&linalg::vec_col_major(&a_star));
    let m = random_spd(rng, d, 0.5);
    let p = -(&m * &x);
    let mut h = DMatrix::zeros(d + 1, d + 1);
    h[(0, 0)] = x.dot(&(&m * &x)) + 1.0;
    h.view_mut((1, 0), (d, 1)).copy_from(&p);
    h.view_mut((0, 1), (1, d)).copy_from(&p.transpose());
    h.view_mut((1, 1), (d, d)).copy_from(&m);
    (program(h, q, n, 0.0, DMatrix::identity(q, q)), a_star, b_star)
}

/// Random rank-deficient PSD `H` and SPD `G_Q`.
fn random_program(rng: &mut ChaCha8Rng, q: usize, n: usize, lambda: f64) -> QuadraticProgram {
    let qn = q * n;
    let dim = 1 + qn + qn * qn;
    let h = common::random_psd(rng, dim, dim / 2);
    let g = random_spd(rng, q, 0.1);
    program(h, q, n, lambda, g)
}

#[test]
fn planted_unconstrained_minimum_is_recovered() {
    for seed in 0..3 {
        let mut rng = common::rng(seed);
        let (qp, a_star, b_star) = planted(&mut rng, 2, 2);
        // independent oracle: minimiser of the quadratic by a direct linear solve
        let d = qp.dim() - 1;
        let m = qp.h.view((1, 1), (d, d)).into_owned();
        let p = qp.h.view((1, 0), (d, 1)).into_owned();
        let x: DVector<f64> = m.clone().lu().solve(&(-p)).unwrap().column(0).into_owned();
        let oracle = qp.h[(0, 0)] + 2.0 * p_dot(&qp, &x) + x.dot(&(&m * &x));
        assert!((oracle - 1.0).abs() < 1e-8);
        assert!((qp.objective(&a_star, &b_star) - oracle).abs() < 1e-8);
        let report = solve(&qp, &SolveOptions::default()).unwrap();
        assert!((report.final_objective() - oracle).abs() <= 1e-8, "{} vs {oracle}", report.final_objective());
        assert!((&report.a - &a_star).amax() < 1e-5);
    }
}

fn p_dot(qp: &QuadraticProgram, x: &DVector<f64>) -> f64 {
    (1..qp.dim()).map(|k| qp.h[(k, 0)] * x[k - 1]).sum()
}

#[test]
fn identity_program_has_minimum_at_origin() {
    let (q, n) = (3, 1);
    let dim = 1 + q * n + q * n * q * n;
    let qp = program(DMatrix::identity(dim, dim), q, n, 0.0, DMatrix::identity(q, q));
    let report = solve(&qp, &SolveOptions::default()).unwrap();
    assert!(report.a.amax() < 1e-12 && report.b.amax() < 1e-12);
    assert!((report.final_objective() - 1.0).abs() < 1e-12);
}

#[test]
fn kkt_conditions_hold_at_termination() {
    let mut rng = common::rng(11);
    for lambda in [0.0, 0.1] {
        let qp = random_program(&mut rng, 3, 1, lambda);
        let report = solve(&qp, &SolveOptions::default()).unwrap();
        assert_eq!(report.termination, Termination::GradientTol);
        let h_norm = linalg::spectral_norm_sym(&qp.h);
        let (grad_a, grad_b) = objective_gradient(&qp, &report.a, &report.b);
        assert!(grad_b.norm() <= 1e-6 * (1.0 + h_norm), "{}", grad_b.norm());
        let qn = qp.qn();
        for _ in 0..50 {
            let rank = 1 + rng.random_range(0..qn);
            let d = common::random_psd(&mut rng, qn, rank);
            let d = &d / d.norm();
            // a feasible direction from A*: A* + sD stays PSD for s ≥ 0
            assert!(grad_a.component_mul(&d).sum() >= -1e-6);
        }
        assert!(report.psd_residual >= -1e-8 * report.a.norm().max(1.0));
    }
}

#[test]
fn objective_trajectory_never_increases() {
    let mut rng = common::rng(12);
    for _ in 0..3 {
        let qp = random_program(&mut rng, 2, 2, 0.05);
        let report = solve(&qp, &SolveOptions::default()).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(report.final_objective() <= qp.objective(&DMatrix::zeros(4, 4), &DVector::zeros(4)));
    }
}

#[test]
fn solve_is_deterministic() {
    let mut rng = common::rng(13);
    let qp = random_program(&mut rng, 3, 1, 0.1);
    let a = solve(&qp, &SolveOptions::default()).unwrap();
    let b = solve(&qp, &SolveOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn iteration_cap_is_reported() {
    let mut rng = common::rng(14);
    let qp = random_program(&mut rng, 3, 1, 0.0);
    let opts = SolveOptions {
        max_iterations: 3,
        ..SolveOptions::default()
    };
    let report = solve(&qp, &opts).unwrap();
    assert!(report.iterations <= 3);
    assert_eq!(report.objective.len(), report.iterations + 1);
}

#[test]
fn corrupt_programs_are_rejected() {
    let mut rng = common::rng(15);
    let mut qp = random_program(&mut rng, 2, 1, 0.0);
    qp.h[(0, 3)] += 1.0;
    assert_eq!(solve(&qp, &SolveOptions::default()).unwrap_err().exit_code(), 3);
    let mut qp = random_program(&mut rng, 2, 1, 0.0);
    qp.h[(1, 1)] = f64::NAN;
    assert_eq!(solve(&qp, &SolveOptions::default()).unwrap_err().exit_code(), 3);
    let mut qp = random_program(&mut rng, 2, 1, 0.0);
    qp.lambda = -1.0;
    assert_eq!(solve(&qp, &SolveOptions::default()).unwrap_err().exit_code(), 2);
}

#[test]
fn report_round_trips_through_json() {
    let mut rng = common::rng(16);
    let qp = random_program(&mut rng, 2, 1, 0.1);
    let report = solve(&qp, &SolveOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("solve.json");
    report.save_json(&path).unwrap();
    assert_eq!(SolveReport::load_json(&path).unwrap(), report);
}

#[test]
fn projection_is_the_nearest_psd_matrix() {
    let mut rng = common::rng(17);
    for _ in 0..5 {
        let raw = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let a = linalg::symmetrize(&raw);
        let p = project_psd(&a);
        assert!(linalg::min_eigenvalue(&p) >= -1e-12);
        assert!((project_psd(&p) - &p).amax() < 1e-12);
        let dist = (&a - &p).norm();
        for _ in 0..100 {
            let rank = rng.random_range(1..5);
            let s = common::random_psd(&mut rng, 4, rank) * rng.random_range(0.0..2.0);
            assert!(dist <= (&a - s).norm() + 1e-12);
        }
    }
}

#[test]
fn solution_beats_the_projection_of_the_true_coefficients() {
    let (theta, sigma2, alpha, radius) = (1.0, 0.5, 0.5, 2.5);
    let field = ou_field(theta, sigma2, 1, Some(radius)).unwrap();
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
    assert_eq!(qp.gram_q, center_gram(&kernel, &centers));
    let proj = LearnedCoefficients::projection_point(&field, kernel, centers, alpha).unwrap();
    let at_projection = qp.objective(proj.a_matrix(), proj.b_vector());
    let report = solve(&qp, &SolveOptions::default()).unwrap();
    assert!(report.final_objective() <= at_projection + 1e-10, "{} vs {at_projection}", report.final_objective());
    assert!(report.psd_residual >= -1e-8 * report.a.norm().max(1.0));
}
