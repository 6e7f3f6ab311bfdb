//! End-to-end runs: simulate, fit and validate, with every intermediate
//! written under one run directory:
//!
//! ```text
//! <out>/config.toml             resolved configuration
//! <out>/data/                   observations.csv, manifest.json
//! <out>/fit/                    qp.json, qp_h.bin, solve.json, coefficients.json, summary.json
//! <out>/validate/               p_ref, p_learned, p_hat (csv + json), validation.json
//! <out>/report.json
//! ```

mod config;
mod report;
mod schedule;

pub use config::{Config, FieldConfig, FitConfig, Overrides, SimulateConfig, ValidateConfig};
pub use report::{report, RateFit, ReportRow, ReportSummary};
pub use schedule::{schedule, Schedule};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_h, QuadraticProgram};
use crate::coefficients::{CoefficientField, LearnedCoefficients};
use crate::density::{loss_l, DensityModel, GridDensity, Lattice};
use crate::error::{Error, Result};
use crate::fp_solver::{discretization_floor, normalized_initial, observation_gap, solve_fp, FpProblem};
use crate::kernels::{make_centers, Domain, MaternKernel, WindowedKernel};
use crate::sde_sim::{simulate, ObservationSet, SimulationSpec};
use crate::sdp::{project_psd, solve, SolveReport, Termination};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn fit(&self) -> PathBuf {
        self.root.join("fit")
    }

    pub fn validate(&self) -> PathBuf {
        self.root.join("validate")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    fn fit_file(&self, name: &str) -> PathBuf {
        self.fit().join(name)
    }

    fn validate_file(&self, name: &str) -> PathBuf {
        self.validate().join(name)
    }
}

/// Outcome of the fit stage, stored as `fit/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub schedule: Schedule,
    /// Fill distance actually used for the centers (after any relaxation).
    pub fill_distance: f64,
    pub lp_objective: f64,
    pub fit_term: f64,
    pub regularizer: f64,
    /// LP objective at the projection of the true coefficients onto the model.
    pub projection_objective: Option<f64>,
    pub termination: Termination,
    pub iterations: usize,
    pub psd_residual: f64,
    pub wall_times: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPair {
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    pub schedule: Schedule,
    pub fill_distance: f64,
    pub loss_l: f64,
    pub lp_objective: f64,
    pub fit_term: f64,
    pub regularizer: f64,
    pub projection_objective: Option<f64>,
    pub solver_termination: Termination,
    pub solver_iterations: usize,
    pub psd_residual: f64,
    /// `E(â_Q, b̂_Q)` against the reference density.
    pub e: f64,
    /// Estimated forward-solver error of the reference itself.
    pub e_floor: f64,
    pub observation_gap: Vec<GapPair>,
    /// `lhs ≤ rhs + 1e−10` for every test function.
    pub gap_holds: bool,
    /// Seconds per stage.
    pub wall_times: BTreeMap<String, f64>,
    /// Artifact paths relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::schema(path, format!("cannot read report: {e}")))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The report with wall times cleared, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            wall_times: BTreeMap::new(),
            ..self.clone()
        }
    }
}

/// The scheduled parameters with any configured overrides applied.
pub fn effective_schedule(cfg: &Config) -> Result<Schedule> {
    let mut s = schedule(
        cfg.fit.epsilon,
        cfg.fit.delta,
        cfg.fit.smoothness,
        cfg.simulate.n,
        cfg.simulate.t_end,
    )?;
    if let Some(m) = cfg.simulate.times {
        s.m = m;
    }
    if let Some(n) = cfg.simulate.samples {
        s.samples = n;
    }
    if let Some(r) = cfg.fit.bandwidth {
        s.bandwidth = r;
    }
    if let Some(l) = cfg.fit.lambda {
        s.lambda = l;
    }
    if let Some(h) = cfg.fit.fill_distance {
        s.h_q = h;
    }
    Ok(s)
}

/// Largest center count whose dense `H` fits in `bytes`.
pub fn centers_within_bytes(n: usize, bytes: usize) -> usize {
    let entries = bytes / std::mem::size_of::<f64>();
    let fits = |q: usize| {
        let qn = q * n;
        let dim = 1 + qn + qn * qn;
        dim.checked_mul(dim).is_some_and(|d| d <= entries)
    };
    let mut q = 0;
    while fits(q + 1) {
        q += 1;
    }
    q
}

/// Centers with fill distance `target`, relaxed by 25% steps while more
/// than `cap` would be needed.
pub fn place_centers(domain: &Domain, target: f64, cap: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut h = target;
    loop {
        match make_centers(domain, h, cap) {
            Ok(c) => return Ok((c, h)),
            Err(Error::BudgetExceeded(_)) => {
                let next = 1.25 * h;
                log::warn!("fill distance {h:.4} needs more than {cap} centers; relaxing to {next:.4}");
                h = next;
            }
            Err(e) => return Err(e),
        }
    }
}

/// The validation lattice, with the per-axis node count reduced to respect
/// the space-node cap.
pub fn validation_lattice(cfg: &Config) -> Result<Lattice> {
    let n = cfg.simulate.n;
    let v = &cfg.validate;
    let mut nodes = v.nodes;
    while nodes > 3 && nodes.pow(n as u32) > v.max_space_nodes {
        nodes -= 1;
    }
    if nodes != v.nodes {
        log::warn!("validation lattice clamped from {} to {nodes} nodes per axis", v.nodes);
    }
    let h = v.half_width;
    Lattice::uniform(&vec![-h; n], &vec![h; n], &vec![nodes; n], cfg.simulate.t_end, v.time_steps)
}

fn stage_error(stage: &str, dir: &Path, source: Error) -> Error {
    let mut artifacts: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    artifacts.sort();
    Error::Stage {
        stage: stage.into(),
        artifacts,
        source: Box::new(source),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::schema(path, format!("cannot read: {e}")))?;
    Ok(serde_json::from_str(&text)?)
}

/// Simulates the configured SDE and writes `data/`.
pub fn simulate_stage(cfg: &Config, out: &Path) -> Result<ObservationSet> {
    let layout = RunLayout::new(out);
    let inner = || -> Result<ObservationSet> {
        std::fs::create_dir_all(layout.data())?;
        std::fs::write(layout.config(), cfg.to_toml_string()?)?;
        let sched = effective_schedule(cfg)?;
        let s = &cfg.simulate;
        let field = s.field.build(s.n)?;
        let spec = SimulationSpec {
            alpha: s.alpha,
            law: s.law.clone(),
            m: sched.m,
            samples: sched.samples,
            t_end: s.t_end,
            dt: s.dt,
            seed: s.seed,
        };
        log::info!("simulating M = {}, N = {} paths", sched.m, sched.samples);
        let obs = simulate(&field, &spec)?;
        obs.save(&layout.data())?;
        Ok(obs)
    };
    inner().map_err(|e| stage_error("simulate", &layout.data(), e))
}

fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

fn density_model(cfg: &Config, obs: &ObservationSet, bandwidth: f64) -> Result<DensityModel> {
    DensityModel::build(obs, bandwidth, MaternKernel::sobolev_time(cfg.fit.smoothness, 1.0))
}

/// Builds `p̂`, assembles and solves the program, and writes `fit/`.
pub fn fit_stage(cfg: &Config, out: &Path) -> Result<FitSummary> {
    let layout = RunLayout::new(out);
    let inner = || -> Result<FitSummary> {
        std::fs::create_dir_all(layout.fit())?;
        let obs = ObservationSet::load(&layout.data())?;
        let (n, t_end, alpha) = (cfg.simulate.n, cfg.simulate.t_end, cfg.simulate.alpha);
        if obs.n() != n || (obs.t_end() - t_end).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "dataset has n = {}, T = {}; configuration has n = {n}, T = {t_end}",
                obs.n(),
                obs.t_end()
            )));
        }
        let mut sched = effective_schedule(cfg)?;
        if obs.m() != sched.m || obs.samples_per_time() != sched.samples {
            log::warn!(
                "dataset has M = {}, N = {}; schedule asks for M = {}, N = {}",
                obs.m(),
                obs.samples_per_time(),
                sched.m,
                sched.samples
            );
            sched.m = obs.m();
            sched.samples = obs.samples_per_time();
        }
        let mut wall = BTreeMap::new();

        let start = Instant::now();
        let density = density_model(cfg, &obs, sched.bandwidth)?;
        let f = &cfg.fit;
        let kernel = WindowedKernel::for_smoothness(f.smoothness, n, f.domain_radius, t_end, f.length_scale);
        let domain = Domain::Cylinder {
            t_end,
            radius: f.domain_radius,
            n,
        };
        let memory_cap = centers_within_bytes(n, f.quadrature.max_h_bytes);
        if memory_cap < f.max_centers {
            log::warn!("H memory budget allows at most {memory_cap} centers in {n}-d; max_centers {} lowered", f.max_centers);
        }
        let (centers, fill) = place_centers(&domain, sched.h_q, f.max_centers.min(memory_cap).max(1))?;
        sched.q = Some(centers.len());
        wall.insert("density".to_string(), elapsed(start));
        log::info!("Q = {} centers at fill distance {fill:.4}", centers.len());

        let start = Instant::now();
        let qp = assemble_h(&density, &kernel, &centers, alpha, sched.lambda, &f.quadrature)?;
        qp.save(&layout.fit())?;
        wall.insert("assemble".to_string(), elapsed(start));

        let start = Instant::now();
        let solved = solve(&qp, &f.solver)?;
        solved.save_json(&layout.fit_file("solve.json"))?;
        wall.insert("solve".to_string(), elapsed(start));
        log::info!(
            "solver: {:?} after {} iterations, objective {:.6e}",
            solved.termination,
            solved.iterations,
            solved.final_objective()
        );

        let a = project_psd(&solved.a);
        let learned = LearnedCoefficients::new(kernel.clone(), centers.clone(), a.clone(), solved.b.clone(), alpha)?
            .with_alpha_floor(f.alpha_floor);
        learned.save_json(&layout.fit_file("coefficients.json"))?;

        let truth = cfg.simulate.field.build(n)?;
        let projection_objective = match LearnedCoefficients::projection_point(&truth, kernel, centers, alpha) {
            Ok(p) => Some(qp.objective(p.a_matrix(), p.b_vector())),
            Err(e) => {
                log::warn!("projection of the true coefficients failed: {e}");
                None
            }
        };
        let summary = FitSummary {
            schedule: sched,
            fill_distance: fill,
            lp_objective: qp.objective(&a, &solved.b),
            fit_term: qp.fit_term(&a, &solved.b),
            regularizer: qp.regularizer(&a, &solved.b),
            projection_objective,
            termination: solved.termination,
            iterations: solved.iterations,
            psd_residual: solved.psd_residual,
            wall_times: wall,
        };
        write_json(&layout.fit_file("summary.json"), &summary)?;
        Ok(summary)
    };
    inner().map_err(|e| stage_error("fit", &layout.fit(), e))
}

/// A random smooth test function `c₀ + c₁ cos(ω·x + κt + φ) + c₂ exp(−‖x − μ‖²/2s²)`.
fn test_function<R: Rng>(rng: &mut R, n: usize) -> impl Fn(f64, &[f64]) -> f64 + Sync + use<R> {
    let c: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)];
    let omega: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (kappa, phi, s) = (rng.random_range(-2.0..2.0), rng.random_range(0.0..6.3), rng.random_range(0.3..1.5));
    move |t, x| {
        let phase: f64 = omega.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + kappa * t + phi;
        let r2: f64 = mu.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
        c[0] + c[1] * phase.cos() + c[2] * (-r2 / (2.0 * s * s)).exp()
    }
}

fn save_grid(g: &GridDensity, dir: &Path, name: &str) -> Result<()> {
    g.save(&dir.join(format!("{name}.csv")), &dir.join(format!("{name}.json")))
}

#[derive(Serialize, Deserialize)]
struct Validation {
    e: f64,
    e_floor: f64,
    loss_l: f64,
    observation_gap: Vec<GapPair>,
}

/// Forward-solves with the true and learned coefficients, evaluates the
/// metrics and writes `validate/` and `report.json`.
pub fn validate_stage(cfg: &Config, out: &Path) -> Result<RunReport> {
    let layout = RunLayout::new(out);
    let inner = || -> Result<RunReport> {
        std::fs::create_dir_all(layout.validate())?;
        let start = Instant::now();
        let obs = ObservationSet::load(&layout.data())?;
        let summary: FitSummary = read_json(&layout.fit_file("summary.json"))?;
        let learned = LearnedCoefficients::load_json(&layout.fit_file("coefficients.json"))?;
        let (n, alpha) = (cfg.simulate.n, cfg.simulate.alpha);
        if learned.n() != n || obs.n() != n {
            return Err(Error::Config(format!(
                "artifacts have n = {}/{}; configuration has n = {n}",
                obs.n(),
                learned.n()
            )));
        }
        let lattice = validation_lattice(cfg)?;
        let law = &cfg.simulate.law;
        let law_density = |x: &[f64]| law.density(x).unwrap_or(0.0);
        let initial = normalized_initial(&lattice, law_density)?;
        let truth = cfg.simulate.field.build(n)?;
        let forward = |field: &dyn CoefficientField| {
            solve_fp(&FpProblem {
                field,
                alpha,
                lattice: lattice.clone(),
                initial: initial.clone(),
                dt: cfg.validate.dt,
                source: None,
            })
        };
        let p_ref = forward(truth.as_ref())?;
        let p_learned = forward(&learned)?;
        let e = p_learned.difference(&p_ref)?.l2_norm_sq();
        let e_floor = discretization_floor(truth.as_ref(), alpha, &lattice, law_density)?;

        let density = density_model(cfg, &obs, summary.schedule.bandwidth)?;
        let p_hat = density.on_lattice(&lattice)?;
        let loss = loss_l(&p_hat, &p_ref)?;

        let mut rng = ChaCha20Rng::seed_from_u64(cfg.simulate.seed);
        rng.set_stream(1);
        let mut gaps = Vec::with_capacity(cfg.validate.observation_functions);
        for _ in 0..cfg.validate.observation_functions {
            let f = test_function(&mut rng, n);
            let (lhs, rhs) = observation_gap(f, &p_learned, &p_ref)?;
            gaps.push(GapPair { lhs, rhs });
        }
        let gap_holds = gaps.iter().all(|g| g.lhs <= g.rhs + 1e-10);
        if !gap_holds {
            log::warn!("observation gap exceeded its bound");
        }

        let dir = layout.validate();
        save_grid(&p_ref, &dir, "p_ref")?;
        save_grid(&p_learned, &dir, "p_learned")?;
        save_grid(&p_hat, &dir, "p_hat")?;
        write_json(
            &layout.validate_file("validation.json"),
            &Validation {
                e,
                e_floor,
                loss_l: loss,
                observation_gap: gaps.clone(),
            },
        )?;

        let mut wall = summary.wall_times.clone();
        wall.insert("validate".to_string(), elapsed(start));
        let artifacts: BTreeMap<String, String> = [
            ("config", "config.toml"),
            ("observations", "data/observations.csv"),
            ("manifest", "data/manifest.json"),
            ("qp", "fit/qp.json"),
            ("qp_h", "fit/qp_h.bin"),
            ("solve", "fit/solve.json"),
            ("coefficients", "fit/coefficients.json"),
            ("fit_summary", "fit/summary.json"),
            ("p_ref", "validate/p_ref.csv"),
            ("p_learned", "validate/p_learned.csv"),
            ("p_hat", "validate/p_hat.csv"),
            ("validation", "validate/validation.json"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            n,
            seed: obs.seed(),
            alpha,
            schedule: summary.schedule.clone(),
            fill_distance: summary.fill_distance,
            loss_l: loss,
            lp_objective: summary.lp_objective,
            fit_term: summary.fit_term,
            regularizer: summary.regularizer,
            projection_objective: summary.projection_objective,
            solver_termination: summary.termination,
            solver_iterations: summary.iterations,
            psd_residual: summary.psd_residual,
            e,
            e_floor,
            observation_gap: gaps,
            gap_holds,
            wall_times: wall,
            artifacts,
        };
        write_json(&layout.report(), &report)?;
        Ok(report)
    };
    inner().map_err(|e| stage_error("validate", &layout.validate(), e))
}

/// `simulate → fit → validate` into `out`.
pub fn run(cfg: &Config, out: &Path) -> Result<RunReport> {
    let start = Instant::now();
    simulate_stage(cfg, out)?;
    let simulate_time = elapsed(start);
    fit_stage(cfg, out)?;
    let mut report = validate_stage(cfg, out)?;
    report.wall_times.insert("simulate".to_string(), simulate_time);
    write_json(&RunLayout::new(out).report(), &report)?;
    Ok(report)
}

/// Loads the config at `path` (defaults when `None`), applies overrides and runs.
pub fn run_from_path(path: Option<&Path>, overrides: &Overrides, out: &Path) -> Result<RunReport> {
    let mut cfg = Config::load(path)?;
    cfg.apply(overrides)?;
    run(&cfg, out)
}

/// Loads the persisted program and solver output of a fitted run.
pub fn load_fit(out: &Path) -> Result<(QuadraticProgram, SolveReport)> {
    let layout = RunLayout::new(out);
    Ok((
        QuadraticProgram::load(&layout.fit())?,
        SolveReport::load_json(&layout.fit_file("solve.json"))?,
    ))
}
