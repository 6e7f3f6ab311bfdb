use std::path::{Path, PathBuf};

use fokker_fit::pipeline::{
    self, centers_within_bytes, effective_schedule, report, run, schedule, validation_lattice, Config, FieldConfig, Overrides, RunReport,
};
use fokker_fit::Error;
use proptest::prelude::*;

/// Cheapest sensible run: M = 2, N = 10, a coarse validation lattice.
fn small_config(seed: u64, epsilon: f64) -> Config {
    let mut cfg = Config::default();
    cfg.simulate.seed = seed;
    cfg.fit.epsilon = epsilon;
    cfg.validate.nodes = 121;
    cfg.validate.time_steps = 10;
    cfg.validate.observation_functions = 5;
    cfg
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_matches_closed_forms(eps in 0.01f64..0.99, delta in 0.01f64..0.99, m in 1usize..4, n in 1usize..3, t_end in 0.2f64..3.0) {
        let s = schedule(eps, delta, m, n, t_end).unwrap();
        let mf = m as f64;
        let log_term = (1.0 / (delta * eps)).ln();
        prop_assert!(relative(s.bandwidth, (-(1.0 / (2.0 * mf)) * eps.ln()).exp()) <= 1e-12);
        prop_assert!(relative(s.lambda, log_term * eps * eps) <= 1e-12);
        let h = (log_term.sqrt() * eps).powf(1.0 / (2.0 * mf - 1.0)).min(1.0);
        prop_assert!(relative(s.h_q, h) <= 1e-12);
        let samples = (eps.powf(-(2.0 + n as f64 / (2.0 * mf))) + 0.5).floor() as usize;
        prop_assert_eq!(s.samples, samples.max(1));
        let times = ((eps.powf(-1.0 / mf) / 4.0 + 0.5).floor() as usize).max(2).max((2.0 * t_end).ceil() as usize);
        prop_assert_eq!(s.m, times);
    }

    #[test]
    fn schedule_is_monotone_in_epsilon(e1 in 0.01f64..0.9, ratio in 1.01f64..5.0, delta in 0.01f64..0.5) {
        let e2 = (e1 * ratio).min(0.99);
        let (fine, coarse) = (schedule(e1, delta, 1, 1, 1.0).unwrap(), schedule(e2, delta, 1, 1, 1.0).unwrap());
        prop_assert!(fine.samples >= coarse.samples);
        prop_assert!(fine.m >= coarse.m);
        prop_assert!(fine.bandwidth >= coarse.bandwidth);
        prop_assert!(fine.h_q <= coarse.h_q + 1e-15);
    }
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&small_config(1, 0.4), dir.path()).unwrap();
    for rel in report.artifacts.values() {
        assert!(dir.path().join(rel).is_file(), "missing {rel}");
    }
    assert!(dir.path().join("report.json").is_file());
    assert_eq!(RunReport::load(&dir.path().join("report.json")).unwrap(), report);
    assert!(report.gap_holds);
    assert!(report.e.is_finite() && report.e >= 0.0);
    assert!(report.psd_residual >= -1e-8);
    assert!(report.schedule.q.is_some_and(|q| q > 0));
    // the resolved configuration reproduces the run
    let saved = Config::load(Some(&dir.path().join("config.toml"))).unwrap();
    assert_eq!(saved, small_config(1, 0.4));
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(3, 0.4);
    let one = run(&cfg, &dir.path().join("a")).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let three = pool.install(|| run(&cfg, &dir.path().join("b"))).unwrap();
    assert_eq!(one.without_timings(), three.without_timings());
    for f in ["data/observations.csv", "fit/qp_h.bin", "fit/solve.json", "validate/p_learned.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

fn with_n(src: &Path, dst: &Path, n: usize) {
    std::fs::create_dir_all(dst).unwrap();
    let mut r = RunReport::load(&src.join("report.json")).unwrap();
    r.n = n;
    std::fs::write(dst.join("report.json"), serde_json::to_string(&r).unwrap()).unwrap();
}

#[test]
fn report_tables_and_trends() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = [0.45, 0.4, 0.35]
        .iter()
        .map(|eps| {
            let d = dir.path().join(format!("eps{eps}"));
            run(&small_config(2, *eps), &d).unwrap();
            d
        })
        .collect();

    let single = report(&runs[..1], &dir.path().join("single")).unwrap();
    assert_eq!(single.runs, 1);
    assert!(single.e.is_none());
    let table = std::fs::read_to_string(dir.path().join("single/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.starts_with("run,epsilon,delta,M,N,R,lambda,h_q,Q,loss_l,lp_objective,e,e_floor,gap_holds"));

    let three = report(&runs, &dir.path().join("three")).unwrap();
    assert_eq!(three.runs, 3);
    for fit in [three.loss_l, three.lp_objective, three.e] {
        let fit = fit.expect("slope for three distinct epsilon values");
        assert!(fit.slope.is_finite() && (0.0..=1.0).contains(&fit.r_squared));
        assert_eq!(fit.points, 3);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("three/summary.json")).unwrap()).unwrap();
    assert!(summary["note"].as_str().unwrap().contains("3 distinct"));

    let other = dir.path().join("two-d");
    with_n(&runs[0], &other, 2);
    let err = report(&[runs[1].clone(), other], &dir.path().join("mixed")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("mix dimensions"), "{err}");

    let missing = report(&[dir.path().join("nowhere")], &dir.path().join("x")).unwrap_err();
    assert_eq!(missing.exit_code(), 3);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let cases = [
        write("syntax.toml", "[fit\nepsilon = 0.1"),
        write("unknown.toml", "[fit]\nepsilonn = 0.1\n"),
        write("range.toml", "[fit]\nepsilon = 1.5\n"),
        write("dim.toml", "[simulate]\nn = 3\n"),
        write("point.toml", "[simulate]\nlaw = { kind = \"point\", x0 = [0.0] }\n"),
        write("law.toml", "[simulate]\nn = 2\n"),
    ];
    for path in &cases {
        let err = pipeline::run_from_path(Some(path), &Overrides::default(), &dir.path().join("out")).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{}: {err}", path.display());
    }
    let err = Config::load(Some(&dir.path().join("absent.toml"))).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let bad_override = Overrides {
        delta: Some(0.0),
        ..Overrides::default()
    };
    assert_eq!(Config::default().apply(&bad_override).unwrap_err().exit_code(), 2);
    let mut cfg = Config::default();
    cfg.simulate.field = FieldConfig::Constant { a: vec![1.0, 0.0], b: vec![0.0] };
    assert_eq!(run(&cfg, &dir.path().join("c")).unwrap_err().exit_code(), 2);
}

#[test]
fn stage_failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(1, 0.4);
    match pipeline::fit_stage(&cfg, dir.path()).unwrap_err() {
        Error::Stage { stage, .. } => assert_eq!(stage, "fit"),
        other => panic!("unexpected {other}"),
    }
    pipeline::simulate_stage(&cfg, dir.path()).unwrap();
    match pipeline::validate_stage(&cfg, dir.path()).unwrap_err() {
        Error::Stage { stage, source, .. } => {
            assert_eq!(stage, "validate");
            assert_eq!(source.exit_code(), 3);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn quadrature_budget_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(1, 0.4);
    cfg.fit.quadrature.max_panels = 4;
    let err = run(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    match err {
        Error::Stage { stage, artifacts, .. } => {
            assert_eq!(stage, "fit");
            assert!(artifacts.is_empty(), "{artifacts:?}");
        }
        other => panic!("unexpected {other}"),
    }
    // earlier stages stay on disk
    assert!(dir.path().join("data/observations.csv").is_file());
}

#[test]
fn caps_clamp_instead_of_failing() {
    let mut cfg = small_config(1, 0.4);
    cfg.fit.max_centers = 4;
    let scheduled = effective_schedule(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run(&cfg, dir.path()).unwrap();
    assert!(report.schedule.q.unwrap() <= 4);
    assert!(report.fill_distance > scheduled.h_q);

    cfg.validate.nodes = 241;
    cfg.validate.max_space_nodes = 100;
    assert_eq!(validation_lattice(&cfg).unwrap().counts, vec![100]);
}

#[test]
fn overrides_replace_scheduled_values() {
    let mut cfg = Config::default();
    cfg.simulate.times = Some(4);
    cfg.simulate.samples = Some(17);
    cfg.fit.bandwidth = Some(1.1);
    cfg.fit.lambda = Some(0.0);
    cfg.fit.fill_distance = Some(0.9);
    let s = effective_schedule(&cfg).unwrap();
    assert_eq!((s.m, s.samples, s.bandwidth, s.lambda, s.h_q), (4, 17, 1.1, 0.0, 0.9));
}

#[test]
fn memory_budget_bounds_the_center_count() {
    // 1 + qn + (qn)² entries squared, eight bytes each
    let bytes = |q: usize, n: usize| {
        let dim = 1 + q * n + (q * n).pow(2);
        dim * dim * 8
    };
    for n in 1..=2 {
        let q = centers_within_bytes(n, 1 << 24);
        assert!(bytes(q, n) <= 1 << 24 && bytes(q + 1, n) > 1 << 24, "n = {n}: {q}");
    }
    assert_eq!(centers_within_bytes(1, 8), 0);

    let mut cfg = small_config(1, 0.4);
    cfg.fit.quadrature.max_h_bytes = bytes(3, 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&cfg, dir.path()).unwrap().schedule.q, Some(3));

    cfg.fit.quadrature.max_work = 1.0;
    let err = run(&cfg, &dir.path().join("work")).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    assert!(format!("{err:?}").contains("multiply-adds"), "{err:?}");
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = Config::load(Some(&path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            effective_schedule(&cfg).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
