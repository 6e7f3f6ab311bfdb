//! `fokker-fit`: simulate, fit and validate SDE coefficient models from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fokker_fit::pipeline::{self, Config, Overrides, RunLayout};
use fokker_fit::{Error, Result};

#[derive(Parser)]
#[command(name = "fokker-fit", version, about = "Learn drift and diffusion of an SDE from sampled marginals")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paths and write `<out>/data`.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit coefficients to `<out>/data`, writing `<out>/fit`.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-solve and score a fitted run, writing `<out>/validate` and `<out>/report.json`.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the scheduled parameters as JSON.
    Schedule {
        #[command(flatten)]
        common: Common,
        /// Also write `schedule.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate finished runs into `<out>/table.csv` and `<out>/summary.json`.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// simulate, fit and validate in one go.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Explicit `--config`, else the config saved in the run directory, else defaults.
fn resolve_config(common: &Common, out: Option<&Path>) -> Result<Config> {
    let saved = out.map(|o| RunLayout::new(o).config()).filter(|p| p.is_file());
    let mut cfg = Config::load(common.config.as_deref().or(saved.as_deref()))?;
    cfg.apply(&Overrides {
        seed: common.seed,
        epsilon: common.epsilon,
        delta: common.delta,
    })?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate { common, out } => {
            let cfg = resolve_config(&common, None)?;
            let obs = pipeline::simulate_stage(&cfg, &out)?;
            log::info!("wrote {} x {} samples to {}", obs.m(), obs.samples_per_time(), out.display());
            Ok(())
        }
        Command::Fit { common, out } => {
            let cfg = resolve_config(&common, Some(&out))?;
            print_json(&pipeline::fit_stage(&cfg, &out)?)
        }
        Command::Validate { common, out } => {
            let cfg = resolve_config(&common, Some(&out))?;
            print_json(&pipeline::validate_stage(&cfg, &out)?)
        }
        Command::Schedule { common, out } => {
            let cfg = resolve_config(&common, None)?;
            let s = pipeline::effective_schedule(&cfg)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("schedule.json"), serde_json::to_string_pretty(&s)?)?;
            }
            print_json(&s)
        }
        Command::Report { runs, out } => print_json(&pipeline::report(&runs, &out)?),
        Command::Run { common, out } => {
            let cfg = resolve_config(&common, None)?;
            print_json(&pipeline::run(&cfg, &out)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Stage { artifacts, .. } = &e {
                for a in artifacts {
                    eprintln!("  partial artifact: {}", a.display());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
