use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use area_core::config::LoadedConfig;
use area_core::experiment::{
    build_problem, constants_report, parse_grid, run_experiment, run_sweep, write_summary_csv, ExperimentReport,
};
use area_core::verify::{run_suite, Effort, SuiteKind};
use clap::{Parser, Subcommand};

/// Asynchronous federated optimization simulator.
#[derive(Parser)]
#[command(name = "area", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.csv, summary.csv, report.json and checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configuration over a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=lo:hi:logN` or `key=v1,v2,..`; repeat for a product grid.
        #[arg(long, required = true)]
        grid: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check structural invariants and convergence rates; prints JSON.
    Verify {
        #[arg(long, default_value = "all")]
        suite: SuiteKind,
        /// Smaller iteration counts and trial numbers.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Derived quantities of a configuration.
    Report {
        #[command(subcommand)]
        what: ReportKind,
    },
}

#[derive(Subcommand)]
enum ReportKind {
    /// γ, D, p_min, q̄ and the optimal server rate.
    Constants {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<LoadedConfig> {
    let mut loaded = LoadedConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        loaded.config.seed = seed;
    }
    Ok(loaded)
}

fn print_summary(reports: &[ExperimentReport]) -> Result<()> {
    let rows: Vec<_> = reports.iter().filter_map(|r| r.summary_row()).collect();
    write_summary_csv(std::io::stdout().lock(), &rows)?;
    for r in reports {
        let diverged = r.trials.iter().filter(|t| t.diverged).count();
        if diverged > 0 {
            log::warn!("{} alpha={:?}: {diverged} of {} trials diverged", r.method, r.alpha, r.trials.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let loaded = load(&config, seed)?;
            let report = run_experiment(&loaded)?;
            if let Some(dir) = &out {
                report
                    .write_outputs(dir)
                    .with_context(|| format!("writing {}", dir.display()))?;
            }
            print_summary(std::slice::from_ref(&report))?;
        }
        Command::Sweep { config, grid, seed, out } => {
            let loaded = load(&config, seed)?;
            let axes = grid.iter().map(|g| parse_grid(g)).collect::<area_core::Result<Vec<_>>>()?;
            let reports = run_sweep(&loaded, &axes, out.as_deref())?;
            print_summary(&reports)?;
        }
        Command::Verify { suite, quick, seed } => {
            let effort = if quick { Effort::quick() } else { Effort::full() };
            let results = run_suite(suite, effort, seed)?;
            println!("{}", serde_json::to_string_pretty(&results)?);
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report {
            what: ReportKind::Constants { config },
        } => {
            let loaded = load(&config, None)?;
            let problem = build_problem(&loaded.config)?;
            let report = constants_report(&loaded.config, &problem)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
