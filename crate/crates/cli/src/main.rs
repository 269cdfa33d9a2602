use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgne::experiment::{load_config, tune_experiment, validate_experiment};
use sgne::{run_experiment, ExperimentError, Overrides, RunStatus};

/// Stochastic Nash equilibrium seeking experiments.
#[derive(Parser)]
#[command(name = "sgne", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (solver, seed) replication and write CSVs plus manifest.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        outdir: Option<PathBuf>,
        /// Replace the configured seeds by this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Worker threads (SGNE_THREADS takes precedence).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the configuration and the game without running.
    Validate { config: PathBuf },
    /// Print the instability-tuned steps of each solver.
    Tune { config: PathBuf },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, ExperimentError> {
    match std::env::var("SGNE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ExperimentError::Validation(format!("SGNE_THREADS = {v:?} is not a positive integer"))),
        },
        Err(_) => Ok(flag),
    }
}

fn status_text(s: RunStatus) -> String {
    match s {
        RunStatus::Converged => "converged".into(),
        RunStatus::Budget => "budget exhausted".into(),
        RunStatus::Diverged { iteration } => format!("diverged at {iteration}"),
    }
}

fn execute(command: Command) -> Result<i32, ExperimentError> {
    match command {
        Command::Run { config, outdir, seed_override, threads: flag } => {
            let cfg = load_config(&config)?;
            let overrides = Overrides { outdir, seed: seed_override, threads: threads(flag)? };
            let outcome = run_experiment(cfg, &overrides)?;
            for run in &outcome.manifest.runs {
                println!(
                    "{} seed {}: {} after {} iterations, residual {:.3e} -> {}",
                    run.solver,
                    run.seed,
                    status_text(run.status),
                    run.iterations,
                    run.final_residual,
                    outcome.outdir.join(&run.file).display()
                );
                for w in &run.warnings {
                    eprintln!("warning: {} seed {}: {w}", run.solver, run.seed);
                }
            }
            if outcome.all_diverged() {
                eprintln!("error: every replication diverged");
            }
            Ok(outcome.exit_code())
        }
        Command::Validate { config } => {
            let report = validate_experiment(&load_config(&config)?)?;
            for c in &report.game.checks {
                println!("{:<26} {:<9} {}", c.name, format!("{:?}", c.outcome).to_lowercase(), c.detail);
            }
            for (kind, warnings) in &report.solvers {
                for w in warnings {
                    println!("warning: {kind}: {w}");
                }
            }
            Ok(if report.passed() { 0 } else { 2 })
        }
        Command::Tune { config } => {
            for r in tune_experiment(&load_config(&config)?)? {
                let s = &r.config.step.steps;
                let scale = r.tuned.map(|t| format!("{:e}", t.step)).unwrap_or_else(|| "fixed".into());
                println!("{}: scale {scale} alpha {:?} nu {:?} sigma {:?}", r.config.kind, s.alpha, s.nu, s.sigma);
                if r.tuned.is_some_and(|t| t.no_instability) {
                    println!("  no instability observed on the grid");
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
