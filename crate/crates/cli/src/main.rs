use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use ergodic_hw::config::{ExperimentConfig, ExperimentKind};
use ergodic_hw::experiments;

/// Ergodic control of multi-class many-server queues: solvers, simulators
/// and experiment harness.
///
/// Exit status: 0 on success, 1 on error, 2 when a property check is flagged.
#[derive(Parser, Debug)]
#[command(name = "ergodic-hw", version)]
struct Cli {
    /// One of: solve-hjb, simulate-queue, simulate-diffusion, convergence,
    /// truncation-sweep, epsilon-bound, vanishing-discount, lyapunov-check,
    /// moment-check.
    #[arg(value_parser = parse_kind)]
    kind: ExperimentKind,
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: ergodic_hw::Error| e.to_string())
}

fn run(cli: &Cli) -> anyhow::Result<experiments::Outcome> {
    let mut config = ExperimentConfig::load(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    experiments::run(cli.kind, &config, &cli.out).with_context(|| format!("running {}", cli.kind))
}

fn main() -> ExitCode {
    // clap's own status for usage errors is 2, which is reserved for flags.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            if outcome.flagged() {
                for flag in &outcome.flags {
                    eprintln!("FLAG: {flag}");
                }
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
