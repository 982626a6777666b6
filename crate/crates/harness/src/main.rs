use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cstrat_harness::config::Config;
use cstrat_harness::lemmas::validate_lemmas;
use cstrat_harness::runner::{emit_error, run_command, sweep_command, SweepAxis};
use cstrat_harness::HarnessError;

/// Strategic classification with causal label effects: simulation,
/// learning, and validation experiments.
#[derive(Parser)]
#[command(name = "cstrat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method over the configured repetitions.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one experimental axis, one run directory per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// cost | clean_ratio | sensitivity
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo and discretized checks of the induced-shift identities.
    ValidateLemmas {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => ExitCode::from(emit_error(&e) as u8),
    }
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let cfg = Config::load(&config)?;
            let summary = run_command(&cfg, &out, seed)?;
            println!(
                "completed {} ({} methods x {} repetitions) -> {}",
                summary.experiment,
                summary.methods.len(),
                summary.repetitions,
                out.display()
            );
            for (name, m) in &summary.methods {
                println!(
                    "  {name}: committed accuracy {:.1} +/- {:.1} (round {:.1})",
                    m.accuracy.mean, m.accuracy.stderr, m.committed_round_mean
                );
            }
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, axis, out, seed } => {
            let cfg = Config::load(&config)?;
            let axis: SweepAxis = axis.parse()?;
            sweep_command(&cfg, axis, &out, seed)?;
            println!("sweep complete -> {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateLemmas { out } => {
            let report = validate_lemmas(&out)?;
            for c in &report.checks {
                println!(
                    "{}: {} {:.6} (threshold {} {:.6})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.side,
                    c.threshold
                );
            }
            if report.all_pass {
                println!("all lemma checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{}", serde_json::json!({"error": "lemma checks failed"}));
                Ok(ExitCode::from(2))
            }
        }
    }
}
