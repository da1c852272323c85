//! `regimeflow`: data generation, staged training, frozen evaluation,
//! ablation, gradient checks and report regeneration.
//!
//! Exit codes: 0 success, 1 usage, 2 invariant or leakage violation,
//! 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Root for default output directories when `--out` is absent.
pub const OUT_ROOT_VAR: &str = "REGIMEFLOW_OUT";

#[derive(Debug, Parser)]
#[command(name = "regimeflow", version, about = "Regime-aware stock forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources, applied in order: profile, file, `--set`, `--seed`.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Base hyperparameter profile: `desk` (default for new runs) or `paper`.
    #[arg(long)]
    pub profile: Option<String>,
    /// Flat `section.key = value` file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Single override, repeatable: `--set pathway.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed; also seeds the synthetic market.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: `$REGIMEFLOW_OUT/<command>` or `runs/<command>`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    fn is_empty(&self) -> bool {
        self.profile.is_none() && self.config.is_none() && self.overrides.is_empty() && self.seed.is_none()
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic market in the dataset CSV schema plus `regimes.csv`.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run training stages, writing a checkpoint after each.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `1-4`, `3,4`, ...; must continue from the resumed checkpoint.
        #[arg(long, default_value = "1-4")]
        stages: String,
        /// Checkpoint to continue from (default: the previous stage's
        /// checkpoint in the output directory, when present).
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
        /// Accept a checkpoint written under a different configuration.
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Evaluate a checkpoint on the test split with frozen weights.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Train and evaluate all four variants on each seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
    },
    /// Finite-difference gradient checks over every network block.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rebuild report files from stored forecasts of an `evaluate` run.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding `forecasts.csv`, `trajectory.csv` and
        /// `resolved_config.txt`.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Model label (default: the label stored in the input's `report.csv`).
        #[arg(long)]
        model: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData { cfg } => commands::gen_data(&cfg),
        Command::Train {
            cfg,
            stages,
            resume,
            allow_config_mismatch,
        } => commands::train(&cfg, &stages, resume, allow_config_mismatch),
        Command::Evaluate {
            cfg,
            checkpoint,
            allow_config_mismatch,
        } => commands::evaluate(&cfg, &checkpoint, allow_config_mismatch),
        Command::Ablate { cfg, seeds } => commands::ablate(&cfg, &seeds),
        Command::Gradcheck { cfg } => commands::gradcheck(&cfg),
        Command::Report { cfg, input, model } => commands::report(&cfg, &input, model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
