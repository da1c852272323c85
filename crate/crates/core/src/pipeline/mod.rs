//! Staged training, chronological splits, checkpoints and ablations.

pub mod ablation;
mod checkpoint;
mod config;
mod data;
mod env;
mod evaluate;
mod predict;
mod split;
mod system;
mod windows;

pub use checkpoint::{
    encode_tensors, load_checkpoint, save_checkpoint, Checkpoint, Manifest, TensorEntry, FORMAT_VERSION, MANIFEST_FILE,
    RNG_FILE, TENSOR_FILE,
};
pub use config::{
    Ablation, AeSettings, ControllerSettings, DataSource, FinetuneSettings, PathwaySettings, RunConfig,
};
pub use data::{PreparedData, TrainStats, STABLE_VIX_PERCENTILE};
pub use env::ForecastEnv;
pub use evaluate::{build_report, Evaluation};
pub use predict::{PredictionTable, Selector};
pub use split::Splits;
pub use system::{parse_stages, Dataset, StageLog, System};
pub use windows::{sweep, tiling, TokenSources, MIN_WINDOW};

use thiserror::Error;

use crate::control::ControlError;
use crate::evalsuite::EvalError;
use crate::marketdata::MarketError;
use crate::nodeformer::ModelError;
use crate::regime::RegimeError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("leakage: {what} would use day {last_day}, training ends before day {train_end}")]
    Leakage {
        what: String,
        last_day: usize,
        train_end: usize,
    },
    #[error("stage order: {0}")]
    StageOrder(String),
    #[error("resume: {0}")]
    Resume(String),
    #[error("checkpoint was written for config {found}, this run has {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("parameters changed during frozen evaluation")]
    FrozenViolation,
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Regime(#[from] RegimeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numeric(#[from] numcore::NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Broken invariants and leakage, as opposed to numeric failures or
    /// plain usage mistakes.
    pub fn is_invariant(&self) -> bool {
        match self {
            PipelineError::Leakage { .. }
            | PipelineError::StageOrder(_)
            | PipelineError::Resume(_)
            | PipelineError::ConfigMismatch { .. }
            | PipelineError::Corrupt(_)
            | PipelineError::FrozenViolation => true,
            PipelineError::Model(ModelError::Leakage { .. }) => true,
            _ => false,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PipelineError::Numeric(_)
                | PipelineError::Model(ModelError::Numeric(_))
                | PipelineError::Control(ControlError::NonFinite(_) | ControlError::Numeric(_))
                | PipelineError::Regime(RegimeError::Numeric(_))
        )
    }
}
