//! Graph-biased node transformer pathways.
//!
//! Attention runs over `N·T` tokens laid out stock-major (`row = i·T + t`).
//! Token `(i,t)` may attend to `(j,t')` only for `t' ≤ t`; the allowed logits
//! receive `ln(E + ε)` from an edge matrix that layer 0 takes from sector and
//! training-return structure and later layers recompute from token states.

mod context;
mod encoding;
mod graph;
mod loss;
mod pathway;

pub use context::{sentiment_spike, vix_level, ContextSources, ContextTable, EventContext, FIXED_CONTEXT_DIM};
pub use encoding::{temporal_encoding, temporal_encoding_table};
pub use graph::{edge_prior, init_edges, pearson, refine_edge};
pub use loss::{blend, composite_loss, LossParts, LossWeights, Targets};
pub use pathway::{PathwayModel, PathwayOutput, Variant, WindowInput};

use thiserror::Error;

/// Width of the event context vector.
pub const CONTEXT_DIM: usize = 12;
/// Width of one regime-embedding row.
pub const REGIME_EMBED_DIM: usize = 4;
/// Number of VIX levels indexing the regime embedding.
pub const VIX_LEVELS: usize = 3;
/// `[e/τ₀, regime flag]` appended by the single conditioned pathway.
pub const REGIME_SIGNAL_DIM: usize = 2;
/// Width of the learned stock identity embedding.
pub const STOCK_EMBED_DIM: usize = 8;
/// Added inside `ln(E + ε)` so zero edges stay finite.
pub const EDGE_EPS: f64 = 1e-6;
pub const HORIZONS: [usize; 3] = [1, 5, 20];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Shape(String),
    #[error("{variant:?} pathway {problem}")]
    VariantMismatch { variant: Variant, problem: &'static str },
    #[error("leakage: edge correlations would use day {last_day}, training ends before day {train_end}")]
    Leakage { last_day: usize, train_end: usize },
    #[error(transparent)]
    Numeric(#[from] numcore::NumError),
}

/// Architecture of one pathway.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Maximum window length in days.
    pub seq_len: usize,
    pub dropout: f64,
    pub horizons: Vec<usize>,
    /// Predict `close_t + delta` rather than the level itself.
    pub anchor: bool,
}

impl ModelConfig {
    /// Table-I sizes.
    pub fn paper() -> Self {
        Self {
            d_model: 512,
            n_layers: 6,
            n_heads: 8,
            d_ff: 2048,
            seq_len: 252,
            dropout: 0.1,
            horizons: HORIZONS.to_vec(),
            anchor: true,
        }
    }

    /// Sizes that train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            seq_len: 64,
            ..Self::paper()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Shape(format!(
                "d_model {} must be a positive multiple of the head count {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.seq_len == 0 || self.horizons.is_empty() {
            return Err(ModelError::Shape("layers, d_ff, sequence length and horizons must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Shape(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}
