//! Regime-aware stock forecasting.

pub mod blockcheck;
pub mod control;
pub mod evalsuite;
pub mod marketdata;
pub mod nodeformer;
pub mod pipeline;
pub mod regime;
pub mod synthgen;
