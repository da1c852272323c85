//! Market data ingestion and feature engineering.
//!
//! Per-stock features (17 per day, indices in [`feat`]):
//! OHLCV, SMA 5/10/20, EMA 5/10/20, RSI-14, MACD histogram, daily return,
//! log return, 20-day volatility of log returns, and the day's signed
//! sentiment score. Router features are one 6-vector per day.

mod impute;
pub mod indicators;
mod normalize;
mod panel;
pub mod router;

pub use impute::{impute, impute_split, ImputeMode, MAX_INTERPOLATED_GAP};
pub use indicators::compute_indicators;
pub use normalize::{expanding_normalize, expanding_zscores, fit_stats, normalize_split, NormMode, NormStats, MIN_STD};
pub use panel::{
    attach_earnings, attach_market, load_dataset, load_ohlcv_csv, write_dataset, Bar, EarningsEvent, MarketSeries,
    OhlcvPanel, EARNINGS_FILE, MARKET_FILE, OHLCV_FILE, SECTOR_FILE,
};
pub use router::build_router_features;

use thiserror::Error;

pub const N_FEATURES: usize = 17;
pub const N_ROUTER: usize = 6;
/// Leading days of each listed series without a full MACD signal.
pub const WARMUP: usize = 33;

pub mod feat {
    pub const OPEN: usize = 0;
    pub const HIGH: usize = 1;
    pub const LOW: usize = 2;
    pub const CLOSE: usize = 3;
    pub const VOLUME: usize = 4;
    pub const SMA5: usize = 5;
    pub const SMA10: usize = 6;
    pub const SMA20: usize = 7;
    pub const EMA5: usize = 8;
    pub const EMA10: usize = 9;
    pub const EMA20: usize = 10;
    pub const RSI: usize = 11;
    pub const MACD: usize = 12;
    pub const RETURN: usize = 13;
    pub const LOG_RETURN: usize = 14;
    pub const VOLATILITY: usize = 15;
    pub const SENTIMENT: usize = 16;
}

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "open", "high", "low", "close", "volume", "sma5", "sma10", "sma20", "ema5", "ema10", "ema20", "rsi14", "macd_hist",
    "return", "log_return", "vol20", "sentiment",
];

pub const ROUTER_NAMES: [&str; N_ROUTER] = ["vol5", "vol20", "vix_change", "corr_change", "abs_sentiment", "post_velocity"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("io: {0}")]
    Io(String),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("calendar out of order: {0}")]
    Ordering(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("ticker {0} has no sector")]
    MissingSector(String),
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("no observations to impute for {0}")]
    Unimputable(String),
    #[error("series for {0} has gaps; impute first")]
    NotImputed(String),
    #[error("pairwise correlation needs at least two stocks")]
    SingleStock,
    #[error("configuration: {0}")]
    Config(String),
}

/// Dense feature storage for all stocks and days.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePanel {
    pub n_stocks: usize,
    pub n_days: usize,
    /// `[(stock * n_days + day) * N_FEATURES + f]`
    pub values: Vec<f64>,
    /// `[stock * n_days + day]`; false inside warm-up and before listing.
    pub valid: Vec<bool>,
    /// `[day * N_ROUTER + f]`
    pub router: Vec<f64>,
    pub router_valid: Vec<bool>,
    /// Per `(stock, feature)`: set when normalisation met a degenerate spread.
    pub constant: Vec<bool>,
    pub router_constant: Vec<bool>,
}

impl FeaturePanel {
    pub fn empty(n_stocks: usize, n_days: usize) -> Self {
        Self {
            n_stocks,
            n_days,
            values: vec![0.0; n_stocks * n_days * N_FEATURES],
            valid: vec![false; n_stocks * n_days],
            router: vec![0.0; n_days * N_ROUTER],
            router_valid: vec![false; n_days],
            constant: vec![false; n_stocks * N_FEATURES],
            router_constant: vec![false; N_ROUTER],
        }
    }

    pub fn row(&self, stock: usize, day: usize) -> &[f64] {
        let k = (stock * self.n_days + day) * N_FEATURES;
        &self.values[k..k + N_FEATURES]
    }

    pub fn row_mut(&mut self, stock: usize, day: usize) -> &mut [f64] {
        let k = (stock * self.n_days + day) * N_FEATURES;
        &mut self.values[k..k + N_FEATURES]
    }

    pub fn router_row(&self, day: usize) -> &[f64] {
        &self.router[day * N_ROUTER..(day + 1) * N_ROUTER]
    }

    pub fn is_valid(&self, stock: usize, day: usize) -> bool {
        self.valid[stock * self.n_days + day]
    }

    /// Stock row and router row both usable.
    pub fn is_complete(&self, stock: usize, day: usize) -> bool {
        self.is_valid(stock, day) && self.router_valid[day]
    }

    /// The 23-dimensional concatenation `[stock features ‖ router features]`.
    pub fn joint_row(&self, stock: usize, day: usize) -> [f64; N_FEATURES + N_ROUTER] {
        let mut out = [0.0; N_FEATURES + N_ROUTER];
        out[..N_FEATURES].copy_from_slice(self.row(stock, day));
        out[N_FEATURES..].copy_from_slice(self.router_row(day));
        out
    }
}

/// Raw features for an imputed panel: indicators plus router vectors.
pub fn raw_features(panel: &OhlcvPanel) -> Result<FeaturePanel, MarketError> {
    let mut fp = compute_indicators(panel)?;
    build_router_features(panel, &mut fp)?;
    Ok(fp)
}
