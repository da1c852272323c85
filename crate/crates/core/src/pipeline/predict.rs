//! Frozen pathway outputs per stock-day and the routing rule applied to them.

use crate::evalsuite::{directional_accuracy, rmse};
use crate::nodeformer::blend;
use crate::regime::{route, AnomalyScores, Pathway};

use super::PreparedData;

/// How pathway outputs turn into one forecast.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selector {
    /// `y^N` below the threshold, `α·y^N + (1 − α)·y^E` at or above it.
    Dual,
    /// One conditioned pathway; its regime flag follows the threshold.
    Conditioned,
    /// One pathway, no routing.
    Plain,
}

/// Outputs `[stock][day][horizon]` over a day range; `NaN` where absent.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTable {
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_horizons: usize,
    /// Normal pathway, or the conditioned pathway with its flag at 0.
    pub primary: Vec<f64>,
    /// Event pathway, or the conditioned pathway with its flag at 1.
    pub secondary: Option<Vec<f64>>,
}

impl PredictionTable {
    pub fn new(n_stocks: usize, n_days: usize, n_horizons: usize, with_secondary: bool) -> Self {
        let len = n_stocks * n_days * n_horizons;
        Self {
            n_stocks,
            n_days,
            n_horizons,
            primary: vec![f64::NAN; len],
            secondary: with_secondary.then(|| vec![f64::NAN; len]),
        }
    }

    pub fn index(&self, stock: usize, day: usize, k: usize) -> usize {
        (stock * self.n_days + day) * self.n_horizons + k
    }

    pub fn primary(&self, stock: usize, day: usize, k: usize) -> Option<f64> {
        let v = self.primary[self.index(stock, day, k)];
        v.is_finite().then_some(v)
    }

    pub fn secondary(&self, stock: usize, day: usize, k: usize) -> Option<f64> {
        let v = self.secondary.as_ref()?[self.index(stock, day, k)];
        v.is_finite().then_some(v)
    }

    /// Forecast under `(τ, α)` for a stock-day whose anomaly score is `e`.
    pub fn pick(&self, sel: Selector, stock: usize, day: usize, k: usize, e: Option<f64>, tau: f64, alpha: f64) -> Option<f64> {
        let yn = self.primary(stock, day, k)?;
        let anomalous = e.is_some_and(|e| route(e, tau) == Pathway::Event);
        match sel {
            Selector::Plain => Some(yn),
            Selector::Dual if anomalous => Some(blend(yn, self.secondary(stock, day, k)?, alpha)),
            Selector::Conditioned if anomalous => self.secondary(stock, day, k),
            _ => Some(yn),
        }
    }
}

/// Realised cross-sectional `(RMSE, DA ∈ [0, 1])` of the forecasts made on
/// `day` for `day + h`, or `None` when no stock can be scored.
#[allow(clippy::too_many_arguments)]
pub fn day_outcome(
    table: &PredictionTable,
    sel: Selector,
    data: &PreparedData,
    scores: Option<&AnomalyScores>,
    day: usize,
    (k, h): (usize, usize),
    tau: f64,
    alpha: f64,
) -> Option<(f64, f64)> {
    if day + h >= data.n_days() {
        return None;
    }
    let (mut pred, mut actual, mut prev) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..data.n_stocks() {
        let e = scores.and_then(|s| s.get(i, day));
        let (Some(p), Some(y), Some(y0)) =
            (table.pick(sel, i, day, k, e, tau, alpha), data.target(i, day + h), data.target(i, day))
        else {
            continue;
        };
        pred.push(p);
        actual.push(y);
        prev.push(y0);
    }
    if pred.is_empty() {
        return None;
    }
    let r = rmse(&pred, &actual).ok()?;
    let da = directional_accuracy(&pred, &actual, &prev).ok()? / 100.0;
    Some((r, da))
}
