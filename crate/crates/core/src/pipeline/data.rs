//! Imputed, featurised and normalised data plus every statistic frozen at the
//! training boundary.

use crate::marketdata::{
    impute_split, fit_stats, normalize_split, raw_features, FeaturePanel, NormStats, OhlcvPanel,
    MIN_STD,
};
use crate::regime::percentile;

use super::{PipelineError, Splits};

/// Stable days for stage 1 have VIX below this training percentile.
pub const STABLE_VIX_PERCENTILE: f64 = 75.0;

/// Statistics fitted on the training split only.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    pub vix_stable_cut: f64,
    /// Lower and upper VIX tercile boundaries.
    pub vix_terciles: [f64; 2],
    pub sentiment_std: f64,
    /// Per stock: mean and std of the close, the target normalisation.
    pub close_mean: Vec<f64>,
    pub close_std: Vec<f64>,
}

impl TrainStats {
    pub fn fit(panel: &OhlcvPanel, splits: &Splits, days: std::ops::Range<usize>) -> Result<Self, PipelineError> {
        splits.guard_fit("training statistics", &days)?;
        if !panel.has_market() {
            return Err(PipelineError::Config("market series (VIX, sentiment) are required".into()));
        }
        let vix = &panel.market.vix[days.clone()];
        let sentiment = &panel.market.sentiment[days.clone()];
        let mut close_mean = Vec::with_capacity(panel.n_stocks());
        let mut close_std = Vec::with_capacity(panel.n_stocks());
        for i in 0..panel.n_stocks() {
            let c: Vec<f64> = days.clone().filter_map(|t| panel.close(i, t)).collect();
            let (m, s) = mean_std(&c);
            close_mean.push(m);
            close_std.push(if s < MIN_STD { 1.0 } else { s });
        }
        Ok(Self {
            vix_stable_cut: percentile(vix, STABLE_VIX_PERCENTILE),
            vix_terciles: [percentile(vix, 100.0 / 3.0), percentile(vix, 200.0 / 3.0)],
            sentiment_std: mean_std(sentiment).1.max(MIN_STD),
            close_mean,
            close_std,
        })
    }

    /// 0 = low, 1 = medium, 2 = high volatility.
    pub fn vix_tercile(&self, vix: f64) -> usize {
        crate::nodeformer::vix_level(vix, self.vix_terciles)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    /// Imputed panel.
    pub panel: OhlcvPanel,
    pub splits: Splits,
    /// Normalised features: expanding before the training boundary, frozen after.
    pub features: FeaturePanel,
    pub norm: NormStats,
    pub stats: TrainStats,
}

impl PreparedData {
    pub fn prepare(panel: &OhlcvPanel, splits: Splits) -> Result<Self, PipelineError> {
        if panel.n_days() != splits.n_days {
            return Err(PipelineError::Config(format!(
                "splits cover {} days, panel has {}",
                splits.n_days,
                panel.n_days()
            )));
        }
        panel.validate()?;
        let train_end = splits.train_end();
        let panel = impute_split(panel, train_end)?;
        let raw = raw_features(&panel)?;
        splits.guard_fit("normalisation statistics", &(0..train_end))?;
        let norm = fit_stats(&raw, train_end);
        let features = normalize_split(&raw, train_end, Some(&norm));
        let stats = TrainStats::fit(&panel, &splits, 0..train_end)?;
        Ok(Self {
            panel,
            splits,
            features,
            norm,
            stats,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.panel.n_stocks()
    }

    pub fn n_days(&self) -> usize {
        self.panel.n_days()
    }

    pub fn vix(&self, day: usize) -> f64 {
        self.panel.market.vix[day]
    }

    pub fn is_stable(&self, day: usize) -> bool {
        self.vix(day) < self.stats.vix_stable_cut
    }

    /// Joint 23-vectors of complete rows on the given days, day-major.
    pub fn rows_on(&self, days: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for t in days {
            for i in 0..self.n_stocks() {
                if self.features.is_complete(i, t) {
                    out.push(self.features.joint_row(i, t).to_vec());
                }
            }
        }
        out
    }

    /// Stage-1 training rows: stable training days in chronological order.
    pub fn stable_rows(&self) -> Vec<Vec<f64>> {
        self.rows_on(self.splits.train.clone().filter(|&t| self.is_stable(t)))
    }

    pub fn train_rows(&self) -> Vec<Vec<f64>> {
        self.rows_on(self.splits.train.clone())
    }

    /// Close normalised with the frozen training statistics of its stock.
    pub fn target(&self, stock: usize, day: usize) -> Option<f64> {
        let c = self.panel.close(stock, day)?;
        Some((c - self.stats.close_mean[stock]) / self.stats.close_std[stock])
    }

    pub fn denormalize(&self, stock: usize, value: f64) -> f64 {
        value * self.stats.close_std[stock] + self.stats.close_mean[stock]
    }

    /// Normalised close of a featurised row, or `None` inside warm-up.
    pub fn anchor(&self, stock: usize, day: usize) -> Option<f64> {
        self.features.is_valid(stock, day).then(|| self.target(stock, day)).flatten()
    }

    /// First day every stock-independent input (router features) is usable.
    pub fn first_usable_day(&self) -> usize {
        (0..self.n_days())
            .find(|&t| self.features.router_valid[t] && (0..self.n_stocks()).any(|i| self.features.is_valid(i, t)))
            .unwrap_or(self.n_days())
    }
}
