//! Event context for the event pathway.
//!
//! Per stock-day: a VIX level selecting a row of the trainable 3×4 regime
//! table, and eight fixed values `[spike flag, spike size, days to earnings,
//! past |surprise|, earnings-window flag, sector surprise, ē/τ₀, std_e/τ₀]`.

use numcore::Tensor;

use super::{CONTEXT_DIM, REGIME_EMBED_DIM};
use crate::marketdata::EarningsEvent;

pub const FIXED_CONTEXT_DIM: usize = CONTEXT_DIM - REGIME_EMBED_DIM;
/// Days-to-earnings saturates at one quarter.
pub const EARNINGS_HORIZON: usize = 63;
/// Days either side of an announcement flagged as its window.
pub const EARNINGS_WINDOW: usize = 2;
/// Sentiment spike threshold in training standard deviations.
pub const SPIKE_SIGMAS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventContext {
    /// 0 = low, 1 = medium, 2 = high VIX tercile.
    pub vix_level: usize,
    pub fixed: [f64; FIXED_CONTEXT_DIM],
}

impl EventContext {
    /// The full 12-vector given the regime embedding table `[3, 4]`.
    pub fn vector(&self, regime_table: &Tensor) -> [f64; CONTEXT_DIM] {
        let mut out = [0.0; CONTEXT_DIM];
        out[..REGIME_EMBED_DIM].copy_from_slice(regime_table.row_slice(self.vix_level));
        out[REGIME_EMBED_DIM..].copy_from_slice(&self.fixed);
        out
    }
}

pub fn vix_level(vix: f64, terciles: [f64; 2]) -> usize {
    if vix < terciles[0] {
        0
    } else if vix < terciles[1] {
        1
    } else {
        2
    }
}

/// `(flag, |S|/σ when flagged)`.
pub fn sentiment_spike(sentiment: f64, train_std: f64) -> (f64, f64) {
    let z = sentiment.abs() / train_std;
    if z > SPIKE_SIGMAS {
        (1.0, z)
    } else {
        (0.0, 0.0)
    }
}

/// Inputs, all frozen at the training boundary except the daily series.
#[derive(Clone, Copy, Debug)]
pub struct ContextSources<'a> {
    pub vix: &'a [f64],
    pub vix_terciles: [f64; 2],
    pub sentiment: &'a [f64],
    pub sentiment_std: f64,
    pub sectors: &'a [usize],
    pub earnings: &'a [EarningsEvent],
    /// Cross-stock mean and std of reconstruction errors per day (`NaN` allowed).
    pub error_mean: &'a [f64],
    pub error_std: &'a [f64],
    pub tau0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextTable {
    pub n_stocks: usize,
    pub n_days: usize,
    entries: Vec<EventContext>,
}

impl ContextTable {
    pub fn build(src: &ContextSources) -> Self {
        let n = src.sectors.len();
        let days = src.vix.len();
        let mut by_stock: Vec<Vec<EarningsEvent>> = vec![Vec::new(); n];
        for ev in src.earnings {
            if ev.stock < n {
                by_stock[ev.stock].push(*ev);
            }
        }
        for evs in &mut by_stock {
            evs.sort_by_key(|e| e.day);
        }
        let finite_or_zero = |v: f64| if v.is_finite() { v } else { 0.0 };
        let mut entries = Vec::with_capacity(n * days);
        for i in 0..n {
            let evs = &by_stock[i];
            for t in 0..days {
                let next = evs.iter().find(|e| e.day >= t);
                let days_to = next.map_or(EARNINGS_HORIZON, |e| (e.day - t).min(EARNINGS_HORIZON));
                let near = evs.iter().any(|e| e.day.abs_diff(t) <= EARNINGS_WINDOW);
                let past: Vec<f64> = evs.iter().take_while(|e| e.day <= t).map(|e| e.surprise).collect();
                let hist = if past.is_empty() {
                    0.0
                } else {
                    past.iter().map(|s| s.abs()).sum::<f64>() / past.len() as f64
                };
                let sector: Vec<f64> = (0..n)
                    .filter(|&j| src.sectors[j] == src.sectors[i])
                    .filter_map(|j| by_stock[j].iter().take_while(|e| e.day <= t).last().map(|e| e.surprise))
                    .collect();
                let sector_avg = if sector.is_empty() {
                    0.0
                } else {
                    sector.iter().sum::<f64>() / sector.len() as f64
                };
                let (flag, size) = sentiment_spike(src.sentiment[t], src.sentiment_std);
                entries.push(EventContext {
                    vix_level: vix_level(src.vix[t], src.vix_terciles),
                    fixed: [
                        flag,
                        size,
                        days_to as f64 / EARNINGS_HORIZON as f64,
                        hist,
                        if near { 1.0 } else { 0.0 },
                        sector_avg,
                        finite_or_zero(src.error_mean[t] / src.tau0),
                        finite_or_zero(src.error_std[t] / src.tau0),
                    ],
                });
            }
        }
        Self {
            n_stocks: n,
            n_days: days,
            entries,
        }
    }

    pub fn get(&self, stock: usize, day: usize) -> EventContext {
        self.entries[stock * self.n_days + day]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources<'a>(
        vix: &'a [f64],
        sentiment: &'a [f64],
        earnings: &'a [EarningsEvent],
        e: &'a [f64],
    ) -> ContextSources<'a> {
        ContextSources {
            vix,
            vix_terciles: [15.0, 25.0],
            sentiment,
            sentiment_std: 0.1,
            sectors: &[0, 0, 1],
            earnings,
            error_mean: e,
            error_std: e,
            tau0: 2.0,
        }
    }

    #[test]
    fn calm_day_has_zero_flags() {
        let vix = [10.0; 10];
        let s = [0.05; 10];
        let e = [1.0; 10];
        let t = ContextTable::build(&sources(&vix, &s, &[], &e));
        let c = t.get(0, 3);
        assert_eq!(c.vix_level, 0);
        assert_eq!(c.fixed, [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn three_sigma_sentiment_is_a_spike_of_three() {
        let (flag, size) = sentiment_spike(-0.3, 0.1);
        assert_eq!(flag, 1.0);
        assert!((size - 3.0).abs() < 1e-12);
        assert_eq!(sentiment_spike(0.2, 0.1), (0.0, 0.0));
    }

    #[test]
    fn earnings_characterisation_is_causal_in_surprises() {
        let vix = [20.0; 12];
        let s = [0.0; 12];
        let e = [f64::NAN; 12];
        let ev = [
            EarningsEvent { stock: 0, day: 5, surprise: -1.5 },
            EarningsEvent { stock: 1, day: 3, surprise: 0.5 },
        ];
        let t = ContextTable::build(&sources(&vix, &s, &ev, &e));
        let before = t.get(0, 4);
        assert_eq!(before.vix_level, 1);
        assert_eq!(before.fixed[2], 1.0 / 63.0);
        assert_eq!(before.fixed[3], 0.0, "surprise not yet announced");
        assert_eq!(before.fixed[4], 1.0);
        assert_eq!(before.fixed[5], 0.5, "sector peer announced on day 3");
        let on = t.get(0, 5);
        assert_eq!(on.fixed[3], 1.5);
        assert_eq!(on.fixed[5], (-1.5 + 0.5) / 2.0);
        assert_eq!(t.get(2, 5).fixed[5], 0.0, "other sector");
        assert_eq!(on.fixed[6..], [0.0, 0.0], "missing errors read as zero");
    }

    #[test]
    fn embedding_row_matches_level() {
        let table = Tensor::matrix(3, 4, (0..12).map(f64::from).collect()).unwrap();
        let c = EventContext { vix_level: 2, fixed: [0.5; 8] };
        let v = c.vector(&table);
        assert_eq!(&v[..4], &[8.0, 9.0, 10.0, 11.0]);
        assert_eq!(&v[4..], &[0.5; 8]);
    }
}
