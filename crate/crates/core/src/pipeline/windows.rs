//! Window layouts over the day axis and the tensors fed to a pathway.
//!
//! Tokens are stock-major: row `i·T + t` holds stock `i` on day `start + t`.

use std::ops::Range;

use numcore::Tensor;

use super::PreparedData;
use crate::marketdata::N_FEATURES;
use crate::nodeformer::{ContextTable, Targets, WindowInput};
use crate::regime::AnomalyScores;

/// Shortest training window kept.
pub const MIN_WINDOW: usize = 2;

/// Non-overlapping windows of `len` days tiling `days`, the first cut after
/// `offset` days.
pub fn tiling(days: Range<usize>, len: usize, offset: usize) -> Vec<Range<usize>> {
    let len = len.max(1);
    let mut cuts = vec![days.start];
    let mut c = days.start + offset % len;
    if c == days.start {
        c += len;
    }
    while c < days.end {
        cuts.push(c);
        c += len;
    }
    cuts.push(days.end);
    cuts.windows(2)
        .filter(|w| w[1] > w[0] && w[1] - w[0] >= MIN_WINDOW)
        .map(|w| w[0]..w[1])
        .collect()
}

/// Overlapping inference windows: each covers up to `len` days and is read
/// only on its last `stride = len/4` days. Returns `(window, kept)` pairs
/// whose kept ranges tile `days`. Windows never reach before `floor`.
pub fn sweep(days: Range<usize>, floor: usize, len: usize) -> Vec<(Range<usize>, Range<usize>)> {
    let stride = (len / 4).max(1);
    let start = days.start.max(floor);
    let mut out = Vec::new();
    let mut b = start;
    while b < days.end {
        let e = (b + stride).min(days.end);
        let w = e.saturating_sub(len).max(floor)..e;
        out.push((w, b..e));
        b = e;
    }
    out
}

/// Per-token side inputs shared by every window of one system.
#[derive(Clone, Copy)]
pub struct TokenSources<'a> {
    pub data: &'a PreparedData,
    pub scores: Option<&'a AnomalyScores>,
    pub context: Option<&'a ContextTable>,
    pub tau0: f64,
    /// Attach per-token closes for anchored heads.
    pub anchor: bool,
}

impl TokenSources<'_> {
    /// `e/τ₀`, zero where the score is unavailable.
    pub fn scaled_error(&self, stock: usize, day: usize) -> f64 {
        match self.scores.and_then(|s| s.get(stock, day)) {
            Some(e) if self.tau0 > 0.0 => e / self.tau0,
            _ => 0.0,
        }
    }

    pub fn error(&self, stock: usize, day: usize) -> Option<f64> {
        self.scores.and_then(|s| s.get(stock, day))
    }

    /// Window tensors. `flag(stock, day)` fills the regime flag of the
    /// conditioned pathway; context rows are attached when `with_context`.
    pub fn input(
        &self,
        window: &Range<usize>,
        with_context: bool,
        flag: Option<&dyn Fn(usize, usize) -> f64>,
    ) -> WindowInput {
        let d = self.data;
        let (n, steps) = (d.n_stocks(), window.len());
        let mut features = Vec::with_capacity(n * steps * N_FEATURES);
        let mut anchor = Vec::with_capacity(n * steps);
        for i in 0..n {
            for t in window.clone() {
                if d.features.is_valid(i, t) {
                    features.extend_from_slice(d.features.row(i, t));
                } else {
                    features.extend(std::iter::repeat_n(0.0, N_FEATURES));
                }
                anchor.push(d.anchor(i, t).unwrap_or(0.0));
            }
        }
        let context = match (with_context, self.context) {
            (true, Some(table)) => {
                Some((0..n).flat_map(|i| window.clone().map(move |t| table.get(i, t))).collect())
            }
            _ => None,
        };
        let regime_signal = flag.map(|f| {
            let mut s = Vec::with_capacity(n * steps * 2);
            for i in 0..n {
                for t in window.clone() {
                    s.push(self.scaled_error(i, t));
                    s.push(f(i, t));
                }
            }
            Tensor::matrix(n * steps, 2, s).expect("finite regime signal")
        });
        WindowInput {
            n_stocks: n,
            steps,
            features: Tensor::matrix(n * steps, N_FEATURES, features).expect("finite features"),
            context,
            regime_signal,
            anchor: self.anchor.then_some(anchor),
        }
    }

    /// Targets for every token and horizon; a pair counts when the token's
    /// features are complete, its target day precedes `limit`, and `keep`
    /// admits the token.
    pub fn targets(
        &self,
        window: &Range<usize>,
        horizons: &[usize],
        limit: usize,
        keep: &dyn Fn(usize, usize) -> bool,
    ) -> Targets {
        let d = self.data;
        let (n, hz) = (d.n_stocks(), horizons.len());
        let rows = n * window.len();
        let mut values = vec![0.0; rows * hz];
        let mut direction = vec![0.0; rows * hz];
        let mut mask = vec![0.0; rows * hz];
        for i in 0..n {
            for (p, t) in window.clone().enumerate() {
                if !d.features.is_complete(i, t) || !keep(i, t) {
                    continue;
                }
                let Some(now) = d.target(i, t) else { continue };
                let row = i * window.len() + p;
                for (k, &h) in horizons.iter().enumerate() {
                    if t + h >= limit {
                        continue;
                    }
                    if let Some(y) = d.target(i, t + h) {
                        values[row * hz + k] = y;
                        direction[row * hz + k] = if y > now { 1.0 } else { 0.0 };
                        mask[row * hz + k] = 1.0;
                    }
                }
            }
        }
        let m = |v| Tensor::matrix(rows, hz, v).expect("finite targets");
        Targets {
            values: m(values),
            direction: m(direction),
            mask: m(mask),
        }
    }
}
