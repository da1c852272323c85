//! Look-ahead-safe z-scoring.
//!
//! Train mode scores a value at day `t` with the mean and population
//! standard deviation of all valid values through `t`. Eval mode uses
//! statistics frozen over the training period.

use super::{FeaturePanel, MarketError, N_FEATURES, N_ROUTER};

/// Below this standard deviation a feature is emitted as zero and flagged constant.
pub const MIN_STD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Frozen per-stock feature statistics and per-feature router statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    /// `[stock * N_FEATURES + f]`
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub router_mean: Vec<f64>,
    pub router_std: Vec<f64>,
    /// Days `0..end` the statistics were fitted on.
    pub end: usize,
}

#[derive(Default, Clone, Copy)]
struct Running {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        (self.m2 / self.n).max(0.0).sqrt()
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Statistics over valid rows of days `0..end`.
pub fn fit_stats(raw: &FeaturePanel, end: usize) -> NormStats {
    let end = end.min(raw.n_days);
    let mut mean = vec![0.0; raw.n_stocks * N_FEATURES];
    let mut std = vec![0.0; raw.n_stocks * N_FEATURES];
    for i in 0..raw.n_stocks {
        for f in 0..N_FEATURES {
            let (m, s) = mean_std((0..end).filter(|&t| raw.is_valid(i, t)).map(|t| raw.row(i, t)[f]));
            mean[i * N_FEATURES + f] = m;
            std[i * N_FEATURES + f] = s;
        }
    }
    let mut router_mean = vec![0.0; N_ROUTER];
    let mut router_std = vec![0.0; N_ROUTER];
    for f in 0..N_ROUTER {
        let (m, s) = mean_std((0..end).filter(|&t| raw.router_valid[t]).map(|t| raw.router_row(t)[f]));
        router_mean[f] = m;
        router_std[f] = s;
    }
    NormStats {
        mean,
        std,
        router_mean,
        router_std,
        end,
    }
}

fn score(x: f64, mean: f64, std: f64) -> (f64, bool) {
    if std < MIN_STD {
        (0.0, true)
    } else {
        ((x - mean) / std, false)
    }
}

/// Normalises every day in one mode. Train mode invalidates rows with fewer
/// than two valid observations so far.
pub fn expanding_normalize(
    raw: &FeaturePanel,
    mode: NormMode,
    frozen: Option<&NormStats>,
) -> Result<FeaturePanel, MarketError> {
    match mode {
        NormMode::Train => Ok(normalize_split(raw, raw.n_days, None)),
        NormMode::Eval => {
            let stats = frozen.ok_or_else(|| MarketError::Config("eval normalisation needs frozen statistics".into()))?;
            Ok(normalize_split(raw, 0, Some(stats)))
        }
    }
}

/// Expanding statistics on days `< train_end`, frozen statistics afterwards.
/// When `frozen` is `None` the statistics are fitted on `0..train_end`.
pub fn normalize_split(raw: &FeaturePanel, train_end: usize, frozen: Option<&NormStats>) -> FeaturePanel {
    let fitted;
    let stats = match frozen {
        Some(s) => s,
        None => {
            fitted = fit_stats(raw, train_end);
            &fitted
        }
    };
    let mut out = raw.clone();
    out.constant = vec![false; raw.n_stocks * N_FEATURES];
    out.router_constant = vec![false; N_ROUTER];
    for i in 0..raw.n_stocks {
        let mut run = [Running::default(); N_FEATURES];
        for t in 0..raw.n_days {
            if !raw.is_valid(i, t) {
                continue;
            }
            let x = raw.row(i, t);
            let mut z = [0.0; N_FEATURES];
            if t < train_end {
                for f in 0..N_FEATURES {
                    run[f].push(x[f]);
                }
                if run[0].n < 2.0 {
                    out.valid[i * raw.n_days + t] = false;
                    continue;
                }
                for f in 0..N_FEATURES {
                    let (v, c) = score(x[f], run[f].mean, run[f].std());
                    z[f] = v;
                    out.constant[i * N_FEATURES + f] |= c;
                }
            } else {
                for f in 0..N_FEATURES {
                    let k = i * N_FEATURES + f;
                    let (v, c) = score(x[f], stats.mean[k], stats.std[k]);
                    z[f] = v;
                    out.constant[k] |= c;
                }
            }
            out.row_mut(i, t).copy_from_slice(&z);
        }
    }
    let mut run = [Running::default(); N_ROUTER];
    for t in 0..raw.n_days {
        if !raw.router_valid[t] {
            continue;
        }
        let x = raw.router_row(t).to_vec();
        let row = &mut out.router[t * N_ROUTER..(t + 1) * N_ROUTER];
        if t < train_end {
            for f in 0..N_ROUTER {
                run[f].push(x[f]);
            }
            if run[0].n < 2.0 {
                out.router_valid[t] = false;
                continue;
            }
            for f in 0..N_ROUTER {
                let (z, c) = score(x[f], run[f].mean, run[f].std());
                row[f] = z;
                out.router_constant[f] |= c;
            }
        } else {
            for f in 0..N_ROUTER {
                let (z, c) = score(x[f], stats.router_mean[f], stats.router_std[f]);
                row[f] = z;
                out.router_constant[f] |= c;
            }
        }
    }
    out
}

/// Expanding z-scores of one series; `None` until two values have been seen.
pub fn expanding_zscores(x: &[f64]) -> Vec<Option<f64>> {
    let mut run = Running::default();
    x.iter()
        .map(|&v| {
            run.push(v);
            (run.n >= 2.0).then(|| score(v, run.mean, run.std()).0)
        })
        .collect()
}
