//! Technical indicators over a single price series.
//!
//! Every function maps a series of length `n` to `n` optional values; `None`
//! marks the warm-up prefix where the indicator is undefined.

use super::panel::OhlcvPanel;
use super::{FeaturePanel, MarketError, N_FEATURES, WARMUP};

pub const SMA_WINDOWS: [usize; 3] = [5, 10, 20];
pub const EMA_WINDOWS: [usize; 3] = [5, 10, 20];
pub const RSI_PERIOD: usize = 14;
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const MACD_SIGNAL: usize = 9;
pub const VOL_WINDOW: usize = 20;

pub fn sma(x: &[f64], k: usize) -> Vec<Option<f64>> {
    (0..x.len())
        .map(|t| (t + 1 >= k).then(|| x[t + 1 - k..=t].iter().sum::<f64>() / k as f64))
        .collect()
}

/// Exponential average with `α = 2/(k+1)`, seeded by the simple average of the first `k` values.
pub fn ema(x: &[f64], k: usize) -> Vec<Option<f64>> {
    ema_from(x, k, 0)
}

/// As [`ema`] but over `x[start..]`, leaving earlier entries `None`.
fn ema_from(x: &[f64], k: usize, start: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; x.len()];
    if x.len() < start + k {
        return out;
    }
    let alpha = 2.0 / (k as f64 + 1.0);
    let seed_end = start + k - 1;
    let mut e = x[start..=seed_end].iter().sum::<f64>() / k as f64;
    out[seed_end] = Some(e);
    for t in seed_end + 1..x.len() {
        e = alpha * x[t] + (1.0 - alpha) * e;
        out[t] = Some(e);
    }
    out
}

/// Wilder's RSI: averages of gains and losses seeded over the first `k`
/// changes, then smoothed with weight `1/k`. A flat window reads 50.
pub fn rsi(close: &[f64], k: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    if close.len() <= k {
        return out;
    }
    let change = |t: usize| close[t] - close[t - 1];
    let mut gain = (1..=k).map(|t| change(t).max(0.0)).sum::<f64>() / k as f64;
    let mut loss = (1..=k).map(|t| (-change(t)).max(0.0)).sum::<f64>() / k as f64;
    let value = |g: f64, l: f64| {
        if l == 0.0 {
            if g == 0.0 { 50.0 } else { 100.0 }
        } else {
            100.0 - 100.0 / (1.0 + g / l)
        }
    };
    out[k] = Some(value(gain, loss));
    let kf = k as f64;
    for t in k + 1..close.len() {
        let c = change(t);
        gain = (gain * (kf - 1.0) + c.max(0.0)) / kf;
        loss = (loss * (kf - 1.0) + (-c).max(0.0)) / kf;
        out[t] = Some(value(gain, loss));
    }
    out
}

/// MACD histogram: `(EMA12 − EMA26) − EMA9(EMA12 − EMA26)`.
pub fn macd_histogram(close: &[f64]) -> Vec<Option<f64>> {
    let fast = ema(close, MACD_FAST);
    let slow = ema(close, MACD_SLOW);
    let line: Vec<f64> = fast
        .iter()
        .zip(&slow)
        .map(|(f, s)| match (f, s) {
            (Some(f), Some(s)) => f - s,
            _ => 0.0,
        })
        .collect();
    let signal = ema_from(&line, MACD_SIGNAL, MACD_SLOW - 1);
    signal
        .iter()
        .enumerate()
        .map(|(t, s)| s.map(|s| line[t] - s))
        .collect()
}

pub fn simple_returns(close: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    for t in 1..close.len() {
        out[t] = Some(close[t] / close[t - 1] - 1.0);
    }
    out
}

pub fn log_returns(close: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    for t in 1..close.len() {
        out[t] = Some((close[t] / close[t - 1]).ln());
    }
    out
}

/// Population standard deviation over the last `k` defined values.
pub fn rolling_std(x: &[Option<f64>], k: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; x.len()];
    for t in 0..x.len() {
        if t + 1 < k {
            continue;
        }
        let w = &x[t + 1 - k..=t];
        if w.iter().any(Option::is_none) {
            continue;
        }
        let mean = w.iter().map(|v| v.unwrap()).sum::<f64>() / k as f64;
        let var = w.iter().map(|v| (v.unwrap() - mean).powi(2)).sum::<f64>() / k as f64;
        out[t] = Some(var.sqrt());
    }
    out
}

/// Raw (unnormalised) per-stock features; router features are filled by
/// [`super::router::build_router_features`].
pub fn compute_indicators(panel: &OhlcvPanel) -> Result<FeaturePanel, MarketError> {
    let (n_stocks, n_days) = (panel.n_stocks(), panel.n_days());
    let mut fp = FeaturePanel::empty(n_stocks, n_days);
    let sentiment = if panel.has_market() {
        panel.market.sentiment.clone()
    } else {
        vec![0.0; n_days]
    };
    for i in 0..n_stocks {
        let Some(first) = panel.bars[i].iter().position(Option::is_some) else {
            continue;
        };
        let bars: Vec<_> = panel.bars[i][first..]
            .iter()
            .map(|b| b.ok_or_else(|| MarketError::NotImputed(panel.tickers[i].clone())))
            .collect::<Result<_, _>>()?;
        let close: Vec<f64> = bars.iter().map(|b| b.close).collect();
        let smas: Vec<_> = SMA_WINDOWS.iter().map(|&k| sma(&close, k)).collect();
        let emas: Vec<_> = EMA_WINDOWS.iter().map(|&k| ema(&close, k)).collect();
        let rsi = rsi(&close, RSI_PERIOD);
        let macd = macd_histogram(&close);
        let ret = simple_returns(&close);
        let lret = log_returns(&close);
        let vol = rolling_std(&lret, VOL_WINDOW);
        for (k, b) in bars.iter().enumerate() {
            let t = first + k;
            let derived = [
                smas[0][k], smas[1][k], smas[2][k], emas[0][k], emas[1][k], emas[2][k], rsi[k],
                macd[k], ret[k], lret[k], vol[k],
            ];
            let row = fp.row_mut(i, t);
            row[..5].copy_from_slice(&[b.open, b.high, b.low, b.close, b.volume]);
            for (slot, v) in row[5..16].iter_mut().zip(derived) {
                *slot = v.unwrap_or(0.0);
            }
            row[16] = sentiment[t];
            fp.valid[i * n_days + t] = k >= WARMUP && derived.iter().all(Option::is_some);
        }
    }
    debug_assert_eq!(N_FEATURES, 17);
    Ok(fp)
}
