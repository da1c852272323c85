//! Market-level router features, one 6-vector per day:
//! `[σ⁽⁵⁾, σ⁽²⁰⁾, ΔVIX, Δρ, |S|, post velocity]`.

use super::indicators::{log_returns, rolling_std, simple_returns};
use super::panel::OhlcvPanel;
use super::{FeaturePanel, MarketError, N_ROUTER};

pub const CORR_WINDOW: usize = 20;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Window of the last `CORR_WINDOW` returns ending at `t`, if all defined.
fn window(r: &[Option<f64>], t: usize) -> Option<Vec<f64>> {
    if t + 1 < CORR_WINDOW {
        return None;
    }
    r[t + 1 - CORR_WINDOW..=t].iter().copied().collect()
}

/// Mean pairwise correlation on day `t` over pairs whose windows are defined
/// at both `t` and `t − 1`, together with the same quantity on `t − 1`.
fn mean_corr_pair(returns: &[Vec<Option<f64>>], t: usize) -> Option<(f64, f64)> {
    let n = returns.len();
    let mut now = 0.0;
    let mut prev = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let (Some(ai), Some(aj), Some(pi), Some(pj)) = (
                window(&returns[i], t),
                window(&returns[j], t),
                window(&returns[i], t - 1),
                window(&returns[j], t - 1),
            ) else {
                continue;
            };
            now += pearson(&ai, &aj);
            prev += pearson(&pi, &pj);
            pairs += 1;
        }
    }
    (pairs > 0).then(|| (now / pairs as f64, prev / pairs as f64))
}

/// Mean pairwise 20-day return correlation on day `t` across stocks with a full window.
pub fn mean_pairwise_correlation(panel: &OhlcvPanel, t: usize) -> Option<f64> {
    let returns = stock_returns(panel, simple_returns);
    let windows: Vec<Vec<f64>> = returns.iter().filter_map(|r| window(r, t)).collect();
    let mut acc = 0.0;
    let mut pairs = 0;
    for i in 0..windows.len() {
        for j in i + 1..windows.len() {
            acc += pearson(&windows[i], &windows[j]);
            pairs += 1;
        }
    }
    (pairs > 0).then(|| acc / pairs as f64)
}

fn stock_returns(panel: &OhlcvPanel, f: fn(&[f64]) -> Vec<Option<f64>>) -> Vec<Vec<Option<f64>>> {
    (0..panel.n_stocks())
        .map(|i| {
            let mut out = vec![None; panel.n_days()];
            if let Some(first) = panel.bars[i].iter().position(Option::is_some) {
                let close: Vec<f64> = panel.bars[i][first..]
                    .iter()
                    .map(|b| b.map_or(f64::NAN, |b| b.close))
                    .collect();
                for (k, v) in f(&close).into_iter().enumerate() {
                    out[first + k] = v.filter(|x| x.is_finite());
                }
            }
            out
        })
        .collect()
}

fn cross_mean(series: &[Vec<Option<f64>>], t: usize) -> Option<f64> {
    let vals: Vec<f64> = series.iter().filter_map(|s| s[t]).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Fills `features.router` and `features.router_valid` from the panel.
pub fn build_router_features(panel: &OhlcvPanel, features: &mut FeaturePanel) -> Result<(), MarketError> {
    if panel.n_stocks() < 2 {
        return Err(MarketError::SingleStock);
    }
    if !panel.has_market() {
        return Err(MarketError::Config("router features need market series".into()));
    }
    let lret = stock_returns(panel, log_returns);
    let sret = stock_returns(panel, simple_returns);
    let vol5: Vec<_> = lret.iter().map(|r| rolling_std(r, 5)).collect();
    let vol20: Vec<_> = lret.iter().map(|r| rolling_std(r, 20)).collect();
    let m = &panel.market;
    for t in 0..panel.n_days() {
        let s5 = cross_mean(&vol5, t);
        let s20 = cross_mean(&vol20, t);
        let dvix = (t >= 1).then(|| (m.vix[t] - m.vix[t - 1]) / m.vix[t - 1]);
        let drho = if t >= 1 { mean_corr_pair(&sret, t).map(|(a, b)| a - b) } else { None };
        let vals = [s5, s20, dvix, drho, Some(m.sentiment[t].abs()), Some(m.post_velocity[t])];
        let row = &mut features.router[t * N_ROUTER..(t + 1) * N_ROUTER];
        for (slot, v) in row.iter_mut().zip(vals) {
            *slot = v.unwrap_or(0.0);
        }
        features.router_valid[t] = vals.iter().all(Option::is_some);
    }
    Ok(())
}
