//! Point-forecast metrics. Inputs are parallel slices; `prev` is the close on
//! the forecast day, `actual` the close `h` days later.

use super::EvalError;

/// Guards the confidence denominator when both pathways agree exactly.
pub const CONFIDENCE_EPS: f64 = 1e-8;

fn check(lens: &[usize]) -> Result<usize, EvalError> {
    let n = lens[0];
    if lens.iter().any(|&l| l != n) {
        return Err(EvalError::Length(lens.to_vec()));
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(n)
}

/// Mean absolute percentage error in percent, in price units. Zero actual
/// prices are skipped; the second value counts them.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<(f64, usize), EvalError> {
    check(&[pred.len(), actual.len()])?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (p, a) in pred.iter().zip(actual) {
        if *a == 0.0 {
            continue;
        }
        sum += ((p - a) / a).abs();
        used += 1;
    }
    let excluded = pred.len() - used;
    if used == 0 {
        return Err(EvalError::Empty);
    }
    Ok((100.0 * sum / used as f64, excluded))
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    let n = check(&[pred.len(), actual.len()])?;
    Ok((pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / n as f64).sqrt())
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Percent of forecasts whose move sign matches the realised move sign.
pub fn directional_accuracy(pred: &[f64], actual: &[f64], prev: &[f64]) -> Result<f64, EvalError> {
    let n = check(&[pred.len(), actual.len(), prev.len()])?;
    let hits = (0..n).filter(|&k| sign(pred[k] - prev[k]) == sign(actual[k] - prev[k])).count();
    Ok(100.0 * hits as f64 / n as f64)
}

/// Forecast error over random-walk error; `NaN` when prices never move.
pub fn theil_u(pred: &[f64], actual: &[f64], prev: &[f64]) -> Result<f64, EvalError> {
    check(&[pred.len(), actual.len(), prev.len()])?;
    let num: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
    let den: f64 = actual.iter().zip(prev).map(|(a, y)| (a - y).powi(2)).sum();
    Ok(if den > 0.0 { (num / den).sqrt() } else { f64::NAN })
}

/// Inverse variance of the two pathway outputs: `1 / (ε + (y_n − y_e)²/2)`.
pub fn confidence(normal: f64, event: f64) -> f64 {
    1.0 / (CONFIDENCE_EPS + (normal - event).powi(2) / 2.0)
}

/// Lower median (element `⌊(n − 1)/2⌋` of the sorted values).
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Percent of forecasts where "confidence above median" agrees with
/// "absolute error below median".
pub fn ctr(confidence: &[f64], abs_error: &[f64]) -> Result<f64, EvalError> {
    let n = check(&[confidence.len(), abs_error.len()])?;
    if n < 2 {
        return Err(EvalError::TooFew { need: 2, have: n });
    }
    let c = lower_median(confidence);
    let e = lower_median(abs_error);
    let agree = confidence.iter().zip(abs_error).filter(|(ci, ei)| (**ci > c) == (**ei < e)).count();
    Ok(100.0 * agree as f64 / n as f64)
}
