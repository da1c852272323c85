//! Forecast metrics, naive baselines, paired significance tests,
//! regime-conditioned breakdowns and report files.

mod metrics;
mod report;
mod stats;

pub use metrics::{confidence, ctr, directional_accuracy, lower_median, mape, rmse, theil_u, CONFIDENCE_EPS};
pub use report::{
    emit_report, read_forecasts, read_metric_csv, read_trajectory, render_text, write_forecasts, ReportFormat,
    METRIC_COLUMNS,
};
pub use stats::{inc_beta, ln_gamma, significance, t_cdf, t_two_sided_p, Significance, MIN_PAIRS};

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no forecasts to score")]
    Empty,
    #[error("mismatched input lengths {0:?}")]
    Length(Vec<usize>),
    #[error("need at least {need} samples, have {have}")]
    TooFew { need: usize, have: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One forecast of the close `horizon` days after `day`. Values are in
/// normalised price units; `price` maps them back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Forecast {
    pub stock: usize,
    pub day: usize,
    pub horizon: usize,
    pub pred: f64,
    pub normal: f64,
    /// Event-pathway output; absent for single-pathway systems.
    pub event: Option<f64>,
    pub actual: f64,
    /// Close on the forecast day.
    pub prev: f64,
    pub scale: f64,
    pub offset: f64,
}

impl Forecast {
    pub fn price(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }

    pub fn target_day(&self) -> usize {
        self.day + self.horizon
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub n: usize,
    /// Percent, price units.
    pub mape: f64,
    /// Forecasts dropped from MAPE for a zero actual price.
    pub mape_excluded: usize,
    /// Normalised units.
    pub rmse: f64,
    /// Percent.
    pub da: f64,
    pub theil_u: f64,
    /// Percent; needs both pathway outputs.
    pub ctr: Option<f64>,
}

pub fn compute_metrics(f: &[Forecast]) -> Result<Metrics, EvalError> {
    if f.is_empty() {
        return Err(EvalError::Empty);
    }
    let pred: Vec<f64> = f.iter().map(|x| x.pred).collect();
    let actual: Vec<f64> = f.iter().map(|x| x.actual).collect();
    let prev: Vec<f64> = f.iter().map(|x| x.prev).collect();
    let pred_price: Vec<f64> = f.iter().map(|x| x.price(x.pred)).collect();
    let actual_price: Vec<f64> = f.iter().map(|x| x.price(x.actual)).collect();
    let (mape, mape_excluded) = mape(&pred_price, &actual_price)?;
    let ctr = if f.len() >= 2 && f.iter().all(|x| x.event.is_some()) {
        let conf: Vec<f64> = f.iter().map(|x| confidence(x.normal, x.event.unwrap_or(x.normal))).collect();
        let err: Vec<f64> = f.iter().map(|x| (x.pred - x.actual).abs()).collect();
        Some(ctr(&conf, &err)?)
    } else {
        None
    };
    Ok(Metrics {
        n: f.len(),
        mape,
        mape_excluded,
        rmse: rmse(&pred, &actual)?,
        da: directional_accuracy(&pred, &actual, &prev)?,
        theil_u: theil_u(&pred, &actual, &prev)?,
        ctr,
    })
}

/// Metrics of one stock (or the cross-stock mean when `stock` is `None`) at one horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub stock: Option<usize>,
    pub horizon: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeRow {
    /// Labelling scheme, e.g. `ground-truth` or `vix-tercile`.
    pub scheme: String,
    pub regime: String,
    pub horizon: usize,
    pub mape: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub name: String,
    pub horizon: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignificanceRow {
    pub model: String,
    pub reference: String,
    pub horizon: usize,
    pub result: Significance,
}

/// Controller trajectory over the evaluation period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub day: usize,
    pub tau: f64,
    pub alpha: f64,
    pub mean_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub rows: Vec<MetricRow>,
    pub regimes: Vec<RegimeRow>,
    pub baselines: Vec<BaselineRow>,
    pub significance: Vec<SignificanceRow>,
    pub trajectory: Vec<TrajectoryPoint>,
}

fn mean_metrics(rows: &[Metrics]) -> Metrics {
    let k = rows.len() as f64;
    let avg = |f: &dyn Fn(&Metrics) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let ctr = rows.iter().map(|m| m.ctr).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / k);
    Metrics {
        n: rows.iter().map(|m| m.n).sum(),
        mape: avg(&|m| m.mape),
        mape_excluded: rows.iter().map(|m| m.mape_excluded).sum(),
        rmse: avg(&|m| m.rmse),
        da: avg(&|m| m.da),
        theil_u: avg(&|m| m.theil_u),
        ctr,
    }
}

fn by_horizon_stock(forecasts: &[Forecast]) -> BTreeMap<(usize, usize), Vec<Forecast>> {
    let mut groups: BTreeMap<(usize, usize), Vec<Forecast>> = BTreeMap::new();
    for f in forecasts {
        groups.entry((f.horizon, f.stock)).or_default().push(*f);
    }
    groups
}

/// Per-stock rows for every horizon, each followed by the cross-stock mean.
pub fn metric_rows(forecasts: &[Forecast]) -> Result<Vec<MetricRow>, EvalError> {
    let mut rows = Vec::new();
    let mut per_h: BTreeMap<usize, Vec<Metrics>> = BTreeMap::new();
    for ((h, i), group) in by_horizon_stock(forecasts) {
        let m = compute_metrics(&group)?;
        rows.push(MetricRow { stock: Some(i), horizon: h, metrics: m });
        per_h.entry(h).or_default().push(m);
    }
    for (h, ms) in per_h {
        rows.push(MetricRow { stock: None, horizon: h, metrics: mean_metrics(&ms) });
    }
    Ok(rows)
}

/// Random-walk persistence and always-up forecasts on the same samples.
pub fn naive_baselines(forecasts: &[Forecast]) -> Result<Vec<BaselineRow>, EvalError> {
    let mut out = Vec::new();
    let mut horizons: Vec<usize> = forecasts.iter().map(|f| f.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();
    for h in horizons {
        let persistence: Vec<Forecast> = forecasts
            .iter()
            .filter(|f| f.horizon == h)
            .map(|f| Forecast { pred: f.prev, normal: f.prev, event: None, ..*f })
            .collect();
        let rows = metric_rows(&persistence)?;
        let mean = rows.iter().find(|r| r.stock.is_none()).map(|r| r.metrics).ok_or(EvalError::Empty)?;
        out.push(BaselineRow { name: "random-walk".into(), horizon: h, metrics: mean });
        let up: Vec<f64> = per_stock_long_only(&persistence);
        // Only the direction of an always-up forecast is defined.
        let long_only = Metrics {
            n: mean.n,
            mape: f64::NAN,
            mape_excluded: 0,
            rmse: f64::NAN,
            da: up.iter().sum::<f64>() / up.len() as f64,
            theil_u: f64::NAN,
            ctr: None,
        };
        out.push(BaselineRow { name: "long-only".into(), horizon: h, metrics: long_only });
    }
    Ok(out)
}

fn per_stock_long_only(f: &[Forecast]) -> Vec<f64> {
    let mut by_stock: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for x in f {
        let e = by_stock.entry(x.stock).or_default();
        e.0 += usize::from(x.actual > x.prev);
        e.1 += 1;
    }
    by_stock.values().map(|(up, n)| 100.0 * *up as f64 / *n as f64).collect()
}

/// Percent of rising days in a close series: the directional accuracy of
/// always predicting "up".
pub fn long_only_da(closes: &[f64]) -> Result<f64, EvalError> {
    if closes.len() < 2 {
        return Err(EvalError::TooFew { need: 2, have: closes.len() });
    }
    let up = closes.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(100.0 * up as f64 / (closes.len() - 1) as f64)
}

/// Pooled MAPE per regime label of the target day; unlabelled days are skipped.
pub fn regime_breakdown(
    forecasts: &[Forecast],
    scheme: &str,
    label: impl Fn(usize) -> Option<String>,
) -> Result<Vec<RegimeRow>, EvalError> {
    let mut groups: BTreeMap<(usize, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for f in forecasts {
        if let Some(l) = label(f.target_day()) {
            let g = groups.entry((f.horizon, l)).or_default();
            g.0.push(f.price(f.pred));
            g.1.push(f.price(f.actual));
        }
    }
    groups
        .into_iter()
        .map(|((h, regime), (p, a))| {
            Ok(RegimeRow {
                scheme: scheme.to_string(),
                regime,
                horizon: h,
                mape: mape(&p, &a)?.0,
                count: p.len(),
            })
        })
        .collect()
}

/// Cross-stock mean squared error (normalised units) per forecast day.
pub fn daily_squared_errors(forecasts: &[Forecast], horizon: usize) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for f in forecasts.iter().filter(|f| f.horizon == horizon) {
        let e = acc.entry(f.day).or_default();
        e.0 += (f.pred - f.actual).powi(2);
        e.1 += 1;
    }
    acc.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect()
}

/// Paired test of `model` against `reference` on the days both forecast.
pub fn compare(
    model: (&str, &[Forecast]),
    reference: (&str, &[Forecast]),
    horizon: usize,
) -> Result<SignificanceRow, EvalError> {
    let a = daily_squared_errors(model.1, horizon);
    let b = daily_squared_errors(reference.1, horizon);
    let (x, y): (Vec<f64>, Vec<f64>) = a.iter().filter_map(|(d, e)| b.get(d).map(|r| (*e, *r))).unzip();
    Ok(SignificanceRow {
        model: model.0.to_string(),
        reference: reference.0.to_string(),
        horizon,
        result: significance(&x, &y)?,
    })
}

impl EvalReport {
    /// Metric rows and baselines for a set of forecasts.
    pub fn build(model: &str, forecasts: &[Forecast], trajectory: Vec<TrajectoryPoint>) -> Result<Self, EvalError> {
        Ok(Self {
            model: model.to_string(),
            rows: metric_rows(forecasts)?,
            regimes: Vec::new(),
            baselines: naive_baselines(forecasts)?,
            significance: Vec::new(),
            trajectory,
        })
    }

    /// Cross-stock mean metrics at a horizon.
    pub fn aggregate(&self, horizon: usize) -> Option<Metrics> {
        self.rows.iter().find(|r| r.stock.is_none() && r.horizon == horizon).map(|r| r.metrics)
    }

    pub fn regime_mape(&self, scheme: &str, regime: &str, horizon: usize) -> Option<f64> {
        self.regimes
            .iter()
            .find(|r| r.scheme == scheme && r.regime == regime && r.horizon == horizon)
            .map(|r| r.mape)
    }
}
