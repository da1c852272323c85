//! Deterministic report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EvalError, EvalReport, Forecast, Metrics, TrajectoryPoint};

pub const METRIC_COLUMNS: [&str; 10] = ["model", "kind", "stock", "horizon", "n", "mape", "rmse", "da", "theil_u", "ctr"];
const FORECAST_COLUMNS: [&str; 10] =
    ["stock", "day", "horizon", "pred", "normal", "event", "actual", "prev", "scale", "offset"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// `report.txt`
    Text,
    /// `report.csv`, `significance.csv`, `regimes.csv`
    Csv,
    /// `trajectory.csv`
    PlotData,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.10}")
    }
}

/// Shortest text that parses back to the same `f64`.
fn exact(v: f64) -> String {
    format!("{v:e}")
}

fn metric_fields(m: &Metrics) -> [String; 6] {
    [
        m.n.to_string(),
        num(m.mape),
        num(m.rmse),
        num(m.da),
        num(m.theil_u),
        m.ctr.map_or_else(String::new, num),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text tables.
pub fn render_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {}", r.model);
    let _ = writeln!(s, "{:<10} {:>7} {:>8} {:>10} {:>10} {:>8} {:>9} {:>8}", "stock", "horizon", "n", "MAPE%", "RMSE", "DA%", "TheilU", "CTR%");
    let fmt = |label: String, h: usize, m: &Metrics| {
        format!(
            "{label:<10} {h:>7} {:>8} {:>10.4} {:>10.4} {:>8.2} {:>9.4} {:>8}\n",
            m.n,
            m.mape,
            m.rmse,
            m.da,
            m.theil_u,
            m.ctr.map_or_else(|| "-".into(), |c| format!("{c:.2}"))
        )
    };
    for row in &r.rows {
        let label = row.stock.map_or_else(|| "mean".to_string(), |i| format!("stock{i}"));
        s.push_str(&fmt(label, row.horizon, &row.metrics));
    }
    if !r.baselines.is_empty() {
        let _ = writeln!(s, "\nbaselines");
        for b in &r.baselines {
            s.push_str(&fmt(b.name.clone(), b.horizon, &b.metrics));
        }
    }
    if !r.regimes.is_empty() {
        let _ = writeln!(s, "\n{:<14} {:<10} {:>7} {:>10} {:>8}", "scheme", "regime", "horizon", "MAPE%", "count");
        for g in &r.regimes {
            let _ = writeln!(s, "{:<14} {:<10} {:>7} {:>10.4} {:>8}", g.scheme, g.regime, g.horizon, g.mape, g.count);
        }
    }
    if !r.significance.is_empty() {
        let _ = writeln!(s, "\n{:<10} {:<10} {:>7} {:>10} {:>12} {:>10}", "model", "reference", "horizon", "t", "p", "d");
        for g in &r.significance {
            let flag = if g.result.degenerate { " (degenerate)" } else { "" };
            let _ = writeln!(
                s,
                "{:<10} {:<10} {:>7} {:>10.4} {:>12.4e} {:>10.4}{flag}",
                g.model, g.reference, g.horizon, g.result.t, g.result.p, g.result.cohens_d
            );
        }
    }
    s
}

/// Writes the requested files into `dir` and returns their paths.
pub fn emit_report(r: &EvalReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Text => {
                let p = dir.join("report.txt");
                fs::write(&p, render_text(r))?;
                written.push(p);
            }
            ReportFormat::Csv => {
                let mut rows = Vec::new();
                for row in &r.rows {
                    let (kind, stock) = match row.stock {
                        Some(i) => ("stock", i.to_string()),
                        None => ("mean", String::new()),
                    };
                    let mut v = vec![r.model.clone(), kind.into(), stock, row.horizon.to_string()];
                    v.extend(metric_fields(&row.metrics));
                    rows.push(v);
                }
                for b in &r.baselines {
                    let mut v = vec![r.model.clone(), format!("baseline:{}", b.name), String::new(), b.horizon.to_string()];
                    v.extend(metric_fields(&b.metrics));
                    rows.push(v);
                }
                let p = dir.join("report.csv");
                write_csv(&p, &METRIC_COLUMNS, rows)?;
                written.push(p);

                let p = dir.join("significance.csv");
                let rows = r
                    .significance
                    .iter()
                    .map(|g| {
                        vec![
                            g.model.clone(),
                            g.reference.clone(),
                            g.horizon.to_string(),
                            g.result.n.to_string(),
                            num(g.result.mean_diff),
                            num(g.result.t),
                            num(g.result.p),
                            num(g.result.cohens_d),
                            g.result.degenerate.to_string(),
                        ]
                    })
                    .collect();
                write_csv(&p, &["model", "reference", "horizon", "n", "mean_diff", "t", "p", "cohens_d", "degenerate"], rows)?;
                written.push(p);

                let p = dir.join("regimes.csv");
                let rows = r
                    .regimes
                    .iter()
                    .map(|g| vec![g.scheme.clone(), g.regime.clone(), g.horizon.to_string(), num(g.mape), g.count.to_string()])
                    .collect();
                write_csv(&p, &["scheme", "regime", "horizon", "mape", "count"], rows)?;
                written.push(p);
            }
            ReportFormat::PlotData => {
                let p = dir.join("trajectory.csv");
                let rows = r
                    .trajectory
                    .iter()
                    .map(|t| vec![t.day.to_string(), exact(t.tau), exact(t.alpha), exact(t.mean_error)])
                    .collect();
                write_csv(&p, &["day", "tau", "alpha", "mean_recon_error"], rows)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

/// `(kind, stock, horizon, metrics)` rows of a `report.csv`.
pub fn read_metric_csv(path: &Path) -> Result<Vec<(String, Option<usize>, usize, Metrics)>, EvalError> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    let bad = |what: &str| EvalError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, what.to_string()));
    for rec in rd.records() {
        let rec = rec?;
        let f = |k: usize| rec.get(k).ok_or_else(|| bad("short row"));
        let parse = |k: usize| -> Result<f64, EvalError> { f(k)?.parse::<f64>().map_err(|_| bad("number")) };
        let stock = match f(2)? {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("stock"))?),
        };
        let ctr = match f(9)? {
            "" => None,
            _ => Some(parse(9)?),
        };
        out.push((
            f(1)?.to_string(),
            stock,
            f(3)?.parse().map_err(|_| bad("horizon"))?,
            Metrics {
                n: f(4)?.parse().map_err(|_| bad("n"))?,
                mape: parse(5)?,
                mape_excluded: 0,
                rmse: parse(6)?,
                da: parse(7)?,
                theil_u: parse(8)?,
                ctr,
            },
        ));
    }
    Ok(out)
}

/// Stored forecasts, one row each, values printed exactly.
pub fn write_forecasts(forecasts: &[Forecast], path: &Path) -> Result<(), EvalError> {
    let rows = forecasts
        .iter()
        .map(|f| {
            vec![
                f.stock.to_string(),
                f.day.to_string(),
                f.horizon.to_string(),
                exact(f.pred),
                exact(f.normal),
                f.event.map_or_else(String::new, exact),
                exact(f.actual),
                exact(f.prev),
                exact(f.scale),
                exact(f.offset),
            ]
        })
        .collect();
    write_csv(path, &FORECAST_COLUMNS, rows)
}

pub fn read_forecasts(path: &Path) -> Result<Vec<Forecast>, EvalError> {
    let mut rd = csv::Reader::from_path(path)?;
    let bad = || EvalError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "malformed forecast row"));
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let s = |k: usize| rec.get(k).ok_or_else(bad);
        let x = |k: usize| -> Result<f64, EvalError> { s(k)?.parse().map_err(|_| bad()) };
        let u = |k: usize| -> Result<usize, EvalError> { s(k)?.parse().map_err(|_| bad()) };
        out.push(Forecast {
            stock: u(0)?,
            day: u(1)?,
            horizon: u(2)?,
            pred: x(3)?,
            normal: x(4)?,
            event: if s(5)?.is_empty() { None } else { Some(x(5)?) },
            actual: x(6)?,
            prev: x(7)?,
            scale: x(8)?,
            offset: x(9)?,
        });
    }
    Ok(out)
}

/// Reads a `trajectory.csv` written by [`emit_report`].
pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>, EvalError> {
    let mut rd = csv::Reader::from_path(path)?;
    let bad = || EvalError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "malformed trajectory row"));
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let x = |k: usize| -> Result<f64, EvalError> { rec.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        out.push(TrajectoryPoint {
            day: rec.get(0).ok_or_else(bad)?.parse().map_err(|_| bad())?,
            tau: x(1)?,
            alpha: x(2)?,
            mean_error: x(3)?,
        });
    }
    Ok(out)
}
