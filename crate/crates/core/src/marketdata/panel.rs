//! Raw market panel and its CSV representation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;

use super::MarketError;

pub const OHLCV_FILE: &str = "ohlcv.csv";
pub const SECTOR_FILE: &str = "sectors.csv";
pub const MARKET_FILE: &str = "market.csv";
pub const EARNINGS_FILE: &str = "earnings.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn check(&self) -> Result<(), String> {
        let vals = [self.open, self.high, self.low, self.close, self.volume];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite field".into());
        }
        if self.open <= 0.0 || self.close <= 0.0 || self.low <= 0.0 {
            return Err("non-positive price".into());
        }
        if self.high < self.open.max(self.close) {
            return Err(format!("high {} below max(open, close)", self.high));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!("low {} above min(open, close)", self.low));
        }
        if self.volume < 0.0 {
            return Err("negative volume".into());
        }
        Ok(())
    }

    pub fn lerp(&self, other: &Bar, w: f64) -> Bar {
        let l = |a: f64, b: f64| a + (b - a) * w;
        Bar {
            open: l(self.open, other.open),
            high: l(self.high, other.high),
            low: l(self.low, other.low),
            close: l(self.close, other.close),
            volume: l(self.volume, other.volume),
        }
    }
}

/// Market-wide daily series.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MarketSeries {
    pub vix: Vec<f64>,
    /// Daily sentiment score in `[-1, 1]`.
    pub sentiment: Vec<f64>,
    pub post_velocity: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarningsEvent {
    pub stock: usize,
    pub day: usize,
    pub surprise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OhlcvPanel {
    pub tickers: Vec<String>,
    pub sector_names: Vec<String>,
    /// Sector index per stock.
    pub sectors: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    /// `bars[stock][day]`; `None` until imputed.
    pub bars: Vec<Vec<Option<Bar>>>,
    /// Days absent from the source data, kept after imputation.
    pub missing: Vec<Vec<bool>>,
    pub market: MarketSeries,
    pub earnings: Vec<EarningsEvent>,
}

impl OhlcvPanel {
    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_sectors(&self) -> usize {
        self.sector_names.len()
    }

    pub fn close(&self, stock: usize, day: usize) -> Option<f64> {
        self.bars[stock][day].map(|b| b.close)
    }

    pub fn has_market(&self) -> bool {
        self.market.vix.len() == self.n_days()
    }

    /// Checks calendar ordering, bar invariants and series lengths.
    pub fn validate(&self) -> Result<(), MarketError> {
        for w in self.dates.windows(2) {
            if w[1] <= w[0] {
                return Err(MarketError::Ordering(format!("{} does not follow {}", w[1], w[0])));
            }
        }
        if self.sectors.len() != self.n_stocks() || self.bars.len() != self.n_stocks() {
            return Err(MarketError::Invariant("per-stock arrays disagree in length".into()));
        }
        for (i, row) in self.bars.iter().enumerate() {
            if row.len() != self.n_days() {
                return Err(MarketError::Invariant(format!("stock {i} has {} days", row.len())));
            }
            for (t, bar) in row.iter().enumerate() {
                if let Some(b) = bar {
                    b.check().map_err(|m| {
                        MarketError::Invariant(format!("{} on {}: {m}", self.tickers[i], self.dates[t]))
                    })?;
                }
            }
        }
        if self.has_market() {
            let m = &self.market;
            if m.post_velocity.iter().any(|&v| v < 0.0) {
                return Err(MarketError::Invariant("negative post velocity".into()));
            }
            if m.sentiment.iter().any(|s| !(-1.0..=1.0).contains(s)) {
                return Err(MarketError::Invariant("sentiment outside [-1, 1]".into()));
            }
        }
        Ok(())
    }

    /// Sets sentiment to zero on days before `start`.
    pub fn zero_sentiment_before(&mut self, start: NaiveDate) {
        for (s, d) in self.market.sentiment.iter_mut().zip(&self.dates) {
            if *d < start {
                *s = 0.0;
            }
        }
    }

    /// Earnings events grouped per stock, ordered by day.
    pub fn earnings_by_stock(&self) -> Vec<Vec<EarningsEvent>> {
        let mut out = vec![Vec::new(); self.n_stocks()];
        for e in &self.earnings {
            out[e.stock].push(*e);
        }
        for v in &mut out {
            v.sort_by_key(|e| e.day);
        }
        out
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate, MarketError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| MarketError::Parse {
        line,
        msg: format!("bad date {s:?}: {e}"),
    })
}

fn parse_f64(s: &str, field: &str, line: u64) -> Result<f64, MarketError> {
    let v: f64 = s.trim().parse().map_err(|_| MarketError::Parse {
        line,
        msg: format!("bad {field} {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(MarketError::Parse {
            line,
            msg: format!("non-finite {field}"),
        });
    }
    Ok(v)
}

/// Reads a headed CSV, checking the header and yielding `(line, fields)`.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>, MarketError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MarketError::Io(format!("{}: {e}", path.display())))?;
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| MarketError::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header {
        return Err(MarketError::Parse {
            line: 1,
            msg: format!("{}: expected header {header:?}, found {got:?}", path.display()),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MarketError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(MarketError::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

/// Loads OHLCV rows and the sector map into a panel on the union calendar.
///
/// Dates must be non-decreasing through the file. Market series are left
/// empty; see [`attach_market`].
pub fn load_ohlcv_csv(ohlcv: &Path, sector_map: &Path) -> Result<OhlcvPanel, MarketError> {
    let mut sector_of: BTreeMap<String, String> = BTreeMap::new();
    for (line, f) in read_rows(sector_map, &["ticker", "sector"])? {
        if sector_of.insert(f[0].clone(), f[1].clone()).is_some() {
            return Err(MarketError::Parse {
                line,
                msg: format!("duplicate ticker {}", f[0]),
            });
        }
    }

    let rows = read_rows(ohlcv, &["date", "ticker", "open", "high", "low", "close", "volume"])?;
    let mut last_date: Option<NaiveDate> = None;
    let mut dates = BTreeSet::new();
    let mut tickers_seen: Vec<String> = Vec::new();
    let mut parsed = Vec::with_capacity(rows.len());
    for (line, f) in rows {
        let date = parse_date(&f[0], line)?;
        if let Some(prev) = last_date {
            if date < prev {
                return Err(MarketError::Ordering(format!("line {line}: {date} after {prev}")));
            }
        }
        last_date = Some(date);
        let bar = Bar {
            open: parse_f64(&f[2], "open", line)?,
            high: parse_f64(&f[3], "high", line)?,
            low: parse_f64(&f[4], "low", line)?,
            close: parse_f64(&f[5], "close", line)?,
            volume: parse_f64(&f[6], "volume", line)?,
        };
        bar.check()
            .map_err(|m| MarketError::Invariant(format!("line {line}: {m}")))?;
        if !tickers_seen.contains(&f[1]) {
            tickers_seen.push(f[1].clone());
        }
        dates.insert(date);
        parsed.push((line, date, f[1].clone(), bar));
    }
    if parsed.is_empty() {
        return Err(MarketError::Parse { line: 2, msg: "no OHLCV rows".into() });
    }

    let tickers = tickers_seen;
    let mut sector_names: Vec<String> = Vec::new();
    let mut sectors = Vec::with_capacity(tickers.len());
    for t in &tickers {
        let s = sector_of
            .get(t)
            .ok_or_else(|| MarketError::MissingSector(t.clone()))?;
        let idx = match sector_names.iter().position(|n| n == s) {
            Some(i) => i,
            None => {
                sector_names.push(s.clone());
                sector_names.len() - 1
            }
        };
        sectors.push(idx);
    }

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let day_of: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let stock_of: HashMap<&str, usize> = tickers.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut bars = vec![vec![None; dates.len()]; tickers.len()];
    for (line, date, ticker, bar) in parsed {
        let slot = &mut bars[stock_of[ticker.as_str()]][day_of[&date]];
        if slot.is_some() {
            return Err(MarketError::Parse {
                line,
                msg: format!("duplicate row for {ticker} on {date}"),
            });
        }
        *slot = Some(bar);
    }
    let missing = bars
        .iter()
        .map(|row| row.iter().map(Option::is_none).collect())
        .collect();
    let panel = OhlcvPanel {
        tickers,
        sector_names,
        sectors,
        dates,
        bars,
        missing,
        market: MarketSeries::default(),
        earnings: Vec::new(),
    };
    panel.validate()?;
    Ok(panel)
}

/// Attaches `date,vix,sentiment,post_velocity` rows. Every panel date must be present;
/// dates outside the panel calendar are ignored.
pub fn attach_market(panel: &mut OhlcvPanel, path: &Path) -> Result<(), MarketError> {
    let n = panel.n_days();
    let day_of: HashMap<NaiveDate, usize> = panel.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut vix = vec![f64::NAN; n];
    let mut sentiment = vec![0.0; n];
    let mut post = vec![0.0; n];
    let mut seen = vec![false; n];
    for (line, f) in read_rows(path, &["date", "vix", "sentiment", "post_velocity"])? {
        let date = parse_date(&f[0], line)?;
        let Some(&t) = day_of.get(&date) else { continue };
        let v = parse_f64(&f[1], "vix", line)?;
        let s = parse_f64(&f[2], "sentiment", line)?;
        let p = parse_f64(&f[3], "post_velocity", line)?;
        if v <= 0.0 {
            return Err(MarketError::Invariant(format!("line {line}: vix must be positive")));
        }
        if !(-1.0..=1.0).contains(&s) {
            return Err(MarketError::Invariant(format!("line {line}: sentiment outside [-1, 1]")));
        }
        if p < 0.0 {
            return Err(MarketError::Invariant(format!("line {line}: negative post velocity")));
        }
        vix[t] = v;
        sentiment[t] = s;
        post[t] = p;
        seen[t] = true;
    }
    if let Some(t) = seen.iter().position(|s| !s) {
        return Err(MarketError::Invariant(format!("market series missing {}", panel.dates[t])));
    }
    panel.market = MarketSeries {
        vix,
        sentiment,
        post_velocity: post,
    };
    Ok(())
}

/// Attaches `date,ticker,surprise` rows; unknown tickers are rejected.
pub fn attach_earnings(panel: &mut OhlcvPanel, path: &Path) -> Result<(), MarketError> {
    let day_of: HashMap<NaiveDate, usize> = panel.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut events = Vec::new();
    for (line, f) in read_rows(path, &["date", "ticker", "surprise"])? {
        let date = parse_date(&f[0], line)?;
        let stock = panel
            .tickers
            .iter()
            .position(|t| *t == f[1])
            .ok_or_else(|| MarketError::UnknownTicker(f[1].clone()))?;
        let surprise = parse_f64(&f[2], "surprise", line)?;
        if let Some(&day) = day_of.get(&date) {
            events.push(EarningsEvent { stock, day, surprise });
        }
    }
    events.sort_by_key(|e| (e.day, e.stock));
    panel.earnings = events;
    Ok(())
}

/// Loads the four standard files from a directory.
pub fn load_dataset(dir: &Path) -> Result<OhlcvPanel, MarketError> {
    let mut panel = load_ohlcv_csv(&dir.join(OHLCV_FILE), &dir.join(SECTOR_FILE))?;
    attach_market(&mut panel, &dir.join(MARKET_FILE))?;
    let earnings = dir.join(EARNINGS_FILE);
    if earnings.exists() {
        attach_earnings(&mut panel, &earnings)?;
    }
    panel.validate()?;
    Ok(panel)
}

fn io_err(e: impl std::fmt::Display) -> MarketError {
    MarketError::Io(e.to_string())
}

/// Writes the panel in the schema [`load_dataset`] reads.
pub fn write_dataset(panel: &OhlcvPanel, dir: &Path) -> Result<(), MarketError> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let mut w = csv::Writer::from_path(dir.join(OHLCV_FILE)).map_err(io_err)?;
    w.write_record(["date", "ticker", "open", "high", "low", "close", "volume"])
        .map_err(io_err)?;
    for (t, date) in panel.dates.iter().enumerate() {
        for (i, ticker) in panel.tickers.iter().enumerate() {
            if panel.missing[i][t] {
                continue;
            }
            if let Some(b) = panel.bars[i][t] {
                w.write_record([
                    date.to_string(),
                    ticker.clone(),
                    b.open.to_string(),
                    b.high.to_string(),
                    b.low.to_string(),
                    b.close.to_string(),
                    b.volume.to_string(),
                ])
                .map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)?;

    let mut w = csv::Writer::from_path(dir.join(SECTOR_FILE)).map_err(io_err)?;
    w.write_record(["ticker", "sector"]).map_err(io_err)?;
    for (ticker, &s) in panel.tickers.iter().zip(&panel.sectors) {
        w.write_record([ticker.as_str(), panel.sector_names[s].as_str()])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;

    if panel.has_market() {
        let m = &panel.market;
        let mut w = csv::Writer::from_path(dir.join(MARKET_FILE)).map_err(io_err)?;
        w.write_record(["date", "vix", "sentiment", "post_velocity"]).map_err(io_err)?;
        for (t, date) in panel.dates.iter().enumerate() {
            w.write_record([
                date.to_string(),
                m.vix[t].to_string(),
                m.sentiment[t].to_string(),
                m.post_velocity[t].to_string(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }

    let mut w = csv::Writer::from_path(dir.join(EARNINGS_FILE)).map_err(io_err)?;
    w.write_record(["date", "ticker", "surprise"]).map_err(io_err)?;
    for e in &panel.earnings {
        w.write_record([
            panel.dates[e.day].to_string(),
            panel.tickers[e.stock].clone(),
            e.surprise.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}
