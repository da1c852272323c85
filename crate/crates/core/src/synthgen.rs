//! Seeded synthetic market with a two-state calm/crisis regime chain.
//!
//! Log returns follow a factor model (market + sector + idiosyncratic) whose
//! volatility scales with the regime. Sentiment leads the next day's market
//! return, the VIX-like index tracks realised market volatility, and each
//! stock reports earnings roughly once a quarter with a price jump.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use numcore::rng::named_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

use crate::marketdata::{Bar, EarningsEvent, MarketSeries, OhlcvPanel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Calm,
    Crisis,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid synthetic config: {0}")]
pub struct SynthConfigError(pub String);

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_sectors: usize,
    pub seed: u64,
    /// Daily log drift per regime.
    pub drift_calm: f64,
    pub drift_crisis: f64,
    /// Daily return volatility in the calm regime.
    pub sigma_calm: f64,
    /// Crisis volatility is `crisis_vol_ratio · sigma_calm`.
    pub crisis_vol_ratio: f64,
    pub p_calm_to_crisis: f64,
    pub p_crisis_to_calm: f64,
    /// Variance shares of the market and sector factors (idiosyncratic takes the rest).
    pub market_share: f64,
    pub sector_share: f64,
    /// Market loadings are drawn uniformly from this range.
    pub loading_range: (f64, f64),
    pub earnings_interval: usize,
    /// Standard deviation of earnings surprises.
    pub surprise_sd: f64,
    /// Earnings-day return per unit surprise, in units of `sigma_calm`.
    pub earnings_jump: f64,
    /// Sentiment response to the next day's market return (in calm-volatility units).
    pub sentiment_coupling: f64,
    pub sentiment_noise: f64,
    /// Daily probability of a random sentiment spike.
    pub spike_rate: f64,
    pub post_velocity_base: f64,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 8,
            n_days: 3000,
            n_sectors: 3,
            seed: 7,
            drift_calm: 3e-4,
            drift_crisis: -1.5e-3,
            sigma_calm: 0.01,
            crisis_vol_ratio: 4.0,
            p_calm_to_crisis: 0.01,
            p_crisis_to_calm: 0.10,
            market_share: 0.45,
            sector_share: 0.2,
            loading_range: (0.8, 1.2),
            earnings_interval: 63,
            surprise_sd: 1.0,
            earnings_jump: 2.0,
            sentiment_coupling: 0.6,
            sentiment_noise: 0.5,
            spike_rate: 0.01,
            post_velocity_base: 40.0,
            start_date: NaiveDate::from_ymd_opt(2012, 1, 3).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn sigma_crisis(&self) -> f64 {
        self.sigma_calm * self.crisis_vol_ratio
    }

    pub fn validate(&self) -> Result<(), SynthConfigError> {
        let err = |m: &str| Err(SynthConfigError(m.into()));
        if self.n_stocks == 0 || self.n_days < 2 {
            return err("need at least one stock and two days");
        }
        if self.n_sectors == 0 || self.n_sectors > self.n_stocks {
            return err("n_sectors must be in 1..=n_stocks");
        }
        for p in [self.p_calm_to_crisis, self.p_crisis_to_calm, self.spike_rate] {
            if !(0.0..=1.0).contains(&p) {
                return err("probabilities must lie in [0, 1]");
            }
        }
        if !(self.sigma_calm > 0.0) || !(self.crisis_vol_ratio >= 1.0) {
            return err("need sigma_calm > 0 and crisis_vol_ratio >= 1");
        }
        let (lo, hi) = self.loading_range;
        if !(lo > 0.0 && lo <= hi) {
            return err("loading range must be positive and ordered");
        }
        if self.market_share < 0.0 || self.sector_share < 0.0 || self.market_share * hi * hi + self.sector_share > 1.0 {
            return err("factor variance shares exceed one");
        }
        if self.earnings_interval < 2 || self.post_velocity_base <= 0.0 || self.sentiment_noise < 0.0 {
            return err("earnings interval, post velocity and noise scales must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPanel {
    pub panel: OhlcvPanel,
    pub regimes: Vec<Regime>,
    /// `[stock][day]`: earnings day, crisis onset or sentiment spike.
    pub events: Vec<Vec<bool>>,
    /// Daily market factor log return (loading-weighted component excluded).
    pub market_returns: Vec<f64>,
}

impl SynthPanel {
    pub fn is_crisis(&self, day: usize) -> bool {
        self.regimes[day] == Regime::Crisis
    }
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthPanel, SynthConfigError> {
    cfg.validate()?;
    let mut rng = named_rng(cfg.seed, numcore::rng::DATA);
    let (n, days) = (cfg.n_stocks, cfg.n_days);

    let mut regimes = Vec::with_capacity(days);
    let mut state = Regime::Calm;
    for t in 0..days {
        if t > 0 {
            let u: f64 = rng.random();
            state = match state {
                Regime::Calm if u < cfg.p_calm_to_crisis => Regime::Crisis,
                Regime::Crisis if u < cfg.p_crisis_to_calm => Regime::Calm,
                s => s,
            };
        }
        regimes.push(state);
    }

    let sectors: Vec<usize> = (0..n).map(|i| i % cfg.n_sectors).collect();
    let loadings: Vec<f64> = (0..n)
        .map(|_| rng.random_range(cfg.loading_range.0..=cfg.loading_range.1))
        .collect();
    let idio_share: Vec<f64> = loadings
        .iter()
        .map(|b| 1.0 - cfg.market_share * b * b - cfg.sector_share)
        .collect();

    let mut earnings = Vec::new();
    let mut events = vec![vec![false; days]; n];
    let mut jump = vec![vec![0.0; days]; n];
    for i in 0..n {
        let mut t = rng.random_range(5..5 + cfg.earnings_interval);
        while t < days {
            let surprise = cfg.surprise_sd * gauss(&mut rng);
            earnings.push(EarningsEvent { stock: i, day: t, surprise });
            jump[i][t] = cfg.earnings_jump * cfg.sigma_calm * surprise;
            events[i][t] = true;
            let jitter = rng.random_range(0..=6) as isize - 3;
            t = (t as isize + cfg.earnings_interval as isize + jitter) as usize;
        }
    }
    earnings.sort_by_key(|e| (e.day, e.stock));

    let mut market = vec![0.0; days];
    let mut returns = vec![vec![0.0; days]; n];
    for t in 1..days {
        let (mu, sigma) = match regimes[t] {
            Regime::Calm => (cfg.drift_calm, cfg.sigma_calm),
            Regime::Crisis => (cfg.drift_crisis, cfg.sigma_crisis()),
        };
        let zm = gauss(&mut rng);
        let zs: Vec<f64> = (0..cfg.n_sectors).map(|_| gauss(&mut rng)).collect();
        market[t] = mu + sigma * cfg.market_share.sqrt() * zm;
        for i in 0..n {
            let z = loadings[i] * cfg.market_share.sqrt() * zm
                + cfg.sector_share.sqrt() * zs[sectors[i]]
                + idio_share[i].sqrt() * gauss(&mut rng);
            returns[i][t] = mu + sigma * z + jump[i][t];
        }
    }

    let dates = business_days(cfg.start_date, days);
    let mut bars = vec![Vec::with_capacity(days); n];
    for i in 0..n {
        let mut close = rng.random_range(40.0..160.0f64);
        let base_volume = rng.random_range(5e5..5e6f64);
        for t in 0..days {
            let sigma = match regimes[t] {
                Regime::Calm => cfg.sigma_calm,
                Regime::Crisis => cfg.sigma_crisis(),
            };
            let prev = close;
            close = prev * returns[i][t].exp();
            let open = prev * (0.25 * sigma * gauss(&mut rng)).exp();
            // intraday path: Brownian bridge from open to close in log space
            let steps = 8;
            let step_sd = 0.5 * sigma / (steps as f64).sqrt();
            let mut walk = [0.0; 8];
            for s in 1..steps {
                walk[s] = walk[s - 1] + step_sd * gauss(&mut rng);
            }
            let end = walk[steps - 1] + step_sd * gauss(&mut rng);
            let (mut hi, mut lo) = (open.max(close), open.min(close));
            let (log_open, log_close) = (open.ln(), close.ln());
            for (s, w) in walk.iter().enumerate().skip(1) {
                let frac = s as f64 / steps as f64;
                let p = (log_open + (log_close - log_open) * frac + w - frac * end).exp();
                hi = hi.max(p);
                lo = lo.min(p);
            }
            let volume = (base_volume
                * (0.3 * gauss(&mut rng)).exp()
                * (1.0 + 2.0 * returns[i][t].abs() / cfg.sigma_calm))
                .round();
            bars[i].push(Some(Bar { open, high: hi, low: lo, close, volume }));
        }
    }

    let mut vix = vec![0.0; days];
    let mut rv_window = Vec::with_capacity(10);
    for t in 0..days {
        let lo = t.saturating_sub(9);
        rv_window.clear();
        rv_window.extend_from_slice(&market[lo.max(1).min(t)..=t]);
        let rv = if rv_window.len() >= 2 {
            let m = rv_window.iter().sum::<f64>() / rv_window.len() as f64;
            (rv_window.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rv_window.len() - 1) as f64).sqrt()
        } else {
            cfg.sigma_calm * cfg.market_share.sqrt()
        };
        vix[t] = (100.0 * 252f64.sqrt() * rv / cfg.market_share.sqrt() + 1.5 * gauss(&mut rng)).max(5.0);
    }

    let market_sd = cfg.sigma_calm * cfg.market_share.sqrt();
    let mut sentiment = vec![0.0; days];
    for t in 0..days {
        let next = if t + 1 < days { market[t + 1] } else { 0.0 };
        let signal = cfg.sentiment_coupling * next / market_sd + cfg.sentiment_noise * gauss(&mut rng);
        sentiment[t] = signal.tanh();
    }
    for t in 0..days {
        let onset = t > 0 && regimes[t] == Regime::Crisis && regimes[t - 1] == Regime::Calm;
        let random_spike = rng.random::<f64>() < cfg.spike_rate;
        if onset || random_spike {
            let magnitude = rng.random_range(0.8..1.0);
            let sign = if onset || rng.random::<bool>() { -1.0 } else { 1.0 };
            sentiment[t] = sign * magnitude;
            for row in events.iter_mut() {
                row[t] = true;
            }
        }
    }

    let poisson_calm = Poisson::new(cfg.post_velocity_base).expect("positive rate");
    let poisson_crisis = Poisson::new(5.0 * cfg.post_velocity_base).expect("positive rate");
    let post_velocity = regimes
        .iter()
        .map(|r| match r {
            Regime::Calm => poisson_calm.sample(&mut rng),
            Regime::Crisis => poisson_crisis.sample(&mut rng),
        })
        .collect();

    let panel = OhlcvPanel {
        tickers: (0..n).map(|i| format!("S{i:02}")).collect(),
        sector_names: (0..cfg.n_sectors).map(|s| format!("SECTOR{s}")).collect(),
        sectors,
        dates,
        missing: vec![vec![false; days]; n],
        bars,
        market: MarketSeries { vix, sentiment, post_velocity },
        earnings,
    };
    Ok(SynthPanel {
        panel,
        regimes,
        events,
        market_returns: market,
    })
}

/// Ground-truth label file written next to a generated dataset.
pub const REGIME_FILE: &str = "regimes.csv";

/// Writes `date,regime` rows (`calm` / `crisis`).
pub fn write_regimes(synth: &SynthPanel, path: &std::path::Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "regime"])?;
    for (d, r) in synth.panel.dates.iter().zip(&synth.regimes) {
        let label = match r {
            Regime::Calm => "calm",
            Regime::Crisis => "crisis",
        };
        w.write_record([d.to_string().as_str(), label])?;
    }
    w.flush()
}

/// Crisis flags aligned to `dates` from a [`write_regimes`] file. Dates
/// missing from the file count as calm.
pub fn read_regimes(path: &std::path::Path, dates: &[NaiveDate]) -> Result<Vec<bool>, String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let mut crisis = std::collections::BTreeMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let (Some(d), Some(r)) = (rec.get(0), rec.get(1)) else {
            return Err("short regime row".into());
        };
        let d: NaiveDate = d.parse().map_err(|_| format!("bad date {d:?}"))?;
        let flag = match r {
            "calm" => false,
            "crisis" => true,
            _ => return Err(format!("unknown regime {r:?}")),
        };
        crisis.insert(d, flag);
    }
    Ok(dates.iter().map(|d| crisis.get(d).copied().unwrap_or(false)).collect())
}
