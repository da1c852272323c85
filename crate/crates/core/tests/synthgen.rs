use regimeflow::synthgen::{generate, Regime, SynthConfig};

fn log_returns(p: &regimeflow::marketdata::OhlcvPanel, i: usize) -> Vec<f64> {
    (1..p.n_days()).map(|t| (p.close(i, t).unwrap() / p.close(i, t - 1).unwrap()).ln()).collect()
}

#[test]
fn single_regime_volatility_matches_calm_sigma() {
    let cfg = SynthConfig {
        n_days: 2000,
        crisis_vol_ratio: 1.0,
        p_calm_to_crisis: 0.0,
        ..Default::default()
    };
    let s = generate(&cfg).unwrap();
    assert!(s.regimes.iter().all(|r| *r == Regime::Calm));
    for i in 0..cfg.n_stocks {
        let r = log_returns(&s.panel, i);
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!((sd / cfg.sigma_calm - 1.0).abs() < 0.10, "stock {i}: realised {sd}");
    }
}

#[test]
fn crisis_days_move_more_than_twice_as_much() {
    let cfg = SynthConfig { n_days: 2000, crisis_vol_ratio: 5.0, ..Default::default() };
    let s = generate(&cfg).unwrap();
    let (mut calm, mut crisis) = (Vec::new(), Vec::new());
    for t in 1..cfg.n_days {
        let m = (0..cfg.n_stocks)
            .map(|i| (s.panel.close(i, t).unwrap() / s.panel.close(i, t - 1).unwrap()).ln().abs())
            .sum::<f64>()
            / cfg.n_stocks as f64;
        if s.is_crisis(t) { crisis.push(m) } else { calm.push(m) }
    }
    assert!(!crisis.is_empty());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&crisis) / mean(&calm) > 2.0);
}

#[test]
fn transition_frequencies_match_configuration() {
    let cfg = SynthConfig { n_days: 20_000, n_stocks: 2, n_sectors: 1, ..Default::default() };
    let s = generate(&cfg).unwrap();
    let (mut from_calm, mut calm_to_crisis, mut from_crisis, mut crisis_to_calm) = (0, 0, 0, 0);
    for w in s.regimes.windows(2) {
        match (w[0], w[1]) {
            (Regime::Calm, next) => {
                from_calm += 1;
                calm_to_crisis += (next == Regime::Crisis) as usize;
            }
            (Regime::Crisis, next) => {
                from_crisis += 1;
                crisis_to_calm += (next == Regime::Calm) as usize;
            }
        }
    }
    let pcx = calm_to_crisis as f64 / from_calm as f64;
    let pxc = crisis_to_calm as f64 / from_crisis as f64;
    assert!((pcx - cfg.p_calm_to_crisis).abs() < 0.02, "{pcx}");
    assert!((pxc - cfg.p_crisis_to_calm).abs() < 0.02, "{pxc}");
}

#[test]
fn generated_panels_always_pass_invariants() {
    for seed in 0..20 {
        let s = generate(&SynthConfig { n_days: 400, seed, crisis_vol_ratio: 6.0, ..Default::default() }).unwrap();
        s.panel.validate().unwrap();
        assert!(s.panel.bars.iter().flatten().all(|b| b.unwrap().volume > 0.0));
    }
}

#[test]
fn sentiment_leads_next_day_market_return() {
    let s = generate(&SynthConfig::default()).unwrap();
    let sent = &s.panel.market.sentiment;
    let next: Vec<f64> = s.market_returns[1..].to_vec();
    let a = &sent[..sent.len() - 1];
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, next.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&next).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = next.iter().map(|y| (y - mb).powi(2)).sum();
    assert!(cov / (va * vb).sqrt() > 0.2);
}

#[test]
fn post_velocity_rises_in_crisis() {
    let s = generate(&SynthConfig::default()).unwrap();
    let pv = &s.panel.market.post_velocity;
    let mean = |crisis: bool| {
        let v: Vec<f64> = (0..pv.len()).filter(|&t| s.is_crisis(t) == crisis).map(|t| pv[t]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let ratio = mean(true) / mean(false);
    assert!((ratio - 5.0).abs() < 0.5, "{ratio}");
}
