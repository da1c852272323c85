use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regimeflow::evalsuite::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Straight-line reference implementations, one loop per definition.
mod oracle {
    pub fn mape(p: &[f64], a: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for k in 0..p.len() {
            if a[k] != 0.0 {
                s += (a[k] - p[k]).abs() / a[k].abs();
                n += 1.0;
            }
        }
        s / n * 100.0
    }

    pub fn rmse(p: &[f64], a: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..p.len() {
            s += (a[k] - p[k]) * (a[k] - p[k]);
        }
        (s / p.len() as f64).sqrt()
    }

    pub fn da(p: &[f64], a: &[f64], y: &[f64]) -> f64 {
        let mut hits = 0.0;
        for k in 0..p.len() {
            if (p[k] - y[k]).signum() * f64::from(p[k] != y[k]) == (a[k] - y[k]).signum() * f64::from(a[k] != y[k]) {
                hits += 1.0;
            }
        }
        100.0 * hits / p.len() as f64
    }

    pub fn theil(p: &[f64], a: &[f64], y: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..p.len() {
            num += (a[k] - p[k]).powi(2);
            den += (a[k] - y[k]).powi(2);
        }
        num.sqrt() / den.sqrt()
    }

    pub fn ctr(conf: &[f64], err: &[f64]) -> f64 {
        let median = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(|x, y| x.partial_cmp(y).unwrap());
            s[(s.len() - 1) / 2]
        };
        let (c, e) = (median(conf), median(err));
        let mut agree = 0.0;
        for k in 0..conf.len() {
            if (conf[k] > c) == (err[k] < e) {
                agree += 1.0;
            }
        }
        100.0 * agree / conf.len() as f64
    }
}

#[test]
fn metrics_match_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..50.0)).collect();
        let a: Vec<f64> = y.iter().map(|v| v * rng.random_range(0.9..1.1)).collect();
        let p: Vec<f64> = y.iter().map(|v| v * rng.random_range(0.9..1.1)).collect();
        let ye: Vec<f64> = p.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let conf: Vec<f64> = p.iter().zip(&ye).map(|(n, e)| confidence(*n, *e)).collect();
        let err: Vec<f64> = p.iter().zip(&a).map(|(p, a)| (p - a).abs()).collect();
        assert!((mape(&p, &a).unwrap().0 - oracle::mape(&p, &a)).abs() < 1e-10);
        assert!((rmse(&p, &a).unwrap() - oracle::rmse(&p, &a)).abs() < 1e-10);
        assert!((directional_accuracy(&p, &a, &y).unwrap() - oracle::da(&p, &a, &y)).abs() < 1e-10);
        assert!((theil_u(&p, &a, &y).unwrap() - oracle::theil(&p, &a, &y)).abs() < 1e-10);
        assert!((ctr(&conf, &err).unwrap() - oracle::ctr(&conf, &err)).abs() < 1e-10);
    }
}

#[test]
fn six_point_toy_by_hand() {
    let prev = [100.0, 102.0, 101.0, 103.0, 104.0, 102.0];
    let actual = [102.0, 101.0, 103.0, 104.0, 102.0, 105.0];
    let pred = [101.0, 103.0, 102.0, 103.5, 104.5, 104.0];
    // |e|/a: 1/102, 2/101, 1/103, 0.5/104, 2.5/102, 1/105
    let want_mape = 100.0 / 6.0 * (1.0 / 102.0 + 2.0 / 101.0 + 1.0 / 103.0 + 0.5 / 104.0 + 2.5 / 102.0 + 1.0 / 105.0);
    assert!((mape(&pred, &actual).unwrap().0 - want_mape).abs() < 1e-12);
    // Moves: pred +,+,+,+,+,+ ; actual +,-,+,+,-,+  -> 4 of 6.
    assert!((directional_accuracy(&pred, &actual, &prev).unwrap() - 400.0 / 6.0).abs() < 1e-12);
    // Σe² = 1+4+1+0.25+6.25+1 = 13.5; Σ(a−y)² = 4+1+4+1+4+9 = 23.
    assert!((theil_u(&pred, &actual, &prev).unwrap() - (13.5f64 / 23.0).sqrt()).abs() < 1e-12);
    assert!((rmse(&pred, &actual).unwrap() - (13.5f64 / 6.0).sqrt()).abs() < 1e-12);
}

#[test]
fn persistence_theil_u_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prev: Vec<f64> = (0..200).map(|_| rng.random_range(10.0..20.0)).collect();
    let actual: Vec<f64> = prev.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
    assert_eq!(theil_u(&prev, &actual, &prev).unwrap(), 1.0);
}

#[test]
fn long_only_baselines() {
    let up: Vec<f64> = (0..50).map(|t| 10.0 + t as f64).collect();
    assert_eq!(long_only_da(&up).unwrap(), 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut x = 100.0;
    let walk: Vec<f64> = (0..10_001)
        .map(|_| {
            x += if rng.random::<bool>() { 1.0 } else { -1.0 };
            x
        })
        .collect();
    let da = long_only_da(&walk).unwrap();
    assert!((da - 50.0).abs() < 1.5, "{da}");
}

#[test]
fn gaussian_shift_significance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let b: Vec<f64> = (0..500).map(|_| noise.sample(&mut rng)).collect();
    let a: Vec<f64> = b.iter().map(|v| v + 0.3 + noise.sample(&mut rng)).collect();
    let s = significance(&a, &b).unwrap();
    assert!((s.cohens_d - 0.3).abs() < 0.1, "{}", s.cohens_d);
    assert!(s.p < 0.01);
}

#[test]
fn t_distribution_matches_reference_library() {
    for df in [1.0, 2.5, 7.0, 29.0, 120.0, 1000.0] {
        let reference = StudentsT::new(0.0, 1.0, df).unwrap();
        for t in [-8.0, -2.1, -0.3, 0.0, 0.9, 2.7, 15.0] {
            assert!((t_cdf(t, df) - reference.cdf(t)).abs() < 1e-10, "df {df}, t {t}");
        }
    }
}

#[test]
fn ctr_depends_only_on_median_splits() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let conf: Vec<f64> = (0..101).map(|_| rng.random_range(0.01..5.0)).collect();
    let err: Vec<f64> = (0..101).map(|_| rng.random_range(0.0..1.0)).collect();
    let cubed: Vec<f64> = conf.iter().map(|c| c.powi(3)).collect();
    assert_eq!(ctr(&conf, &err).unwrap(), ctr(&cubed, &err).unwrap());
}

fn forecasts(rng: &mut ChaCha8Rng, stocks: usize, days: usize) -> Vec<Forecast> {
    let mut out = Vec::new();
    for i in 0..stocks {
        for t in 0..days {
            let prev = rng.random_range(-1.0..1.0);
            let normal = prev + rng.random_range(-0.1..0.1);
            let event = prev + rng.random_range(-0.1..0.1);
            out.push(Forecast {
                stock: i,
                day: t,
                horizon: 1,
                pred: normal,
                normal,
                event: Some(event),
                actual: prev + rng.random_range(-0.1..0.1),
                prev,
                scale: 5.0,
                offset: 50.0,
            });
        }
    }
    out
}

#[test]
fn full_weight_on_normal_pathway_reproduces_its_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = forecasts(&mut rng, 3, 40);
    let blended: Vec<Forecast> = f
        .iter()
        .map(|x| Forecast { pred: regimeflow::nodeformer::blend(x.normal, x.event.unwrap(), 1.0), ..*x })
        .collect();
    let da = |v: &[Forecast]| {
        let p: Vec<f64> = v.iter().map(|x| x.pred).collect();
        let a: Vec<f64> = v.iter().map(|x| x.actual).collect();
        let y: Vec<f64> = v.iter().map(|x| x.prev).collect();
        directional_accuracy(&p, &a, &y).unwrap()
    };
    let normal_only: Vec<Forecast> = f.iter().map(|x| Forecast { pred: x.normal, ..*x }).collect();
    assert_eq!(da(&blended), da(&normal_only));
}

#[test]
fn single_regime_breakdown_equals_aggregate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = forecasts(&mut rng, 4, 30);
    let report = EvalReport::build("m", &f, Vec::new()).unwrap();
    let rows = regime_breakdown(&f, "ground-truth", |_| Some("calm".to_string())).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].count, 120);
    assert!((rows[0].mape - report.aggregate(1).unwrap().mape).abs() < 1e-12);
}

#[test]
fn report_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = EvalReport { model: "none".into(), ..Default::default() };
    emit_report(&empty, dir.path(), &[ReportFormat::Csv]).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.trim_end(), METRIC_COLUMNS.join(","));

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f = forecasts(&mut rng, 3, 35);
    let traj: Vec<TrajectoryPoint> =
        (0..35).map(|d| TrajectoryPoint { day: d, tau: 1.0, alpha: 0.5, mean_error: 0.2 }).collect();
    let mut report = EvalReport::build("full", &f, traj).unwrap();
    let other: Vec<Forecast> = f.iter().map(|x| Forecast { pred: x.prev, ..*x }).collect();
    report.significance.push(compare(("full", &f), ("persistence", &other), 1).unwrap());
    let d2 = tempfile::tempdir().unwrap();
    let all = [ReportFormat::Text, ReportFormat::Csv, ReportFormat::PlotData];
    emit_report(&report, d2.path(), &all).unwrap();
    let first = std::fs::read(d2.path().join("report.csv")).unwrap();
    emit_report(&report, d2.path(), &all).unwrap();
    assert_eq!(first, std::fs::read(d2.path().join("report.csv")).unwrap(), "deterministic bytes");

    let traj = std::fs::read_to_string(d2.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 36);
    assert_eq!(read_trajectory(&d2.path().join("trajectory.csv")).unwrap(), report.trajectory);

    let rows = read_metric_csv(&d2.path().join("report.csv")).unwrap();
    let stock_mape: Vec<f64> = rows.iter().filter(|r| r.0 == "stock").map(|r| r.3.mape).collect();
    let mean = stock_mape.iter().sum::<f64>() / stock_mape.len() as f64;
    let text = std::fs::read_to_string(d2.path().join("report.txt")).unwrap();
    let line = text.lines().find(|l| l.starts_with("mean")).unwrap();
    let shown: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!((shown - mean).abs() < 5e-5, "{shown} vs {mean}");

    let path = d2.path().join("forecasts.csv");
    write_forecasts(&f, &path).unwrap();
    assert_eq!(read_forecasts(&path).unwrap(), f);
}

proptest! {
    #[test]
    fn percentages_stay_in_range(
        vals in proptest::collection::vec((1.0f64..100.0, 1.0f64..100.0, 1.0f64..100.0, 1.0f64..100.0), 2..30)
    ) {
        let p: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let a: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let y: Vec<f64> = vals.iter().map(|v| v.2).collect();
        let e: Vec<f64> = vals.iter().map(|v| v.3).collect();
        let da = directional_accuracy(&p, &a, &y).unwrap();
        prop_assert!((0.0..=100.0).contains(&da));
        let conf: Vec<f64> = p.iter().zip(&e).map(|(x, z)| confidence(*x, *z)).collect();
        let err: Vec<f64> = p.iter().zip(&a).map(|(x, z)| (x - z).abs()).collect();
        let c = ctr(&conf, &err).unwrap();
        prop_assert!((0.0..=100.0).contains(&c));
    }
}
