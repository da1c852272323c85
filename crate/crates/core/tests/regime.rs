use numcore::{finite_difference_check, GradCheckOptions, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regimeflow::pipeline::{PreparedData, Splits};
use regimeflow::regime::{route, score_panel, train_autoencoder, AeTrainConfig, Pathway, INPUT_DIM};
use regimeflow::synthgen::{generate, SynthConfig};

/// 23-dimensional rows spanned by 10 fixed directions.
fn low_rank_rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..INPUT_DIM).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let c: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..INPUT_DIM).map(|d| (0..10).map(|k| c[k] * basis[k][d]).sum()).collect()
        })
        .collect()
}

#[test]
fn low_rank_data_is_learned() {
    let rows = low_rank_rows(2000, 1);
    let cfg = AeTrainConfig {
        max_epochs: 160,
        patience: 160,
        ..AeTrainConfig::default()
    };
    let (det, log) = train_autoencoder(&rows, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    // minibatch noise makes single epochs jitter; 20-epoch means must fall
    let blocks: Vec<f64> = log.train_loss.chunks(20).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in blocks.windows(2) {
        assert!(w[1] < w[0], "block loss rose: {blocks:?}");
    }
    let errs = det.reconstruction_errors(&rows).unwrap();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 1e-3, "final reconstruction loss {mean}");
}

#[test]
fn batches_hold_sixty_four_rows() {
    let rows = low_rank_rows(300, 3);
    let cfg = AeTrainConfig {
        max_epochs: 2,
        ..AeTrainConfig::default()
    };
    let (_, log) = train_autoencoder(&rows, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    // 240 training rows: three full batches and one of 48 per epoch
    assert_eq!(&log.batches[..4], &[64, 64, 64, 48]);
}

#[test]
fn empty_stable_subset_is_an_error() {
    assert!(train_autoencoder(&[], &AeTrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    let rows = low_rank_rows(8, 4);
    let cfg = AeTrainConfig {
        max_epochs: 1,
        ..AeTrainConfig::default()
    };
    let (det, _) = train_autoencoder(&rows, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let x = Tensor::matrix(8, INPUT_DIM, rows.concat()).unwrap();
    let report = finite_difference_check(
        &det.store,
        |store, tape: &mut Tape| det.loss_on(tape, store, &x),
        &GradCheckOptions::default(),
    )
    .unwrap();
    let w1 = report.params.iter().find(|p| p.name == "ae.enc1.weight").unwrap();
    assert!(w1.passed && w1.max_rel_error < 1e-4, "{w1:?}");
    assert!(report.passed(), "{report:?}");
}

#[test]
fn calm_only_market_trains() {
    let cfg = SynthConfig {
        n_days: 600,
        crisis_vol_ratio: 1.0,
        p_calm_to_crisis: 0.0,
        ..SynthConfig::default()
    };
    let synth = generate(&cfg).unwrap();
    let data = PreparedData::prepare(&synth.panel, Splits::chronological(600, [0.7, 0.15, 0.15]).unwrap()).unwrap();
    let rows = data.rows_on(data.splits.train.clone());
    let ae = AeTrainConfig {
        max_epochs: 2,
        ..AeTrainConfig::default()
    };
    train_autoencoder(&rows, &ae, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
}

proptest! {
    #[test]
    fn raising_the_threshold_never_adds_events(
        errors in prop::collection::vec(0.0f64..10.0, 1..50),
        lo in 0.0f64..10.0,
        step in 0.0f64..5.0,
    ) {
        let count = |tau: f64| errors.iter().filter(|&&e| route(e, tau) == Pathway::Event).count();
        prop_assert!(count(lo + step) <= count(lo));
    }
}

fn auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (a, &pa) in scores.iter().zip(positive) {
        if !pa {
            continue;
        }
        for (b, &pb) in scores.iter().zip(positive) {
            if pb {
                continue;
            }
            pairs += 1.0;
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

#[test]
fn default_market_errors_separate_crises() {
    let synth = generate(&SynthConfig::default()).unwrap();
    let n_days = synth.panel.n_days();
    let data = PreparedData::prepare(&synth.panel, Splits::chronological(n_days, [0.7, 0.15, 0.15]).unwrap()).unwrap();
    let (mut det, _) =
        train_autoencoder(&data.stable_rows(), &AeTrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let train_errors = det.reconstruction_errors(&data.train_rows()).unwrap();
    det.calibrate(&train_errors);
    let events = train_errors.iter().filter(|&&e| route(e, det.tau0) == Pathway::Event).count();
    let frac = events as f64 / train_errors.len() as f64;
    assert!((frac - 0.05).abs() <= 0.01, "event fraction {frac}");

    let scores = score_panel(&det, &data.features).unwrap();
    let days: Vec<usize> = (0..n_days).filter(|&t| scores.day_mean[t].is_finite()).collect();
    let s: Vec<f64> = days.iter().map(|&t| scores.day_mean[t]).collect();
    let y: Vec<bool> = days.iter().map(|&t| synth.is_crisis(t)).collect();
    let crisis_mean = mean_where(&s, &y, true);
    let calm_mean = mean_where(&s, &y, false);
    assert!(crisis_mean > calm_mean, "crisis {crisis_mean} calm {calm_mean}");
    let a = auroc(&s, &y);
    println!("AUROC {a:.4}, crisis days {}", y.iter().filter(|&&c| c).count());
    assert!(a > 0.85, "AUROC {a}");
}

fn mean_where(s: &[f64], y: &[bool], want: bool) -> f64 {
    let v: Vec<f64> = s.iter().zip(y).filter(|(_, &c)| c == want).map(|(v, _)| *v).collect();
    v.iter().sum::<f64>() / v.len() as f64
}
