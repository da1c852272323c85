//! Autoencoder regime detector.
//!
//! `z = relu(relu(x·W₁ + b₁)·W₂ + b₂)`, `x̂ = relu(z·W₃ + b₃)·W₄ + b₄`, with
//! widths 23 → 64 → 32 → 64 → 23. The squared reconstruction error of a
//! stock-day is its anomaly score; scores at or above the threshold route to
//! the event pathway.

use numcore::{AdamConfig, AdamState, Linear, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::marketdata::{FeaturePanel, N_FEATURES, N_ROUTER};

pub const INPUT_DIM: usize = N_FEATURES + N_ROUTER;
pub const HIDDEN_DIM: usize = 64;
pub const LATENT_DIM: usize = 32;
pub const THRESHOLD_PERCENTILE: f64 = 95.0;

#[derive(Debug, Error)]
pub enum RegimeError {
    #[error("no stable training rows")]
    EmptyTrainingSet,
    #[error("expected input of length {INPUT_DIM}, got {0}")]
    InputLength(usize),
    #[error(transparent)]
    Numeric(#[from] numcore::NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pathway {
    Normal,
    Event,
}

/// Event iff `e ≥ τ`.
pub fn route(e: f64, tau: f64) -> Pathway {
    if e >= tau {
        Pathway::Event
    } else {
        Pathway::Normal
    }
}

/// Percentile by linear interpolation between order statistics
/// (rank `p/100 · (n − 1)`).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty set");
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Chronological tail of the stable rows held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 20,
            patience: 3,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AeTrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub batches: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeDetector {
    pub store: ParamStore,
    enc1: Linear,
    enc2: Linear,
    dec1: Linear,
    dec2: Linear,
    /// Routing threshold.
    pub tau: f64,
    /// Initial threshold, the 95th percentile of training errors.
    pub tau0: f64,
    /// Training-error percentiles 0, 1, …, 100.
    pub percentiles: Vec<f64>,
}

impl RegimeDetector {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let enc1 = Linear::new(&mut store, "ae.enc1", INPUT_DIM, HIDDEN_DIM, true, rng);
        let enc2 = Linear::new(&mut store, "ae.enc2", HIDDEN_DIM, LATENT_DIM, true, rng);
        let dec1 = Linear::new(&mut store, "ae.dec1", LATENT_DIM, HIDDEN_DIM, true, rng);
        let dec2 = Linear::new(&mut store, "ae.dec2", HIDDEN_DIM, INPUT_DIM, true, rng);
        Self {
            store,
            enc1,
            enc2,
            dec1,
            dec2,
            tau: 0.0,
            tau0: 0.0,
            percentiles: Vec::new(),
        }
    }

    pub fn layers(&self) -> [Linear; 4] {
        [self.enc1, self.enc2, self.dec1, self.dec2]
    }

    pub fn e_min(&self) -> f64 {
        self.percentiles.first().copied().unwrap_or(0.0)
    }

    pub fn e_max(&self) -> f64 {
        self.percentiles.last().copied().unwrap_or(0.0)
    }

    /// Records the encoder on `tape` for a batch `[rows, 23]`.
    pub fn encode_on(&self, tape: &mut Tape, store: &ParamStore, x: numcore::Var) -> numcore::Result<numcore::Var> {
        let h = self.enc1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let z = self.enc2.forward(tape, store, h)?;
        tape.relu(z)
    }

    pub fn decode_on(&self, tape: &mut Tape, store: &ParamStore, z: numcore::Var) -> numcore::Result<numcore::Var> {
        let h = self.dec1.forward(tape, store, z)?;
        let h = tape.relu(h)?;
        self.dec2.forward(tape, store, h)
    }

    /// Batch loss `mean_rows ‖x − x̂‖²`.
    pub fn loss_on(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor) -> numcore::Result<numcore::Var> {
        let xv = tape.leaf(x.clone());
        let z = self.encode_on(tape, store, xv)?;
        let xh = self.decode_on(tape, store, z)?;
        let d = tape.sub(xh, xv)?;
        let sq = tape.square(d)?;
        let per_row = tape.sum_cols(sq)?;
        tape.mean(per_row)
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>, RegimeError> {
        if x.len() != INPUT_DIM {
            return Err(RegimeError::InputLength(x.len()));
        }
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::row(x.to_vec()));
        let z = self.encode_on(&mut tape, &self.store, xv)?;
        Ok(tape.value(z).data().to_vec())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, RegimeError> {
        if z.len() != LATENT_DIM {
            return Err(RegimeError::InputLength(z.len()));
        }
        let mut tape = Tape::new();
        let zv = tape.leaf(Tensor::row(z.to_vec()));
        let xh = self.decode_on(&mut tape, &self.store, zv)?;
        Ok(tape.value(xh).data().to_vec())
    }

    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64, RegimeError> {
        Ok(self.reconstruction_errors(&[x.to_vec()])?[0])
    }

    /// Errors for many rows, evaluated in blocks.
    pub fn reconstruction_errors(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, RegimeError> {
        let mut out = Vec::with_capacity(rows.len());
        for block in rows.chunks(512) {
            let mut data = Vec::with_capacity(block.len() * INPUT_DIM);
            for r in block {
                if r.len() != INPUT_DIM {
                    return Err(RegimeError::InputLength(r.len()));
                }
                data.extend_from_slice(r);
            }
            let x = Tensor::matrix(block.len(), INPUT_DIM, data)?;
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let z = self.encode_on(&mut tape, &self.store, xv)?;
            let xh = self.decode_on(&mut tape, &self.store, z)?;
            let d = tape.sub(xh, xv)?;
            let sq = tape.square(d)?;
            let e = tape.sum_cols(sq)?;
            out.extend_from_slice(tape.value(e).data());
        }
        Ok(out)
    }

    /// Sets the percentile table and `τ = τ₀ = p95` from training errors.
    pub fn calibrate(&mut self, training_errors: &[f64]) {
        let mut sorted = training_errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        self.percentiles = (0..=100).map(|p| percentile_sorted(&sorted, p as f64)).collect();
        self.tau0 = init_threshold(&sorted);
        self.tau = self.tau0;
    }

    /// Threshold clipped into the training-error range.
    pub fn clip_tau(&self, tau: f64) -> f64 {
        tau.clamp(self.e_min(), self.e_max())
    }
}

/// `τ₀`: the 95th percentile of training reconstruction errors.
pub fn init_threshold(errors: &[f64]) -> f64 {
    percentile(errors, THRESHOLD_PERCENTILE)
}

fn batch_tensor(rows: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(idx.len() * INPUT_DIM);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    Tensor::matrix(idx.len(), INPUT_DIM, data).expect("finite feature rows")
}

fn mean_loss(det: &RegimeDetector, rows: &[Vec<f64>]) -> Result<f64, RegimeError> {
    let e = det.reconstruction_errors(rows)?;
    Ok(e.iter().sum::<f64>() / e.len().max(1) as f64)
}

/// Trains on chronologically ordered stable rows and calibrates the threshold
/// on the errors of all training rows. Restores the parameters of the epoch
/// with the best validation loss.
pub fn train_autoencoder(
    rows: &[Vec<f64>],
    cfg: &AeTrainConfig,
    init_rng: &mut ChaCha8Rng,
) -> Result<(RegimeDetector, AeTrainLog), RegimeError> {
    if rows.is_empty() {
        return Err(RegimeError::EmptyTrainingSet);
    }
    if let Some(r) = rows.iter().find(|r| r.len() != INPUT_DIM) {
        return Err(RegimeError::InputLength(r.len()));
    }
    let mut det = RegimeDetector::new(init_rng);
    let n_val = ((rows.len() as f64 * cfg.val_fraction).round() as usize).min(rows.len() - 1);
    let (train, val) = rows.split_at(rows.len() - n_val);
    let mut adam = AdamState::new(&det.store, AdamConfig::with_lr(cfg.lr));
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = AeTrainLog::default();
    let mut best = (f64::INFINITY, det.store.clone());
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            log.batches.push(idx.len());
            let x = batch_tensor(train, idx);
            let mut tape = Tape::new();
            let loss = det.loss_on(&mut tape, &det.store, &x)?;
            total += tape.value(loss).item() * idx.len() as f64;
            let grads = tape.backward_scalar(loss)?.into_param_grads();
            adam.step(&mut det.store, &grads)?;
        }
        log.train_loss.push(total / train.len() as f64);
        let v = if val.is_empty() { log.train_loss[epoch] } else { mean_loss(&det, val)? };
        log.val_loss.push(v);
        if v < best.0 {
            best = (v, det.store.clone());
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    det.store = best.1;
    let errors = det.reconstruction_errors(rows)?;
    det.calibrate(&errors);
    Ok((det, log))
}

/// One shuffled minibatch pass over `rows` with a caller-owned optimiser.
/// Returns the mean training loss; the threshold is left alone.
pub fn fine_tune_epoch(
    det: &mut RegimeDetector,
    rows: &[Vec<f64>],
    adam: &mut AdamState,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, RegimeError> {
    if rows.is_empty() {
        return Err(RegimeError::EmptyTrainingSet);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for idx in order.chunks(batch_size.max(1)) {
        let x = batch_tensor(rows, idx);
        let mut tape = Tape::new();
        let loss = det.loss_on(&mut tape, &det.store, &x)?;
        total += tape.value(loss).item() * idx.len() as f64;
        let grads = tape.backward_scalar(loss)?.into_param_grads();
        adam.step(&mut det.store, &grads)?;
    }
    Ok(total / rows.len() as f64)
}

/// Per-stock-day anomaly scores over a feature panel.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyScores {
    pub n_stocks: usize,
    pub n_days: usize,
    /// `[stock * n_days + day]`, `NaN` where the row is unusable.
    pub errors: Vec<f64>,
    pub day_mean: Vec<f64>,
    pub day_std: Vec<f64>,
}

impl AnomalyScores {
    pub fn get(&self, stock: usize, day: usize) -> Option<f64> {
        let e = self.errors[stock * self.n_days + day];
        e.is_finite().then_some(e)
    }
}

pub fn score_panel(det: &RegimeDetector, features: &FeaturePanel) -> Result<AnomalyScores, RegimeError> {
    let (n, days) = (features.n_stocks, features.n_days);
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    for i in 0..n {
        for t in 0..days {
            if features.is_complete(i, t) {
                keys.push(i * days + t);
                rows.push(features.joint_row(i, t).to_vec());
            }
        }
    }
    let e = det.reconstruction_errors(&rows)?;
    let mut errors = vec![f64::NAN; n * days];
    for (k, v) in keys.into_iter().zip(e) {
        errors[k] = v;
    }
    let mut day_mean = vec![f64::NAN; days];
    let mut day_std = vec![f64::NAN; days];
    for t in 0..days {
        let v: Vec<f64> = (0..n).map(|i| errors[i * days + t]).filter(|e| e.is_finite()).collect();
        if v.is_empty() {
            continue;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        day_mean[t] = m;
        day_std[t] = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    }
    Ok(AnomalyScores { n_stocks: n, n_days: days, errors, day_mean, day_std })
}
