//! The trainable system and its four training stages.

use std::ops::Range;

use numcore::{AdamConfig, AdamState, ParamStore, RngStreams, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::env::ForecastEnv;
use super::predict::{PredictionTable, Selector};
use super::windows::{sweep, tiling, TokenSources};
use super::{Ablation, DataSource, PipelineError, PreparedData, RunConfig, Splits};
use crate::control::{run_loop, ErrorBounds, LoopConfig, SacAgent, StepLog, STATE_DIM};
use crate::marketdata::load_dataset;
use crate::nodeformer::{
    composite_loss, init_edges, ContextSources, ContextTable, PathwayModel, Variant,
};
use crate::regime::{
    fine_tune_epoch, percentile, score_panel, train_autoencoder, AeTrainConfig, AnomalyScores, RegimeDetector,
};
use crate::synthgen::{generate, read_regimes, REGIME_FILE};

/// Prepared data plus everything fixed by it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub data: PreparedData,
    /// Ground-truth crisis flag per day, when the source provides one.
    pub crisis: Option<Vec<bool>>,
    /// Edge prior from sectors and training-split return correlations.
    pub edges: Tensor,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let (panel, crisis) = match &cfg.data {
            DataSource::Synthetic(s) => {
                let g = generate(s).map_err(|e| PipelineError::Config(e.0))?;
                let crisis = (0..g.panel.n_days()).map(|t| g.is_crisis(t)).collect();
                (g.panel, Some(crisis))
            }
            DataSource::Directory(dir) => {
                let panel = load_dataset(dir)?;
                let labels = dir.join(REGIME_FILE);
                let crisis = if labels.exists() {
                    Some(read_regimes(&labels, &panel.dates).map_err(PipelineError::Config)?)
                } else {
                    None
                };
                (panel, crisis)
            }
        };
        let splits = Splits::chronological(panel.n_days(), cfg.split)?;
        let data = PreparedData::prepare(&panel, splits)?;
        let edges = training_edges(&data)?;
        Ok(Self { data, crisis, edges })
    }
}

fn training_edges(d: &PreparedData) -> Result<Tensor, PipelineError> {
    let train_end = d.splits.train_end();
    let returns: Vec<Vec<Option<f64>>> = (0..d.n_stocks())
        .map(|i| {
            (0..d.n_days())
                .map(|t| match (t.checked_sub(1).and_then(|p| d.panel.close(i, p)), d.panel.close(i, t)) {
                    (Some(a), Some(b)) if a > 0.0 => Some(b / a - 1.0),
                    _ => None,
                })
                .collect()
        })
        .collect();
    Ok(init_edges(&d.panel.sectors, &returns, 0..train_end, train_end)?)
}

/// One component's progress within a stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageLog {
    pub stage: u8,
    pub component: String,
    pub planned_epochs: usize,
    /// Epoch means: losses, or rewards for the controller.
    pub values: Vec<f64>,
}

/// `"1-4"`, `"2"` or `"1,2,3"`.
pub fn parse_stages(s: &str) -> Result<Vec<u8>, PipelineError> {
    let bad = || PipelineError::Config(format!("invalid stage list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: u8 = a.trim().parse().map_err(|_| bad())?;
            let b: u8 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() || out.iter().any(|s| !(1..=4).contains(s)) {
        return Err(bad());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct System {
    pub config: RunConfig,
    pub dataset: Dataset,
    pub detector: Option<RegimeDetector>,
    pub scores: Option<AnomalyScores>,
    pub context: Option<ContextTable>,
    pub normal: Option<PathwayModel>,
    pub event: Option<PathwayModel>,
    /// The only pathway when dual routing is off.
    pub single: Option<PathwayModel>,
    pub agent: Option<SacAgent>,
    /// Controller-held threshold and blending weight.
    pub tau: f64,
    pub alpha: f64,
    /// Last completed stage, 0 before training.
    pub stage: u8,
    pub rngs: RngStreams,
    pub logs: Vec<StageLog>,
    pub controller_steps: Vec<StepLog>,
}

/// Which windows a pathway learns from and what it sees.
struct Plan<'a> {
    keep: &'a dyn Fn(usize, usize) -> bool,
    with_context: bool,
    flag: Option<&'a dyn Fn(usize, usize) -> f64>,
}

impl System {
    pub fn new(config: RunConfig, dataset: Dataset) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut rngs = RngStreams::new(config.seed);
        let init = rngs.stream(numcore::rng::INIT);
        let edges = &dataset.edges;
        let m = &config.model;
        let (mut normal, mut event, mut single) = (None, None, None);
        if config.dual_enabled {
            normal = Some(PathwayModel::new(Variant::Normal, m.clone(), edges.clone(), "normal", init)?);
            event = Some(PathwayModel::new(Variant::Event, m.clone(), edges.clone(), "event", init)?);
        } else {
            let v = if config.ae_enabled { Variant::Conditioned } else { Variant::Normal };
            single = Some(PathwayModel::new(v, m.clone(), edges.clone(), "single", init)?);
        }
        let agent = config.sac_enabled.then(|| {
            let dim = if config.dual_enabled { 2 } else { 1 };
            SacAgent::new(STATE_DIM, dim, config.controller.sac.clone(), init)
        });
        Ok(Self {
            tau: 0.0,
            alpha: config.controller.initial_alpha,
            config,
            dataset,
            detector: None,
            scores: None,
            context: None,
            normal,
            event,
            single,
            agent,
            stage: 0,
            rngs,
            logs: Vec::new(),
            controller_steps: Vec::new(),
        })
    }

    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        let dataset = Dataset::load(&config)?;
        Self::new(config, dataset)
    }

    pub fn variant(&self) -> Ablation {
        self.config.ablation()
    }

    pub fn data(&self) -> &PreparedData {
        &self.dataset.data
    }

    pub fn selector(&self) -> Selector {
        match (self.config.ae_enabled, self.config.dual_enabled) {
            (true, true) => Selector::Dual,
            (true, false) => Selector::Conditioned,
            _ => Selector::Plain,
        }
    }

    pub fn tau0(&self) -> f64 {
        self.detector.as_ref().map_or(0.0, |d| d.tau0)
    }

    pub fn bounds(&self) -> ErrorBounds {
        let d = self.detector.as_ref();
        ErrorBounds {
            min: d.map_or(0.0, |d| d.e_min()),
            max: d.map_or(0.0, |d| d.e_max()),
        }
    }

    /// Whether forecasts take `(τ, α)` from the trained policy.
    pub fn controller_active(&self) -> bool {
        self.agent.is_some() && self.stage >= 3
    }

    /// Every parameter store, named by component.
    pub fn stores(&self) -> Vec<(String, &ParamStore)> {
        let mut out = Vec::new();
        if let Some(d) = &self.detector {
            out.push(("ae".to_string(), &d.store));
        }
        for (name, m) in [("normal", &self.normal), ("event", &self.event), ("single", &self.single)] {
            if let Some(m) = m {
                out.push((name.to_string(), &m.store));
            }
        }
        if let Some(a) = &self.agent {
            for (name, s) in a.stores() {
                out.push((format!("sac.{name}"), s));
            }
        }
        out
    }

    pub fn stores_mut(&mut self) -> Vec<(String, &mut ParamStore)> {
        let mut out = Vec::new();
        if let Some(d) = &mut self.detector {
            out.push(("ae".to_string(), &mut d.store));
        }
        for (name, m) in [("normal", &mut self.normal), ("event", &mut self.event), ("single", &mut self.single)] {
            if let Some(m) = m {
                out.push((name.to_string(), &mut m.store));
            }
        }
        if let Some(a) = &mut self.agent {
            for (name, s) in a.stores_mut() {
                out.push((format!("sac.{name}"), s));
            }
        }
        out
    }

    /// SHA-256 over every parameter store.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, s) in self.stores() {
            h.update(name.as_bytes());
            h.update(s.fingerprint().as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with the controller removed: the fixed-threshold variant.
    pub fn without_controller(&self) -> Self {
        let mut s = self.clone();
        s.config = s.config.configure_ablation(Ablation::NoSac);
        s.agent = None;
        s
    }

    pub(crate) fn round_state(&mut self) {
        for (_, s) in self.stores_mut() {
            s.round_to_f32();
        }
        self.tau = self.tau as f32 as f64;
        self.alpha = self.alpha as f32 as f64;
    }

    pub(super) fn sources(&self) -> TokenSources<'_> {
        TokenSources {
            data: &self.dataset.data,
            scores: self.scores.as_ref(),
            context: self.context.as_ref(),
            tau0: self.tau0(),
            anchor: self.config.model.anchor,
        }
    }

    /// Errors of complete training rows.
    pub fn training_errors(&self) -> Vec<f64> {
        let Some(s) = &self.scores else { return Vec::new() };
        let d = self.data();
        let mut out = Vec::new();
        for t in d.splits.train.clone() {
            for i in 0..d.n_stocks() {
                if let Some(e) = s.get(i, t) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// Rescores the panel, recalibrates the percentiles and `τ₀` on training
    /// rows, and rebuilds the event context.
    pub(crate) fn rescore(&mut self) -> Result<(), PipelineError> {
        let Some(det) = &self.detector else { return Ok(()) };
        let d = &self.dataset.data;
        self.scores = Some(score_panel(det, &d.features)?);
        let errors = self.training_errors();
        if errors.is_empty() {
            return Err(PipelineError::Config("no complete training rows to calibrate on".into()));
        }
        let det = self.detector.as_mut().expect("detector present");
        det.calibrate(&errors);
        let scores = self.scores.as_ref().expect("scores present");
        let p = &d.panel;
        self.context = Some(ContextTable::build(&ContextSources {
            vix: &p.market.vix,
            vix_terciles: d.stats.vix_terciles,
            sentiment: &p.market.sentiment,
            sentiment_std: d.stats.sentiment_std,
            sectors: &p.sectors,
            earnings: &p.earnings,
            error_mean: &scores.day_mean,
            error_std: &scores.day_std,
            tau0: det.tau0,
        }));
        Ok(())
    }

    /// Rescores and maps `τ` to the same normalised position in the new range.
    fn rescore_keeping_tau(&mut self) -> Result<(), PipelineError> {
        let u = self.bounds().normalize(self.tau);
        self.rescore()?;
        let b = self.bounds();
        self.tau = b.min + u * b.width();
        Ok(())
    }

    fn training_days(&self) -> Range<usize> {
        let d = self.data();
        d.first_usable_day()..d.splits.train_end()
    }

    /// Index and length of the shortest horizon.
    pub fn reward_horizon(&self) -> (usize, usize) {
        let h = &self.config.model.horizons;
        let k = (0..h.len()).min_by_key(|&k| h[k]).expect("validated horizons");
        (k, h[k])
    }

    /// Runs `stages` in order. They must continue from the last completed
    /// stage without gaps; stages the variant does not use are no-ops.
    /// `after` sees the system after each stage.
    pub fn run_stages(
        &mut self,
        stages: &[u8],
        mut after: impl FnMut(&System) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let mut expect = self.stage + 1;
        for &s in stages {
            if s != expect {
                return Err(PipelineError::StageOrder(if s > expect {
                    format!("stage {s} requested but stage {expect} has not run")
                } else {
                    format!("stage {s} already completed (last completed: {})", self.stage)
                }));
            }
            expect += 1;
        }
        for &s in stages {
            if self.variant().stages().contains(&s) {
                match s {
                    1 => self.stage1()?,
                    2 => self.stage2()?,
                    3 => self.stage3()?,
                    _ => self.stage4()?,
                }
            }
            self.stage = s;
            self.round_state();
            after(self)?;
        }
        Ok(())
    }

    fn stage1(&mut self) -> Result<(), PipelineError> {
        let rows = self.data().stable_rows();
        let a = self.config.ae.clone();
        let cfg = AeTrainConfig {
            lr: a.lr,
            batch_size: a.batch_size,
            max_epochs: a.epochs,
            patience: a.patience,
            val_fraction: a.val_fraction,
            seed: self.rngs.stream("ae.shuffle").random(),
        };
        let (mut det, log) = train_autoencoder(&rows, &cfg, self.rngs.stream("init.ae"))?;
        det.store.round_to_f32();
        self.detector = Some(det);
        self.rescore()?;
        self.tau = self.tau0();
        self.alpha = self.config.controller.initial_alpha;
        self.logs.push(StageLog {
            stage: 1,
            component: "autoencoder".into(),
            planned_epochs: a.epochs,
            values: log.train_loss,
        });
        Ok(())
    }

    /// Routing percentiles of training errors for the two pathways.
    fn routing_cuts(&self) -> (f64, f64) {
        let e = self.training_errors();
        if e.is_empty() {
            return (f64::INFINITY, f64::NEG_INFINITY);
        }
        let p = &self.config.pathway;
        (percentile(&e, p.normal_percentile), percentile(&e, p.event_percentile))
    }

    /// `epochs` passes of every pathway at `lr`, each with its own optimiser.
    fn train_pathways(&mut self, stage: u8, lr: f64, epochs: usize) -> Result<(), PipelineError> {
        let (cut_normal, cut_event) = self.routing_cuts();
        let tau0 = self.tau0();
        let mut models = [
            ("normal", self.normal.take()),
            ("event", self.event.take()),
            ("single", self.single.take()),
        ];
        let result = (|| {
            for (name, slot) in &mut models {
                let Some(model) = slot else { continue };
                let losses = {
                    let src = self.sources();
                    let err = |i, t| src.error(i, t);
                    let keep_normal = |i, t| err(i, t).is_some_and(|e| e < cut_normal);
                    let keep_event = |i, t| err(i, t).is_some_and(|e| e >= cut_event);
                    let keep_all = |_, _| true;
                    let flag = |i, t| if err(i, t).is_some_and(|e| e >= tau0) { 1.0 } else { 0.0 };
                    let plan = match model.variant {
                        Variant::Normal if self.config.dual_enabled => {
                            Plan { keep: &keep_normal, with_context: false, flag: None }
                        }
                        Variant::Normal => Plan { keep: &keep_all, with_context: false, flag: None },
                        Variant::Event => Plan { keep: &keep_event, with_context: true, flag: None },
                        Variant::Conditioned => Plan { keep: &keep_all, with_context: false, flag: Some(&flag) },
                    };
                    let mut streams = self.rngs.clone();
                    let losses = train_epochs(
                        model,
                        &src,
                        &plan,
                        self.training_days(),
                        &self.config,
                        lr,
                        epochs,
                        &mut streams,
                        name,
                    )?;
                    (losses, streams)
                };
                self.rngs = losses.1;
                self.logs.push(StageLog {
                    stage,
                    component: format!("pathway.{name}"),
                    planned_epochs: epochs,
                    values: losses.0,
                });
            }
            Ok::<(), PipelineError>(())
        })();
        let [(_, n), (_, e), (_, s)] = models;
        (self.normal, self.event, self.single) = (n, e, s);
        result
    }

    fn stage2(&mut self) -> Result<(), PipelineError> {
        let p = &self.config.pathway;
        self.train_pathways(2, p.lr, p.epochs)
    }

    /// Frozen pathway outputs on `days`, sweeping overlapping windows.
    /// Conditioned pathways run twice with the flag of the read positions
    /// forced to 0 and to 1; earlier positions use `τ₀`.
    pub fn prediction_table(&self, days: Range<usize>) -> Result<PredictionTable, PipelineError> {
        let d = self.data();
        let hz = self.config.model.horizons.len();
        let src = self.sources();
        let tau0 = self.tau0();
        let mut table = PredictionTable::new(d.n_stocks(), d.n_days(), hz, self.selector() != Selector::Plain);
        let floor = d.first_usable_day();
        for (window, kept) in sweep(days, floor, self.config.model.seq_len) {
            let store = |dst: &mut Vec<f64>, out: &Tensor| {
                for i in 0..d.n_stocks() {
                    for t in kept.clone() {
                        let row = i * window.len() + (t - window.start);
                        for k in 0..hz {
                            dst[(i * d.n_days() + t) * hz + k] = out.get(row, k);
                        }
                    }
                }
            };
            match self.selector() {
                Selector::Dual => {
                    let n = self.normal.as_ref().expect("dual system has a normal pathway");
                    let e = self.event.as_ref().expect("dual system has an event pathway");
                    let (yn, _) = n.predict(&src.input(&window, false, None))?;
                    let (ye, _) = e.predict(&src.input(&window, true, None))?;
                    store(&mut table.primary, &yn);
                    store(table.secondary.as_mut().expect("secondary"), &ye);
                }
                Selector::Conditioned => {
                    let m = self.single.as_ref().expect("single pathway");
                    for forced in [0.0, 1.0] {
                        let flag = |i, t| {
                            if kept.contains(&t) {
                                forced
                            } else if src.error(i, t).is_some_and(|e| e >= tau0) {
                                1.0
                            } else {
                                0.0
                            }
                        };
                        let (y, _) = m.predict(&src.input(&window, false, Some(&flag)))?;
                        let dst = if forced == 0.0 { &mut table.primary } else { table.secondary.as_mut().expect("secondary") };
                        store(dst, &y);
                    }
                }
                Selector::Plain => {
                    let m = self.single.as_ref().expect("single pathway");
                    let (y, _) = m.predict(&src.input(&window, false, None))?;
                    store(&mut table.primary, &y);
                }
            }
        }
        Ok(table)
    }

    /// Controller steps over the training stream with frozen predictions.
    fn controller_epochs(
        &mut self,
        table: &PredictionTable,
        epochs: usize,
        steps: usize,
        first_start_steps: usize,
    ) -> Result<Vec<f64>, PipelineError> {
        let mut agent = self.agent.take().expect("controller present");
        let mut rng = self.rngs.stream("sac").clone();
        let scores = self.scores.clone().expect("scores after stage 1");
        let result = (|| {
            let train_end = self.data().splits.train_end();
            let (_, h) = self.reward_horizon();
            let mut env = ForecastEnv::new(
                table,
                self.data(),
                &scores,
                self.selector(),
                self.bounds(),
                self.tau0(),
                self.config.controller.reward,
                self.reward_horizon(),
                self.training_days().filter(|t| t + h < train_end),
                agent.action_dim,
                (self.tau, self.alpha),
            )?;
            let mut rewards = Vec::with_capacity(epochs);
            let mut steps_log = Vec::new();
            for epoch in 0..epochs {
                let cfg = LoopConfig {
                    start_steps: if epoch == 0 { first_start_steps } else { 0 },
                    ..LoopConfig::new(steps)
                };
                let logs = run_loop(&mut agent, &mut env, &cfg, &mut rng, |_| {})?;
                rewards.push(logs.iter().map(|l| l.reward).sum::<f64>() / logs.len().max(1) as f64);
                steps_log.extend(logs);
            }
            Ok::<_, PipelineError>((rewards, steps_log, env.tau, env.alpha))
        })();
        self.agent = Some(agent);
        *self.rngs.stream("sac") = rng;
        let (rewards, steps_log, tau, alpha) = result?;
        (self.tau, self.alpha) = (tau, alpha);
        let offset = self.controller_steps.len();
        self.controller_steps.extend(steps_log.into_iter().enumerate().map(|(k, mut l)| {
            l.step = offset + k;
            l
        }));
        Ok(rewards)
    }

    fn stage3(&mut self) -> Result<(), PipelineError> {
        let c = self.config.controller.clone();
        let table = self.prediction_table(self.training_days())?;
        let agent = self.agent.as_mut().expect("controller present");
        agent.reset_optimizers(c.sac.lr);
        agent.buffer.clear();
        let start = LoopConfig::new(c.epochs * c.steps_per_epoch).start_steps;
        let rewards = self.controller_epochs(&table, c.epochs, c.steps_per_epoch, start)?;
        self.logs.push(StageLog {
            stage: 3,
            component: "controller".into(),
            planned_epochs: c.epochs,
            values: rewards,
        });
        Ok(())
    }

    /// Per epoch: autoencoder pass, rescoring with the threshold held at its
    /// normalised position, one pass of each pathway on the new routing, and
    /// controller steps on refreshed predictions.
    fn stage4(&mut self) -> Result<(), PipelineError> {
        let f = self.config.finetune.clone();
        let rows = self.data().stable_rows();
        let mut ae_adam = {
            let det = self.detector.as_ref().expect("stage 4 needs the autoencoder");
            AdamState::new(&det.store, AdamConfig::with_lr(f.ae_lr))
        };
        if let Some(a) = &mut self.agent {
            a.reset_optimizers(f.sac_lr);
            a.buffer.clear();
        }
        let mut ae_losses = Vec::new();
        let mut rewards = Vec::new();
        let log_at = self.logs.len();
        for _ in 0..f.epochs {
            let batch = self.config.ae.batch_size;
            let mut rng = self.rngs.stream("ae.finetune").clone();
            let det = self.detector.as_mut().expect("detector");
            ae_losses.push(fine_tune_epoch(det, &rows, &mut ae_adam, batch, &mut rng)?);
            *self.rngs.stream("ae.finetune") = rng;
            self.rescore_keeping_tau()?;
            self.train_pathways(4, f.pathway_lr, 1)?;
            if self.agent.is_some() {
                let table = self.prediction_table(self.training_days())?;
                rewards.extend(self.controller_epochs(&table, 1, f.sac_steps_per_epoch, 0)?);
            }
        }
        // Merge the per-epoch pathway logs into one entry per pathway.
        let pathway_logs: Vec<StageLog> = self.logs.drain(log_at..).collect();
        for name in ["normal", "event", "single"] {
            let component = format!("pathway.{name}");
            let values: Vec<f64> = pathway_logs
                .iter()
                .filter(|l| l.component == component)
                .flat_map(|l| l.values.clone())
                .collect();
            if !values.is_empty() {
                self.logs.push(StageLog { stage: 4, component, planned_epochs: f.epochs, values });
            }
        }
        self.logs.push(StageLog {
            stage: 4,
            component: "autoencoder".into(),
            planned_epochs: f.epochs,
            values: ae_losses,
        });
        if self.agent.is_some() {
            self.logs.push(StageLog {
                stage: 4,
                component: "controller".into(),
                planned_epochs: f.epochs,
                values: rewards,
            });
        }
        // Scores must follow the rounded weights a checkpoint will hold.
        if let Some(d) = &mut self.detector {
            d.store.round_to_f32();
        }
        self.rescore_keeping_tau()
    }

    /// Restores the derived scoring state after parameters were loaded.
    pub(crate) fn refresh_after_load(&mut self) -> Result<(), PipelineError> {
        let (tau, alpha) = (self.tau, self.alpha);
        self.rescore()?;
        (self.tau, self.alpha) = (tau, alpha);
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn train_epochs(
    model: &mut PathwayModel,
    src: &TokenSources,
    plan: &Plan,
    days: Range<usize>,
    cfg: &RunConfig,
    lr: f64,
    epochs: usize,
    rngs: &mut RngStreams,
    name: &str,
) -> Result<Vec<f64>, PipelineError> {
    let horizons = &cfg.model.horizons;
    let limit = days.end;
    let mut adam = AdamState::new(&model.store, AdamConfig::with_lr(lr));
    let mut data_rng: ChaCha8Rng = rngs.stream(&format!("data.{name}")).clone();
    let mut drop_rng: ChaCha8Rng = rngs.stream(&format!("dropout.{name}")).clone();
    let t = cfg.model.seq_len;
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let offset = data_rng.random_range(0..t);
        let mut windows = tiling(days.clone(), t, offset);
        windows.shuffle(&mut data_rng);
        let (mut total, mut count) = (0.0, 0.0);
        for w in windows {
            let targets = src.targets(&w, horizons, limit, plan.keep);
            let n = targets.count();
            if n == 0.0 {
                continue;
            }
            let input = src.input(&w, plan.with_context, plan.flag);
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &model.store, &input, Some(&mut drop_rng))?;
            let params: Vec<_> = model.store.ids().map(|id| tape.param(&model.store, id)).collect();
            let (loss, parts) = composite_loss(&mut tape, &out, &targets, &params, &cfg.pathway.loss)?;
            if !parts.total.is_finite() {
                return Err(PipelineError::Numeric(numcore::NumError::NonFinite { op: "pathway loss" }));
            }
            let grads = tape.backward_scalar(loss)?.into_param_grads();
            adam.step(&mut model.store, &grads)?;
            total += parts.total * n;
            count += n;
        }
        losses.push(if count > 0.0 { total / count } else { f64::NAN });
    }
    *rngs.stream(&format!("data.{name}")) = data_rng;
    *rngs.stream(&format!("dropout.{name}")) = drop_rng;
    Ok(losses)
}
