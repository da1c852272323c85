//! Run configuration: defaults, the desk profile, ablation switches and the
//! flat `section.key = value` text format.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::control::{RewardWeights, SacConfig};
use crate::nodeformer::{LossWeights, ModelConfig};
use crate::synthgen::SynthConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    Full,
    NoSac,
    NoDual,
    NoAe,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoSac, Ablation::NoDual, Ablation::NoAe];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSac => "no-sac",
            Ablation::NoDual => "no-dual",
            Ablation::NoAe => "no-ae",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        Self::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown variant {s:?}")))
    }

    /// Stages that do work in this variant.
    pub fn stages(self) -> &'static [u8] {
        match self {
            Ablation::Full | Ablation::NoDual => &[1, 2, 3, 4],
            Ablation::NoSac => &[1, 2],
            Ablation::NoAe => &[2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// A directory in the dataset CSV layout.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathwaySettings {
    pub lr: f64,
    pub epochs: usize,
    /// Normal pathway trains on errors below this training percentile.
    pub normal_percentile: f64,
    /// Event pathway trains on errors at or above this training percentile.
    pub event_percentile: f64,
    pub loss: LossWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerSettings {
    pub sac: SacConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub reward: RewardWeights,
    pub initial_alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSettings {
    pub epochs: usize,
    pub ae_lr: f64,
    pub pathway_lr: f64,
    pub sac_lr: f64,
    pub sac_steps_per_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSource,
    /// Train, validation, test fractions.
    pub split: [f64; 3],
    pub model: ModelConfig,
    pub ae: AeSettings,
    pub pathway: PathwaySettings,
    pub controller: ControllerSettings,
    pub finetune: FinetuneSettings,
    pub sac_enabled: bool,
    pub dual_enabled: bool,
    pub ae_enabled: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl RunConfig {
    /// Published hyperparameters.
    pub fn paper() -> Self {
        Self {
            seed: 0,
            data: DataSource::Synthetic(SynthConfig::default()),
            split: [0.70, 0.15, 0.15],
            model: ModelConfig::paper(),
            ae: AeSettings {
                lr: 1e-3,
                batch_size: 64,
                epochs: 20,
                patience: 3,
                val_fraction: 0.2,
            },
            pathway: PathwaySettings {
                lr: 1e-4,
                epochs: 60,
                normal_percentile: 95.0,
                event_percentile: 90.0,
                loss: LossWeights::default(),
            },
            controller: ControllerSettings {
                sac: SacConfig::default(),
                epochs: 50,
                steps_per_epoch: 1000,
                reward: RewardWeights::default(),
                initial_alpha: 0.5,
            },
            finetune: FinetuneSettings {
                epochs: 20,
                ae_lr: 1e-4,
                pathway_lr: 1e-5,
                sac_lr: 3e-5,
                sac_steps_per_epoch: 1000,
            },
            sac_enabled: true,
            dual_enabled: true,
            ae_enabled: true,
        }
    }

    /// Single-core scale: smaller transformer and controller, fewer epochs.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.model = ModelConfig::desk();
        c.pathway.epochs = 30;
        c.pathway.lr = 3e-4;
        c.controller.sac.hidden = vec![64, 64];
        c.controller.sac.batch_size = 64;
        c.controller.epochs = 10;
        c.controller.steps_per_epoch = 500;
        c.finetune.epochs = 2;
        c.finetune.sac_steps_per_epoch = 250;
        c
    }

    pub fn ablation(&self) -> Ablation {
        match (self.ae_enabled, self.dual_enabled, self.sac_enabled) {
            (false, _, _) => Ablation::NoAe,
            (true, false, _) => Ablation::NoDual,
            (true, true, false) => Ablation::NoSac,
            (true, true, true) => Ablation::Full,
        }
    }

    /// Sets the three switches for a variant.
    pub fn configure_ablation(&self, variant: Ablation) -> Self {
        let mut c = self.clone();
        (c.ae_enabled, c.dual_enabled, c.sac_enabled) = match variant {
            Ablation::Full => (true, true, true),
            Ablation::NoSac => (true, true, false),
            Ablation::NoDual => (true, false, true),
            Ablation::NoAe => (false, false, false),
        };
        c
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.split.iter().any(|f| !(*f > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config(format!("split fractions {:?} must be positive and sum to 1", self.split)));
        }
        if !self.ae_enabled && (self.dual_enabled || self.sac_enabled) {
            return Err(PipelineError::Config("routing and control need the autoencoder".into()));
        }
        self.model.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.model.seq_len < 4 {
            return Err(PipelineError::Config("sequence length must be at least 4".into()));
        }
        if self.controller.sac.hidden.is_empty() || self.controller.sac.batch_size == 0 {
            return Err(PipelineError::Config("controller needs hidden layers and a batch size".into()));
        }
        let p = &self.pathway;
        if !(0.0..=100.0).contains(&p.normal_percentile) || !(0.0..=100.0).contains(&p.event_percentile) {
            return Err(PipelineError::Config("routing percentiles must lie in [0, 100]".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut e = vec![("run.seed", self.seed.to_string())];
        match &self.data {
            DataSource::Synthetic(s) => {
                e.push(("data.source", "synthetic".into()));
                e.extend([
                    ("synth.n_stocks", s.n_stocks.to_string()),
                    ("synth.n_days", s.n_days.to_string()),
                    ("synth.n_sectors", s.n_sectors.to_string()),
                    ("synth.seed", s.seed.to_string()),
                    ("synth.drift_calm", s.drift_calm.to_string()),
                    ("synth.drift_crisis", s.drift_crisis.to_string()),
                    ("synth.sigma_calm", s.sigma_calm.to_string()),
                    ("synth.crisis_vol_ratio", s.crisis_vol_ratio.to_string()),
                    ("synth.p_calm_to_crisis", s.p_calm_to_crisis.to_string()),
                    ("synth.p_crisis_to_calm", s.p_crisis_to_calm.to_string()),
                    ("synth.sentiment_coupling", s.sentiment_coupling.to_string()),
                    ("synth.sentiment_noise", s.sentiment_noise.to_string()),
                ]);
            }
            DataSource::Directory(p) => {
                e.push(("data.source", "directory".into()));
                e.push(("data.dir", p.display().to_string()));
            }
        }
        let m = &self.model;
        let a = &self.ae;
        let p = &self.pathway;
        let c = &self.controller;
        let f = &self.finetune;
        e.extend([
            ("split.train", self.split[0].to_string()),
            ("split.val", self.split[1].to_string()),
            ("split.test", self.split[2].to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.n_layers", m.n_layers.to_string()),
            ("model.n_heads", m.n_heads.to_string()),
            ("model.d_ff", m.d_ff.to_string()),
            ("model.seq_len", m.seq_len.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("model.horizons", list(&m.horizons)),
            ("model.anchor", m.anchor.to_string()),
            ("ae.lr", a.lr.to_string()),
            ("ae.batch_size", a.batch_size.to_string()),
            ("ae.epochs", a.epochs.to_string()),
            ("ae.patience", a.patience.to_string()),
            ("ae.val_fraction", a.val_fraction.to_string()),
            ("pathway.lr", p.lr.to_string()),
            ("pathway.epochs", p.epochs.to_string()),
            ("pathway.normal_percentile", p.normal_percentile.to_string()),
            ("pathway.event_percentile", p.event_percentile.to_string()),
            ("loss.mse", p.loss.mse.to_string()),
            ("loss.direction", p.loss.direction.to_string()),
            ("loss.regularization", p.loss.regularization.to_string()),
            ("sac.hidden", list(&c.sac.hidden)),
            ("sac.lr", c.sac.lr.to_string()),
            ("sac.gamma", c.sac.gamma.to_string()),
            ("sac.tau_soft", c.sac.tau_soft.to_string()),
            ("sac.batch_size", c.sac.batch_size.to_string()),
            ("sac.buffer", c.sac.buffer_capacity.to_string()),
            ("sac.init_temperature", c.sac.init_temperature.to_string()),
            ("sac.epochs", c.epochs.to_string()),
            ("sac.steps_per_epoch", c.steps_per_epoch.to_string()),
            ("sac.initial_alpha", c.initial_alpha.to_string()),
            ("reward.direction", c.reward.direction.to_string()),
            ("reward.stability", c.reward.stability.to_string()),
            ("finetune.epochs", f.epochs.to_string()),
            ("finetune.ae_lr", f.ae_lr.to_string()),
            ("finetune.pathway_lr", f.pathway_lr.to_string()),
            ("finetune.sac_lr", f.sac_lr.to_string()),
            ("finetune.sac_steps_per_epoch", f.sac_steps_per_epoch.to_string()),
            ("ablation.sac", self.sac_enabled.to_string()),
            ("ablation.dual", self.dual_enabled.to_string()),
            ("ablation.ae", self.ae_enabled.to_string()),
        ]);
        e
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let bad = || PipelineError::Config(format!("invalid value {value:?} for {key}"));
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<usize>().map_err(|_| bad());
        let b = || value.parse::<bool>().map_err(|_| bad());
        let list = || -> Result<Vec<usize>, PipelineError> {
            value.split(',').map(|x| x.trim().parse::<usize>().map_err(|_| bad())).collect()
        };
        if let Some(field) = key.strip_prefix("synth.") {
            let DataSource::Synthetic(s) = &mut self.data else {
                return Err(PipelineError::Config(format!("{key} needs data.source = synthetic")));
            };
            match field {
                "n_stocks" => s.n_stocks = u()?,
                "n_days" => s.n_days = u()?,
                "n_sectors" => s.n_sectors = u()?,
                "seed" => s.seed = value.parse().map_err(|_| bad())?,
                "drift_calm" => s.drift_calm = f()?,
                "drift_crisis" => s.drift_crisis = f()?,
                "sigma_calm" => s.sigma_calm = f()?,
                "crisis_vol_ratio" => s.crisis_vol_ratio = f()?,
                "p_calm_to_crisis" => s.p_calm_to_crisis = f()?,
                "p_crisis_to_calm" => s.p_crisis_to_calm = f()?,
                "sentiment_coupling" => s.sentiment_coupling = f()?,
                "sentiment_noise" => s.sentiment_noise = f()?,
                _ => return Err(PipelineError::Config(format!("unknown key {key}"))),
            }
            return Ok(());
        }
        match key {
            "run.seed" => self.seed = value.parse().map_err(|_| bad())?,
            "run.profile" => {
                let keep = (self.seed, self.data.clone());
                *self = match value {
                    "paper" => Self::paper(),
                    "desk" => Self::desk(),
                    _ => return Err(bad()),
                };
                (self.seed, self.data) = keep;
            }
            "data.source" => match value {
                "synthetic" if !matches!(self.data, DataSource::Synthetic(_)) => {
                    self.data = DataSource::Synthetic(SynthConfig::default())
                }
                "synthetic" => {}
                "directory" if !matches!(self.data, DataSource::Directory(_)) => {
                    self.data = DataSource::Directory(PathBuf::new())
                }
                "directory" => {}
                _ => return Err(bad()),
            },
            "data.dir" => self.data = DataSource::Directory(PathBuf::from(value)),
            "split.train" => self.split[0] = f()?,
            "split.val" => self.split[1] = f()?,
            "split.test" => self.split[2] = f()?,
            "model.d_model" => self.model.d_model = u()?,
            "model.n_layers" => self.model.n_layers = u()?,
            "model.n_heads" => self.model.n_heads = u()?,
            "model.d_ff" => self.model.d_ff = u()?,
            "model.seq_len" => self.model.seq_len = u()?,
            "model.dropout" => self.model.dropout = f()?,
            "model.horizons" => self.model.horizons = list()?,
            "model.anchor" => self.model.anchor = b()?,
            "ae.lr" => self.ae.lr = f()?,
            "ae.batch_size" => self.ae.batch_size = u()?,
            "ae.epochs" => self.ae.epochs = u()?,
            "ae.patience" => self.ae.patience = u()?,
            "ae.val_fraction" => self.ae.val_fraction = f()?,
            "pathway.lr" => self.pathway.lr = f()?,
            "pathway.epochs" => self.pathway.epochs = u()?,
            "pathway.normal_percentile" => self.pathway.normal_percentile = f()?,
            "pathway.event_percentile" => self.pathway.event_percentile = f()?,
            "loss.mse" => self.pathway.loss.mse = f()?,
            "loss.direction" => self.pathway.loss.direction = f()?,
            "loss.regularization" => self.pathway.loss.regularization = f()?,
            "sac.hidden" => self.controller.sac.hidden = list()?,
            "sac.lr" => self.controller.sac.lr = f()?,
            "sac.gamma" => self.controller.sac.gamma = f()?,
            "sac.tau_soft" => self.controller.sac.tau_soft = f()?,
            "sac.batch_size" => self.controller.sac.batch_size = u()?,
            "sac.buffer" => self.controller.sac.buffer_capacity = u()?,
            "sac.init_temperature" => self.controller.sac.init_temperature = f()?,
            "sac.epochs" => self.controller.epochs = u()?,
            "sac.steps_per_epoch" => self.controller.steps_per_epoch = u()?,
            "sac.initial_alpha" => self.controller.initial_alpha = f()?,
            "reward.direction" => self.controller.reward.direction = f()?,
            "reward.stability" => self.controller.reward.stability = f()?,
            "finetune.epochs" => self.finetune.epochs = u()?,
            "finetune.ae_lr" => self.finetune.ae_lr = f()?,
            "finetune.pathway_lr" => self.finetune.pathway_lr = f()?,
            "finetune.sac_lr" => self.finetune.sac_lr = f()?,
            "finetune.sac_steps_per_epoch" => self.finetune.sac_steps_per_epoch = u()?,
            "ablation.sac" => self.sac_enabled = b()?,
            "ablation.dual" => self.dual_enabled = b()?,
            "ablation.ae" => self.ae_enabled = b()?,
            "ablation.variant" => *self = self.configure_ablation(Ablation::parse(value)?),
            _ => return Err(PipelineError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let mut c = Self::paper();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for c in [RunConfig::paper(), RunConfig::desk().configure_ablation(Ablation::NoDual)] {
            assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn overrides_and_profiles() {
        let mut c = RunConfig::paper();
        c.apply_text("run.seed = 9\nrun.profile = desk # smaller\nmodel.horizons = 1, 5\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.d_model, 64);
        assert_eq!(c.model.horizons, vec![1, 5]);
        assert!(c.set("model.nope", "1").is_err());
        assert!(c.set("ae.lr", "fast").is_err());
        assert!(c.apply_text("just words").is_err());
    }

    #[test]
    fn ablation_switches() {
        let base = RunConfig::desk();
        for v in Ablation::ALL {
            let c = base.configure_ablation(v);
            assert_eq!(c.ablation(), v);
            c.validate().unwrap();
        }
        let mut bad = base.clone();
        bad.ae_enabled = false;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_and_no_sac_differ_only_in_control() {
        let full = RunConfig::desk();
        let nosac = full.configure_ablation(Ablation::NoSac);
        let a = full.to_text();
        let b = nosac.to_text();
        let diff: Vec<_> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff, vec![("ablation.sac = true", "ablation.sac = false")]);
    }

    #[test]
    fn bad_splits_are_rejected() {
        let mut c = RunConfig::desk();
        c.split = [1.0, 0.0, 0.0];
        assert!(c.validate().is_err());
        c.split = [0.5, 0.3, 0.3];
        assert!(c.validate().is_err());
    }
}
