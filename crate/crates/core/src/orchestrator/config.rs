//! Flat `key = value` experiment configuration with dotted keys.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Every key has a default, so a config file only lists what it changes.

use std::path::PathBuf;

use crate::aggregation::AggregationStrategy;
use crate::bnn::{Activation, Architecture, ModelMode, Prior, TrainConfig};
use crate::datasets::PartitionKind;
use crate::error::{Error, Result};
use crate::weighting::WeightingScheme;

/// Learning rate held at `eta0` for `silent_rounds` rounds, then multiplied
/// by `1 - decay` every round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub eta0: f64,
    pub silent_rounds: usize,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            silent_rounds: 50,
            decay: 0.04,
        }
    }
}

/// Learning rate of round `r` (0-based).
pub fn lr_at(r: usize, schedule: &LrSchedule) -> f64 {
    if r < schedule.silent_rounds {
        schedule.eta0
    } else {
        schedule.eta0 * (1.0 - schedule.decay).powi((r - schedule.silent_rounds) as i32)
    }
}

/// Central pre-training of the initial global model on a stratified
/// fraction of the training set, with early stopping on validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub fraction: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of the pre-training subset held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            fraction: 0.1,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSourceKind {
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSourceKind,
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub spread: f64,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub header: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSourceKind::Blobs,
            classes: 3,
            dim: 2,
            per_class: 600,
            test_per_class: 200,
            spread: 1.0,
            train_path: None,
            test_path: None,
            header: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub clients: usize,
    pub seed: u64,
    /// Worker threads for client updates; 0 uses every available core.
    pub parallelism: usize,
    pub arch: Architecture,
    pub prior: Prior,
    /// Local training settings; `learning_rate` and `seed` are overwritten
    /// every round from the schedule and the derived client seed.
    pub train: TrainConfig,
    pub aggregation: AggregationStrategy,
    pub weighting: WeightingScheme,
    pub partition: PartitionKind,
    pub lr: LrSchedule,
    pub refresh_prior: bool,
    pub pretrain: PretrainConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rounds: 60,
            clients: 10,
            seed: 0,
            parallelism: 0,
            arch: Architecture::new(vec![2, 16, 3], ModelMode::Vi).expect("valid default"),
            prior: Prior::default(),
            train: TrainConfig::default(),
            aggregation: AggregationStrategy::Ws,
            weighting: WeightingScheme::Equal,
            partition: PartitionKind::Iid,
            lr: LrSchedule::default(),
            refresh_prior: false,
            pretrain: PretrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

/// Every recognised key, in the order [`ExperimentConfig::to_text`] emits them.
pub const KEYS: &[&str] = &[
    "rounds",
    "clients",
    "seed",
    "parallelism",
    "arch.layers",
    "arch.activation",
    "arch.mode",
    "prior.mean",
    "prior.variance",
    "train.local_epochs",
    "train.batch_size",
    "train.dropout_rate",
    "train.mc_samples",
    "train.grad_clip",
    "aggregation",
    "weighting",
    "partition",
    "lr.eta0",
    "lr.silent_rounds",
    "lr.decay",
    "refresh_prior",
    "pretrain.enabled",
    "pretrain.fraction",
    "pretrain.max_epochs",
    "pretrain.patience",
    "pretrain.validation_fraction",
    "data.source",
    "data.classes",
    "data.dim",
    "data.per_class",
    "data.test_per_class",
    "data.spread",
    "data.train_path",
    "data.test_path",
    "data.header",
];

fn num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}` as a number"))
}

fn real(value: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(value)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{value}` is not finite"))
    }
}

fn boolean(value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let display = |e: Error| e.to_string();
        match key.trim() {
            "rounds" => self.rounds = num(v)?,
            "clients" => self.clients = num(v)?,
            "seed" => self.seed = num(v)?,
            "parallelism" => self.parallelism = num(v)?,
            "arch.layers" => {
                let sizes = v
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(num)
                    .collect::<std::result::Result<Vec<usize>, _>>()?;
                self.arch = Architecture::new(sizes, self.arch.mode()).map_err(display)?;
            }
            "arch.activation" => {
                let _: Activation = v.parse().map_err(display)?;
            }
            "arch.mode" => {
                let mode: ModelMode = v.parse().map_err(display)?;
                self.arch = Architecture::new(self.arch.layer_sizes().to_vec(), mode).map_err(display)?;
            }
            "prior.mean" => self.prior.mean = real(v)?,
            "prior.variance" => self.prior.variance = real(v)?,
            "train.local_epochs" => self.train.local_epochs = num(v)?,
            "train.batch_size" => self.train.batch_size = num(v)?,
            "train.dropout_rate" => self.train.dropout_rate = real(v)?,
            "train.mc_samples" => self.train.mc_samples = num(v)?,
            "train.grad_clip" => {
                self.train.grad_clip = match v.to_ascii_lowercase().as_str() {
                    "" | "none" | "off" => None,
                    _ => Some(real(v)?),
                }
            }
            "aggregation" => self.aggregation = v.parse().map_err(display)?,
            "weighting" => self.weighting = v.parse().map_err(display)?,
            "partition" => self.partition = v.parse().map_err(display)?,
            "lr.eta0" => self.lr.eta0 = real(v)?,
            "lr.silent_rounds" => self.lr.silent_rounds = num(v)?,
            "lr.decay" => self.lr.decay = real(v)?,
            "refresh_prior" => self.refresh_prior = boolean(v)?,
            "pretrain.enabled" => self.pretrain.enabled = boolean(v)?,
            "pretrain.fraction" => self.pretrain.fraction = real(v)?,
            "pretrain.max_epochs" => self.pretrain.max_epochs = num(v)?,
            "pretrain.patience" => self.pretrain.patience = num(v)?,
            "pretrain.validation_fraction" => self.pretrain.validation_fraction = real(v)?,
            "data.source" => {
                self.data.source = match v.to_ascii_lowercase().as_str() {
                    "blobs" => DataSourceKind::Blobs,
                    "csv" => DataSourceKind::Csv,
                    _ => return Err(format!("unknown data source `{v}` (expected blobs|csv)")),
                }
            }
            "data.classes" => self.data.classes = num(v)?,
            "data.dim" => self.data.dim = num(v)?,
            "data.per_class" => self.data.per_class = num(v)?,
            "data.test_per_class" => self.data.test_per_class = num(v)?,
            "data.spread" => self.data.spread = real(v)?,
            "data.train_path" => self.data.train_path = path(v),
            "data.test_path" => self.data.test_path = path(v),
            "data.header" => self.data.header = boolean(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Current value of `key` in config syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "rounds" => self.rounds.to_string(),
            "clients" => self.clients.to_string(),
            "seed" => self.seed.to_string(),
            "parallelism" => self.parallelism.to_string(),
            "arch.layers" => self
                .arch
                .layer_sizes()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "arch.activation" => self.arch.activation().to_string(),
            "arch.mode" => self.arch.mode().to_string(),
            "prior.mean" => self.prior.mean.to_string(),
            "prior.variance" => self.prior.variance.to_string(),
            "train.local_epochs" => self.train.local_epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.dropout_rate" => self.train.dropout_rate.to_string(),
            "train.mc_samples" => self.train.mc_samples.to_string(),
            "train.grad_clip" => self.train.grad_clip.map_or("none".into(), |c| c.to_string()),
            "aggregation" => self.aggregation.to_string(),
            "weighting" => self.weighting.to_string(),
            "partition" => self.partition.to_string(),
            "lr.eta0" => self.lr.eta0.to_string(),
            "lr.silent_rounds" => self.lr.silent_rounds.to_string(),
            "lr.decay" => self.lr.decay.to_string(),
            "refresh_prior" => self.refresh_prior.to_string(),
            "pretrain.enabled" => self.pretrain.enabled.to_string(),
            "pretrain.fraction" => self.pretrain.fraction.to_string(),
            "pretrain.max_epochs" => self.pretrain.max_epochs.to_string(),
            "pretrain.patience" => self.pretrain.patience.to_string(),
            "pretrain.validation_fraction" => self.pretrain.validation_fraction.to_string(),
            "data.source" => match self.data.source {
                DataSourceKind::Blobs => "blobs".into(),
                DataSourceKind::Csv => "csv".into(),
            },
            "data.classes" => self.data.classes.to_string(),
            "data.dim" => self.data.dim.to_string(),
            "data.per_class" => self.data.per_class.to_string(),
            "data.test_per_class" => self.data.test_per_class.to_string(),
            "data.spread" => self.data.spread.to_string(),
            "data.train_path" => path_str(&self.data.train_path),
            "data.test_path" => path_str(&self.data.test_path),
            "data.header" => self.data.header.to_string(),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults. Errors carry the 1-based
    /// line number; the result is validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(key, value)
                .map_err(|message| Error::Config { line, message: format!("{key}: {message}") })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            message: format!("override `{assignment}` is not `key=value`"),
        })?;
        self.set(key, value).map_err(|message| Error::Config {
            line: 0,
            message: format!("override {}: {message}", key.trim()),
        })
    }

    /// Canonical text listing every key; [`ExperimentConfig::parse`] reads
    /// it back to an equal config.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.rounds == 0 {
            return fail("rounds must be >= 1".into());
        }
        if self.clients == 0 {
            return fail("clients must be >= 1".into());
        }
        Prior::new(self.prior.mean, self.prior.variance)?;
        TrainConfig {
            learning_rate: self.lr.eta0,
            ..self.train.clone()
        }
        .validate()
        .map_err(|e| Error::Validation(e.to_string()))?;
        if !(0.0..1.0).contains(&self.lr.decay) {
            return fail(format!("lr.decay must lie in [0, 1), got {}", self.lr.decay));
        }
        if self.arch.mode() != ModelMode::Vi {
            if self.aggregation != AggregationStrategy::Nwa {
                return fail(format!(
                    "{} models only support nwa aggregation, got {}",
                    self.arch.mode(),
                    self.aggregation
                ));
            }
            if self.weighting.requires_posterior() {
                return fail(format!(
                    "{} models only support equal or train_size weighting, got {}",
                    self.arch.mode(),
                    self.weighting
                ));
            }
            if self.refresh_prior {
                return fail("refresh_prior needs a vi model".into());
            }
        }
        let p = &self.pretrain;
        if p.enabled {
            if !(p.fraction > 0.0 && p.fraction <= 1.0) {
                return fail(format!("pretrain.fraction must lie in (0, 1], got {}", p.fraction));
            }
            if !(p.validation_fraction > 0.0 && p.validation_fraction < 1.0) {
                return fail(format!(
                    "pretrain.validation_fraction must lie in (0, 1), got {}",
                    p.validation_fraction
                ));
            }
            if p.max_epochs == 0 || p.patience == 0 {
                return fail("pretrain.max_epochs and pretrain.patience must be >= 1".into());
            }
        }
        match self.data.source {
            DataSourceKind::Blobs => {
                let d = &self.data;
                if d.classes < 2 || d.dim == 0 || d.per_class == 0 || d.test_per_class == 0 {
                    return fail("blob data needs classes >= 2 and positive dim, per_class, test_per_class".into());
                }
                if !(d.spread >= 0.0) {
                    return fail(format!("data.spread must be >= 0, got {}", d.spread));
                }
                if self.arch.input_dim() != d.dim || self.arch.classes() != d.classes {
                    return fail(format!(
                        "arch.layers {} does not match data.dim = {} and data.classes = {}",
                        self.get("arch.layers").unwrap_or_default(),
                        d.dim,
                        d.classes
                    ));
                }
            }
            DataSourceKind::Csv => {
                if self.data.train_path.is_none() || self.data.test_path.is_none() {
                    return fail("csv data needs data.train_path and data.test_path".into());
                }
            }
        }
        Ok(())
    }
}
