//! Feed-forward ReLU classifiers in three flavours: deterministic,
//! MC dropout, and mean-field Gaussian variational inference.
//!
//! Parameters are stored flat, layer after layer, each layer as its
//! `fan_out × fan_in` weight matrix (row-major) followed by `fan_out` biases.

mod network;
mod train;

pub use network::DropoutMask;
pub use train::{client_update, elbo_loss, predict_mc, predict_mc_batch, ElboOutput};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, ModelParams, PointSet, PosteriorSet};

/// Variance given to every parameter of a freshly initialized VI model.
pub const INIT_VARIANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelMode {
    Deterministic,
    McDropout,
    Vi,
}

impl ModelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Deterministic => "deterministic",
            Self::McDropout => "mc_dropout",
            Self::Vi => "vi",
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deterministic" => Ok(Self::Deterministic),
            "mc_dropout" | "dropout" => Ok(Self::McDropout),
            "vi" => Ok(Self::Vi),
            other => Err(Error::invalid(format!(
                "unknown model mode `{other}` (expected deterministic|mc_dropout|vi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            other => Err(Error::invalid(format!("unknown activation `{other}` (expected relu)"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("relu")
    }
}

/// Layer sizes (input, hidden..., classes), activation and model mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
    mode: ModelMode,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, mode: ModelMode) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("architecture needs at least input and output sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::invalid("classifier needs at least two classes"));
        }
        Ok(Self {
            layer_sizes,
            activation: Activation::Relu,
            mode,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of linear layers.
    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `(fan_in, fan_out)` of linear layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    /// Count of network weights and biases.
    pub fn param_count(&self) -> usize {
        (0..self.layer_count())
            .map(|l| {
                let (i, o) = self.layer_shape(l);
                i * o + o
            })
            .sum()
    }

    /// Scalars a model of this architecture carries: a mean and a variance
    /// per weight in VI mode, one value otherwise.
    pub fn scalar_param_count(&self) -> usize {
        match self.mode {
            ModelMode::Vi => 2 * self.param_count(),
            _ => self.param_count(),
        }
    }

    /// Identifier shared by all models with this layer structure.
    pub fn shape_tag(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(ToString::to_string).collect();
        format!("mlp-{}:{}", self.activation, sizes.join("-"))
    }
}

/// Isotropic Gaussian prior N(mean, variance·I).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub mean: f64,
    pub variance: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 100.0,
        }
    }
}

impl Prior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(mean.is_finite() && variance.is_finite() && variance > 0.0) {
            return Err(Error::invalid(format!("prior needs finite mean and positive variance, got N({mean}, {variance})")));
        }
        Ok(Self { mean, variance })
    }
}

/// Prior used in the ELBO: the fixed isotropic prior, or a per-parameter
/// posterior carried over from the last aggregation.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorModel {
    Isotropic(Prior),
    PerParameter(PosteriorSet),
}

impl PriorModel {
    #[inline]
    pub fn at(&self, i: usize) -> (f64, f64) {
        match self {
            PriorModel::Isotropic(p) => (p.mean, p.variance),
            PriorModel::PerParameter(post) => {
                let g = &post.params()[i];
                (g.mean(), g.variance())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// Global L2 norm cap on each minibatch gradient, if any.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.001,
            dropout_rate: 0.2,
            mc_samples: 20,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::invalid("local_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Fresh model: weight means uniform in ±sqrt(6 / fan_in), biases zero,
/// VI variances [`INIT_VARIANCE`].
pub fn init_model(arch: &Architecture, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(arch.param_count());
    for l in 0..arch.layer_count() {
        let (fan_in, fan_out) = arch.layer_shape(l);
        let limit = (6.0 / fan_in as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    match arch.mode() {
        ModelMode::Vi => ModelParams::Posterior(PosteriorSet::new(
            arch.shape_tag(),
            values
                .into_iter()
                .map(|m| Gaussian::new(m, INIT_VARIANCE).expect("finite init"))
                .collect(),
        )),
        _ => ModelParams::Point(PointSet::new(arch.shape_tag(), values)),
    }
}

/// Class probabilities of one input under a point model.
pub fn forward(arch: &Architecture, point: &PointSet, x: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
    check_point(arch, point)?;
    if x.len() != arch.input_dim() {
        return Err(Error::invalid(format!(
            "input has dimension {}, architecture expects {}",
            x.len(),
            arch.input_dim()
        )));
    }
    if let Some(m) = mask {
        let ok = m.layers.len() == arch.hidden_sizes().len()
            && m.layers.iter().zip(arch.hidden_sizes()).all(|(l, &n)| l.len() == n);
        if !ok {
            return Err(Error::invalid("dropout mask does not match the hidden layers"));
        }
    }
    let mut cache = network::ForwardCache::default();
    network::forward_cached(arch, point.values(), x, mask, &mut cache);
    Ok(cache.probs)
}

pub(crate) fn check_point(arch: &Architecture, point: &PointSet) -> Result<()> {
    if point.len() != arch.param_count() {
        return Err(Error::invalid(format!(
            "model has {} parameters, architecture {} needs {}",
            point.len(),
            arch.shape_tag(),
            arch.param_count()
        )));
    }
    Ok(())
}

pub(crate) fn check_model(arch: &Architecture, model: &ModelParams) -> Result<()> {
    let expected = arch.param_count();
    let matches_mode = matches!(
        (arch.mode(), model),
        (ModelMode::Vi, ModelParams::Posterior(_)) | (ModelMode::Deterministic | ModelMode::McDropout, ModelParams::Point(_))
    );
    if !matches_mode {
        return Err(Error::UnsupportedModel(format!(
            "{} architecture cannot use this parameter representation",
            arch.mode()
        )));
    }
    if model.len() != expected {
        return Err(Error::invalid(format!(
            "model has {} parameters, architecture {} needs {expected}",
            model.len(),
            arch.shape_tag()
        )));
    }
    Ok(())
}
