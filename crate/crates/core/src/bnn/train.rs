//! ELBO and cross-entropy training, and Monte Carlo prediction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::network::{backward_cross_entropy, forward_cached, DropoutMask, ForwardCache};
use super::{check_model, Architecture, ModelMode, PriorModel, TrainConfig};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::gaussian::{sample_point, ModelParams, PointSet, PosteriorSet};
use crate::uncertainty::McPredictionBlock;
use crate::weighting::ClientReport;

/// Negative ELBO of one minibatch and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboOutput {
    pub loss: f64,
    /// Unscaled KL[q‖p] summed over all parameters.
    pub kl: f64,
    /// Mean cross-entropy of the batch under the sampled weights.
    pub data_term: f64,
    pub grad_means: Vec<f64>,
    /// Gradient with respect to the variances (not log-variances).
    pub grad_variances: Vec<f64>,
}

fn diverged(detail: impl Into<String>) -> Error {
    Error::TrainingDiverged {
        client: 0,
        epoch: 0,
        detail: detail.into(),
    }
}

fn check_data(arch: &Architecture, data: &LabeledDataset) -> Result<()> {
    if data.dim() != arch.input_dim() {
        return Err(Error::invalid(format!(
            "data has dimension {}, architecture expects {}",
            data.dim(),
            arch.input_dim()
        )));
    }
    if data.classes() > arch.classes() {
        return Err(Error::invalid(format!(
            "data has {} classes, architecture outputs {}",
            data.classes(),
            arch.classes()
        )));
    }
    Ok(())
}

/// Mean cross-entropy over `batch` at `params`, accumulating its gradient
/// into `grad`. `masks`, if given, holds one dropout mask per batch entry.
fn batch_cross_entropy(
    arch: &Architecture,
    params: &[f64],
    data: &LabeledDataset,
    batch: &[usize],
    masks: Option<&[DropoutMask]>,
    grad: &mut [f64],
) -> f64 {
    let scale = 1.0 / batch.len() as f64;
    let mut cache = ForwardCache::default();
    let mut total = 0.0;
    for (b, &i) in batch.iter().enumerate() {
        let mask = masks.map(|m| &m[b]);
        forward_cached(arch, params, data.features(i), mask, &mut cache);
        total += cache.cross_entropy(data.label(i));
        backward_cross_entropy(arch, params, &cache, data.label(i), mask, scale, grad);
    }
    total * scale
}

/// Negative ELBO of `batch` drawn from `data`: `(B/|data|)·KL[q‖p]` plus the
/// mean cross-entropy under the single pathwise sample `mean + sqrt(var)·noise`.
pub fn elbo_loss(
    arch: &Architecture,
    posterior: &PosteriorSet,
    prior: &PriorModel,
    data: &LabeledDataset,
    batch: &[usize],
    noise: &[f64],
) -> Result<ElboOutput> {
    let p = arch.param_count();
    if posterior.len() != p {
        return Err(Error::invalid(format!("posterior has {} parameters, expected {p}", posterior.len())));
    }
    if let PriorModel::PerParameter(pp) = prior {
        if pp.len() != p {
            return Err(Error::invalid(format!("prior has {} parameters, expected {p}", pp.len())));
        }
    }
    if batch.is_empty() {
        return Err(Error::invalid("minibatch is empty"));
    }
    check_data(arch, data)?;
    if let Some(&bad) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(Error::invalid(format!("batch index {bad} out of range")));
    }

    let sample = sample_point(posterior, noise)?;
    let mut grad_w = vec![0.0; p];
    let data_term = batch_cross_entropy(arch, sample.values(), data, batch, None, &mut grad_w);

    let coef = batch.len() as f64 / data.len() as f64;
    let mut kl = 0.0;
    let mut grad_means = Vec::with_capacity(p);
    let mut grad_variances = Vec::with_capacity(p);
    for (i, g) in posterior.params().iter().enumerate() {
        let (pm, pv) = prior.at(i);
        let (m, v) = (g.mean(), g.variance());
        let d = m - pm;
        kl += 0.5 * (pv / v).ln() + (v + d * d) / (2.0 * pv) - 0.5;
        grad_means.push(grad_w[i] + coef * d / pv);
        grad_variances.push(grad_w[i] * noise[i] / (2.0 * v.sqrt()) + coef * 0.5 * (1.0 / pv - 1.0 / v));
    }
    let loss = coef * kl + data_term;
    if !loss.is_finite() {
        return Err(diverged(format!("non-finite loss {loss}")));
    }
    Ok(ElboOutput {
        loss,
        kl,
        data_term,
        grad_means,
        grad_variances,
    })
}

/// Factor that rescales a gradient to global L2 norm at most `clip`.
fn clip_factor(sq_norm: f64, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) if sq_norm > c * c => c / sq_norm.sqrt(),
        _ => 1.0,
    }
}

/// Trains a copy of `global` for `cfg.local_epochs` epochs of minibatch SGD
/// on `data`. VI models descend the negative ELBO, with variances updated in
/// log space; point models descend the mean cross-entropy.
pub fn client_update(
    arch: &Architecture,
    global: &ModelParams,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    prior: &PriorModel,
    client_id: usize,
) -> Result<ClientReport> {
    cfg.validate()?;
    check_model(arch, global)?;
    check_data(arch, data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let eta = cfg.learning_rate;
    let tag = global.shape_tag().to_string();
    let tag_error = |epoch: usize, e: Error| match e {
        Error::TrainingDiverged { detail, .. } => Error::TrainingDiverged {
            client: client_id,
            epoch,
            detail,
        },
        other => other,
    };

    let model = match global {
        ModelParams::Posterior(post) => {
            let mut current = post.clone();
            let p = current.len();
            for epoch in 0..cfg.local_epochs {
                order.shuffle(&mut rng);
                for batch in order.chunks(cfg.batch_size) {
                    let noise: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                    let out = elbo_loss(arch, &current, prior, data, batch, &noise).map_err(|e| tag_error(epoch, e))?;
                    let variances = current.variances();
                    let sq: f64 = out.grad_means.iter().map(|g| g * g).sum::<f64>()
                        + out
                            .grad_variances
                            .iter()
                            .zip(&variances)
                            .map(|(g, v)| (g * v).powi(2))
                            .sum::<f64>();
                    let step = eta * clip_factor(sq, cfg.grad_clip);
                    let means: Vec<f64> = current
                        .params()
                        .iter()
                        .zip(&out.grad_means)
                        .map(|(g, dm)| g.mean() - step * dm)
                        .collect();
                    let new_vars: Vec<f64> = variances
                        .iter()
                        .zip(&out.grad_variances)
                        .map(|(v, dv)| v * (-step * v * dv).exp())
                        .collect();
                    if means.iter().chain(&new_vars).any(|x| !x.is_finite()) {
                        return Err(Error::TrainingDiverged {
                            client: client_id,
                            epoch,
                            detail: "non-finite parameters after update".into(),
                        });
                    }
                    current = PosteriorSet::from_moments(tag.clone(), &means, &new_vars)?;
                }
            }
            ModelParams::Posterior(current)
        }
        ModelParams::Point(point) => {
            let mut params = point.values().to_vec();
            let dropout = arch.mode() == ModelMode::McDropout;
            for epoch in 0..cfg.local_epochs {
                order.shuffle(&mut rng);
                for batch in order.chunks(cfg.batch_size) {
                    let masks: Option<Vec<DropoutMask>> = dropout.then(|| {
                        batch
                            .iter()
                            .map(|_| DropoutMask::sample(arch, cfg.dropout_rate, &mut rng))
                            .collect()
                    });
                    let mut grad = vec![0.0; params.len()];
                    let loss = batch_cross_entropy(arch, &params, data, batch, masks.as_deref(), &mut grad);
                    let sq: f64 = grad.iter().map(|g| g * g).sum();
                    let step = eta * clip_factor(sq, cfg.grad_clip);
                    for (w, g) in params.iter_mut().zip(&grad) {
                        *w -= step * g;
                    }
                    if !loss.is_finite() || params.iter().any(|x| !x.is_finite()) {
                        return Err(Error::TrainingDiverged {
                            client: client_id,
                            epoch,
                            detail: format!("non-finite loss or parameters (loss {loss})"),
                        });
                    }
                }
            }
            ModelParams::Point(PointSet::new(tag, params))
        }
    };
    Ok(ClientReport {
        client_id,
        model,
        train_size: data.len(),
    })
}

/// M probability rows per input. VI draws M weight samples shared by all
/// inputs; MC dropout draws a fresh mask per input and sample.
fn predict_rows<'a>(
    arch: &Architecture,
    model: &ModelParams,
    inputs: impl Iterator<Item = &'a [f64]>,
    m: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<Vec<McPredictionBlock>> {
    check_model(arch, model)?;
    if m == 0 {
        return Err(Error::invalid("MC sample count must be >= 1"));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {dropout_rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = arch.classes();
    let samples: Vec<PointSet> = match model {
        ModelParams::Posterior(post) => (0..m)
            .map(|_| {
                let noise: Vec<f64> = (0..post.len()).map(|_| rng.sample(StandardNormal)).collect();
                sample_point(post, &noise)
            })
            .collect::<Result<_>>()?,
        ModelParams::Point(point) => vec![point.clone()],
    };
    let mut cache = ForwardCache::default();
    let mut blocks = Vec::new();
    for x in inputs {
        if x.len() != arch.input_dim() {
            return Err(Error::invalid(format!(
                "input has dimension {}, architecture expects {}",
                x.len(),
                arch.input_dim()
            )));
        }
        let mut rows = Vec::with_capacity(m * classes);
        match arch.mode() {
            ModelMode::Vi => {
                for s in &samples {
                    forward_cached(arch, s.values(), x, None, &mut cache);
                    rows.extend_from_slice(&cache.probs);
                }
            }
            ModelMode::Deterministic => {
                forward_cached(arch, samples[0].values(), x, None, &mut cache);
                for _ in 0..m {
                    rows.extend_from_slice(&cache.probs);
                }
            }
            ModelMode::McDropout => {
                for _ in 0..m {
                    let mask = DropoutMask::sample(arch, dropout_rate, &mut rng);
                    forward_cached(arch, samples[0].values(), x, Some(&mask), &mut cache);
                    rows.extend_from_slice(&cache.probs);
                }
            }
        }
        blocks.push(McPredictionBlock::from_flat(classes, rows));
    }
    Ok(blocks)
}

/// M Monte Carlo class-probability samples for one input.
pub fn predict_mc(
    arch: &Architecture,
    model: &ModelParams,
    x: &[f64],
    m: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<McPredictionBlock> {
    let mut blocks = predict_rows(arch, model, std::iter::once(x), m, dropout_rate, seed)?;
    Ok(blocks.pop().expect("one input"))
}

/// [`predict_mc`] over every row of `data` under one RNG stream.
pub fn predict_mc_batch(
    arch: &Architecture,
    model: &ModelParams,
    data: &LabeledDataset,
    m: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<Vec<McPredictionBlock>> {
    check_data(arch, data)?;
    predict_rows(arch, model, (0..data.len()).map(|i| data.features(i)), m, dropout_rate, seed)
}
