//! Round-based federation: distribute, train locally, weight, aggregate,
//! evaluate.

mod config;
mod report;

pub use config::{lr_at, DataConfig, DataSourceKind, ExperimentConfig, LrSchedule, PretrainConfig, KEYS};
pub use report::{write_metrics_csv, write_retention_csv, write_timing_csv};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregation::{aggregate, aggregate_point_nwa};
use crate::bnn::{client_update, init_model, predict_mc_batch, Architecture, PriorModel, TrainConfig};
use crate::datasets::{generate_blobs, load_delimited, partition, DelimitedSchema, LabeledDataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::gaussian::{ModelParams, PointSet, PosteriorSet};
use crate::rng::{derive_seed, stream};
use crate::uncertainty::{argmax, nll, retention_curve, UncertaintyMetric, UncertaintyRecord};
use crate::weighting::{compute_weights, ClientReport};

/// Test-set summary of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub nll: f64,
    pub mean_entropy: f64,
    pub mean_aleatoric: f64,
    pub mean_epistemic: f64,
    /// Per-example normalized entropy, aleatoric trace, epistemic trace.
    pub entropy: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub correct: Vec<bool>,
}

impl Evaluation {
    pub fn scores(&self, metric: UncertaintyMetric) -> &[f64] {
        match metric {
            UncertaintyMetric::Entropy => &self.entropy,
            UncertaintyMetric::Aleatoric => &self.aleatoric,
            UncertaintyMetric::Epistemic => &self.epistemic,
        }
    }

    pub fn retention(&self, metric: UncertaintyMetric, fractions: &[f64]) -> Result<Vec<(f64, f64)>> {
        retention_curve(self.scores(metric), &self.correct, fractions)
    }
}

/// Accuracy, NLL and uncertainty of `model` on `data` from `m` MC samples.
pub fn evaluate(
    arch: &Architecture,
    model: &ModelParams,
    data: &LabeledDataset,
    m: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<Evaluation> {
    let blocks = predict_mc_batch(arch, model, data, m, dropout_rate, seed)?;
    let n = blocks.len() as f64;
    let mut eval = Evaluation {
        accuracy: 0.0,
        nll: 0.0,
        mean_entropy: 0.0,
        mean_aleatoric: 0.0,
        mean_epistemic: 0.0,
        entropy: Vec::with_capacity(blocks.len()),
        aleatoric: Vec::with_capacity(blocks.len()),
        epistemic: Vec::with_capacity(blocks.len()),
        correct: Vec::with_capacity(blocks.len()),
    };
    let mut hits = 0usize;
    for (i, block) in blocks.iter().enumerate() {
        let rec = UncertaintyRecord::from_block(block);
        let label = data.label(i);
        let ok = rec.predicted_class == label;
        hits += usize::from(ok);
        eval.nll += nll(&rec.mean_prob, label);
        eval.entropy.push(rec.entropy_norm);
        eval.aleatoric.push(rec.aleatoric_trace);
        eval.epistemic.push(rec.epistemic_trace);
        eval.correct.push(ok);
    }
    eval.accuracy = hits as f64 / n;
    eval.nll /= n;
    eval.mean_entropy = eval.entropy.iter().sum::<f64>() / n;
    eval.mean_aleatoric = eval.aleatoric.iter().sum::<f64>() / n;
    eval.mean_epistemic = eval.epistemic.iter().sum::<f64>() / n;
    Ok(eval)
}

/// Fraction of `data` whose MC-mean prediction is correct.
pub fn accuracy(arch: &Architecture, model: &ModelParams, data: &LabeledDataset, m: usize, dropout_rate: f64, seed: u64) -> Result<f64> {
    let blocks = predict_mc_batch(arch, model, data, m, dropout_rate, seed)?;
    let hits = blocks
        .iter()
        .enumerate()
        .filter(|(i, b)| argmax(&crate::uncertainty::mean_probability(b)) == data.label(*i))
        .count();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub nll: f64,
    pub mean_entropy: f64,
    pub mean_aleatoric: f64,
    pub mean_epistemic: f64,
    pub weights: Vec<f64>,
    pub learning_rate: f64,
    pub dwc_clamped: usize,
    /// Seconds spent on the round, including evaluation.
    pub wall_time: f64,
}

/// Model returned by central pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub model: ModelParams,
    /// Training-set indices used (training and validation together).
    pub indices: Vec<usize>,
    pub epochs_run: usize,
    pub best_validation_accuracy: f64,
}

/// Trains one epoch at a time and stops once validation accuracy has not
/// improved for `patience` epochs. Returns the best-validation model and the
/// number of epochs run.
#[allow(clippy::too_many_arguments)]
pub fn train_with_early_stopping(
    arch: &Architecture,
    init: &ModelParams,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    cfg: &TrainConfig,
    prior: &PriorModel,
    max_epochs: usize,
    patience: usize,
) -> Result<(ModelParams, usize, f64)> {
    let epoch_cfg = |e: usize| TrainConfig {
        local_epochs: 1,
        seed: derive_seed(cfg.seed, &[e as u64]),
        ..cfg.clone()
    };
    let val_acc = |model: &ModelParams, e: usize| {
        accuracy(arch, model, validation, cfg.mc_samples, cfg.dropout_rate, derive_seed(cfg.seed, &[u64::MAX, e as u64]))
    };
    let mut model = init.clone();
    let mut best = (init.clone(), f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut epochs = 0;
    while epochs < max_epochs {
        model = client_update(arch, &model, train, &epoch_cfg(epochs), prior, 0)?.model;
        let acc = val_acc(&model, epochs)?;
        epochs += 1;
        if acc > best.1 {
            best = (model.clone(), acc);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= patience {
                break;
            }
        }
    }
    Ok((best.0, epochs, best.1))
}

/// Class-stratified sample of `round(fraction · N)` indices; each class
/// contributes its floor share and leftover slots go to the largest
/// remainders (lowest class first on ties).
pub fn stratified_sample(data: &LabeledDataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let total = (fraction * data.len() as f64).round() as usize;
    if total == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} examples selects nothing",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = data.indices_by_class();
    let shares: Vec<f64> = by_class.iter().map(|c| fraction * c.len() as f64).collect();
    let mut take: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    let mut missing = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            missing -= 1;
        }
    }
    let mut picked = Vec::with_capacity(total);
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        picked.extend_from_slice(&idx[..take[c]]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Pre-trains the initial global model centrally on a stratified fraction
/// of `train`, holding out part of it for early stopping.
pub fn pretrain_global(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<PretrainOutcome> {
    let p = &cfg.pretrain;
    let seed = derive_seed(cfg.seed, &[stream::PRETRAIN]);
    let mut indices = stratified_sample(train, p.fraction, seed)?;
    if indices.len() < 2 {
        return Err(Error::invalid("pre-training needs at least two examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let mut shuffled = indices.clone();
    shuffled.shuffle(&mut rng);
    let n_val = ((p.validation_fraction * shuffled.len() as f64).round() as usize).clamp(1, shuffled.len() - 1);
    let validation = train.subset(&shuffled[..n_val])?;
    let fit = train.subset(&shuffled[n_val..])?;
    let init = init_model(&cfg.arch, derive_seed(cfg.seed, &[stream::INIT]));
    let train_cfg = TrainConfig {
        learning_rate: cfg.lr.eta0,
        seed: derive_seed(seed, &[1]),
        ..cfg.train.clone()
    };
    let prior = PriorModel::Isotropic(cfg.prior);
    let (model, epochs_run, best) =
        train_with_early_stopping(&cfg.arch, &init, &fit, &validation, &train_cfg, &prior, p.max_epochs, p.patience)?;
    log::info!("pretrain: {epochs_run} epochs on {} examples, best validation accuracy {best:.4}", fit.len());
    indices.sort_unstable();
    Ok(PretrainOutcome {
        model,
        indices,
        epochs_run,
        best_validation_accuracy: best,
    })
}

/// Trains the configured model on all of `train` as a single client for
/// `rounds × local_epochs` epochs under the same learning-rate schedule.
pub fn train_centralized(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<ModelParams> {
    let mut model = init_model(&cfg.arch, derive_seed(cfg.seed, &[stream::INIT]));
    let prior = PriorModel::Isotropic(cfg.prior);
    for r in 0..cfg.rounds {
        let train_cfg = TrainConfig {
            learning_rate: lr_at(r, &cfg.lr),
            seed: derive_seed(cfg.seed, &[stream::CLIENT, r as u64, u64::MAX]),
            ..cfg.train.clone()
        };
        model = client_update(&cfg.arch, &model, train, &train_cfg, &prior, 0)
            .map_err(|e| Error::Round { round: r, source: Box::new(e) })?
            .model;
    }
    Ok(model)
}

/// Train and test sets described by `cfg.data`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let d = &cfg.data;
    match d.source {
        DataSourceKind::Blobs => Ok((
            generate_blobs(d.classes, d.dim, d.per_class, d.spread, derive_seed(cfg.seed, &[stream::TRAIN_DATA]))?,
            generate_blobs(d.classes, d.dim, d.test_per_class, d.spread, derive_seed(cfg.seed, &[stream::TEST_DATA]))?,
        )),
        DataSourceKind::Csv => {
            let schema = DelimitedSchema {
                has_header: d.header,
                classes: Some(cfg.arch.classes()),
            };
            let missing = || Error::Validation("csv data needs data.train_path and data.test_path".into());
            Ok((
                load_delimited(d.train_path.as_ref().ok_or_else(missing)?, &schema)?,
                load_delimited(d.test_path.as_ref().ok_or_else(missing)?, &schema)?,
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub rounds: Vec<RoundMetrics>,
    pub global: ModelParams,
    pub final_evaluation: Evaluation,
    pub plan: PartitionPlan,
    pub pretrain: Option<PretrainOutcome>,
}

fn run_clients(
    cfg: &ExperimentConfig,
    pool: Option<&rayon::ThreadPool>,
    global: &ModelParams,
    client_data: &[LabeledDataset],
    prior: &PriorModel,
    round: usize,
    eta: f64,
) -> Result<Vec<ClientReport>> {
    let one = |k: usize| {
        let train_cfg = TrainConfig {
            learning_rate: eta,
            seed: derive_seed(cfg.seed, &[stream::CLIENT, round as u64, k as u64]),
            ..cfg.train.clone()
        };
        client_update(&cfg.arch, global, &client_data[k], &train_cfg, prior, k)
    };
    let results: Vec<Result<ClientReport>> = match pool {
        Some(pool) => pool.install(|| (0..client_data.len()).into_par_iter().map(one).collect()),
        None => (0..client_data.len()).map(one).collect(),
    };
    results.into_iter().collect()
}

/// Runs `cfg.rounds` federation rounds over `cfg.clients` clients.
///
/// Every random choice is seeded from `cfg.seed` and the (round, client)
/// pair, and reports are combined in client order, so results do not depend
/// on `cfg.parallelism`.
pub fn run_federation(cfg: &ExperimentConfig, train: &LabeledDataset, test: &LabeledDataset) -> Result<FederationOutcome> {
    cfg.validate()?;
    for (name, ds) in [("train", train), ("test", test)] {
        if ds.dim() != cfg.arch.input_dim() || ds.classes() > cfg.arch.classes() {
            return Err(Error::Validation(format!(
                "{name} data (dim {}, {} classes) does not fit architecture {}",
                ds.dim(),
                ds.classes(),
                cfg.arch.shape_tag()
            )));
        }
    }
    let plan = partition(train, cfg.clients, cfg.partition, derive_seed(cfg.seed, &[stream::PARTITION]))?;
    let client_data = plan
        .assignments()
        .iter()
        .map(|idx| train.subset(idx))
        .collect::<Result<Vec<_>>>()?;

    let pretrain = if cfg.pretrain.enabled {
        Some(pretrain_global(cfg, train)?)
    } else {
        None
    };
    let mut global = match &pretrain {
        Some(p) => p.model.clone(),
        None => init_model(&cfg.arch, derive_seed(cfg.seed, &[stream::INIT])),
    };
    let mut prior = PriorModel::Isotropic(cfg.prior);

    let pool = match cfg.parallelism {
        1 => None,
        n => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
        ),
    };

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut last_eval = None;
    for r in 0..cfg.rounds {
        let started = Instant::now();
        let eta = lr_at(r, &cfg.lr);
        let wrap = |e: Error| Error::Round { round: r, source: Box::new(e) };
        let reports = run_clients(cfg, pool.as_ref(), &global, &client_data, &prior, r, eta).map_err(wrap)?;
        let weights = compute_weights(cfg.weighting, &reports, global.posterior()).map_err(wrap)?;

        let mut dwc_clamped = 0;
        global = match &global {
            ModelParams::Posterior(prev) => {
                let posts: Vec<PosteriorSet> = reports
                    .into_iter()
                    .map(|rep| match rep.model {
                        ModelParams::Posterior(p) => Ok(p),
                        ModelParams::Point(_) => Err(Error::UnsupportedModel("client returned a point model".into())),
                    })
                    .collect::<Result<_>>()
                    .map_err(wrap)?;
                let out = aggregate(cfg.aggregation, &posts, &weights, Some(prev)).map_err(wrap)?;
                dwc_clamped = out.dwc_clamped;
                ModelParams::Posterior(out.posterior)
            }
            ModelParams::Point(_) => {
                let points: Vec<PointSet> = reports
                    .into_iter()
                    .map(|rep| match rep.model {
                        ModelParams::Point(p) => Ok(p),
                        ModelParams::Posterior(_) => Err(Error::UnsupportedModel("client returned a posterior".into())),
                    })
                    .collect::<Result<_>>()
                    .map_err(wrap)?;
                ModelParams::Point(aggregate_point_nwa(&points, &weights).map_err(wrap)?)
            }
        };
        if cfg.refresh_prior {
            if let ModelParams::Posterior(g) = &global {
                prior = PriorModel::PerParameter(g.clone());
            }
        }

        let eval = evaluate(
            &cfg.arch,
            &global,
            test,
            cfg.train.mc_samples,
            cfg.train.dropout_rate,
            derive_seed(cfg.seed, &[stream::EVAL, r as u64]),
        )
        .map_err(wrap)?;
        log::info!("round {r}: accuracy {:.4}, nll {:.4}, lr {eta:.3e}", eval.accuracy, eval.nll);
        rounds.push(RoundMetrics {
            round: r,
            accuracy: eval.accuracy,
            nll: eval.nll,
            mean_entropy: eval.mean_entropy,
            mean_aleatoric: eval.mean_aleatoric,
            mean_epistemic: eval.mean_epistemic,
            weights: weights.as_slice().to_vec(),
            learning_rate: eta,
            dwc_clamped,
            wall_time: started.elapsed().as_secs_f64(),
        });
        last_eval = Some(eval);
    }
    Ok(FederationOutcome {
        rounds,
        global,
        final_evaluation: last_eval.expect("rounds >= 1"),
        plan,
        pretrain,
    })
}
