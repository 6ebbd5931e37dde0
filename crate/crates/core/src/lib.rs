//! Deterministic single-process federated learning for Bayesian neural
//! classifiers: Gaussian posterior fusion, client weighting, uncertainty
//! metrics and a round-based orchestrator.

pub mod aggregation;
pub mod bnn;
pub mod codec;
pub mod datasets;
pub mod error;
pub mod gaussian;
pub mod orchestrator;
pub mod rng;
pub mod uncertainty;
pub mod weighting;

pub use error::{Error, Result};
pub use gaussian::{kl_gaussian, kl_posterior, sample_point, Gaussian, ModelParams, PointSet, PosteriorSet};
