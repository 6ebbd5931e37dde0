//! Client weighting schemes feeding the aggregation step.

use std::fmt;
use std::str::FromStr;

use crate::aggregation::WeightVector;
use crate::error::{Error, Result};
use crate::gaussian::{kl_posterior, ModelParams, PosteriorSet};
#[cfg(test)]
use crate::gaussian::PointSet;

/// Floor applied to KL divergences before taking reciprocals.
pub const KL_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    pub model: ModelParams,
    pub train_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightingScheme {
    Equal,
    TrainSize,
    MaxDiscrepancy,
    Distance,
}

impl WeightingScheme {
    pub const ALL: [WeightingScheme; 4] = [
        Self::Equal,
        Self::TrainSize,
        Self::MaxDiscrepancy,
        Self::Distance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Equal => "equal",
            Self::TrainSize => "train_size",
            Self::MaxDiscrepancy => "max_discrepancy",
            Self::Distance => "distance",
        }
    }

    /// Whether the scheme needs posterior (VI) client models.
    pub fn requires_posterior(&self) -> bool {
        matches!(self, Self::MaxDiscrepancy | Self::Distance)
    }
}

impl fmt::Display for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|w| w.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown weighting `{s}` (expected equal|train_size|max_discrepancy|distance)"
                ))
            })
    }
}

pub fn weights_equal(k: usize) -> Result<WeightVector> {
    if k == 0 {
        return Err(Error::invalid("weights_equal needs at least one client"));
    }
    WeightVector::new(vec![1.0 / k as f64; k])
}

pub fn weights_train_size(reports: &[ClientReport]) -> Result<WeightVector> {
    if reports.is_empty() {
        return Err(Error::invalid("no client reports"));
    }
    let total: usize = reports.iter().map(|r| r.train_size).sum();
    if total == 0 {
        return Err(Error::invalid("all client train sizes are zero"));
    }
    if reports.iter().all(|r| r.train_size == reports[0].train_size) {
        // identical shares: bit-equal to the equal scheme
        return weights_equal(reports.len());
    }
    WeightVector::new(
        reports
            .iter()
            .map(|r| r.train_size as f64 / total as f64)
            .collect(),
    )
}

fn posteriors(reports: &[ClientReport]) -> Result<Vec<&PosteriorSet>> {
    reports
        .iter()
        .map(|r| {
            r.model.posterior().ok_or_else(|| {
                Error::UnsupportedModel(format!(
                    "client {} has no posterior; KL weighting needs VI models",
                    r.client_id
                ))
            })
        })
        .collect()
}

fn floored_reciprocal(kl: f64, floor_hits: &mut usize) -> f64 {
    if kl < KL_FLOOR {
        *floor_hits += 1;
        1.0 / KL_FLOOR
    } else {
        1.0 / kl
    }
}

/// γ_k = max over j ≠ k of 1 / KL(q_k ‖ q_j), normalized.
pub fn weights_max_discrepancy(reports: &[ClientReport]) -> Result<WeightVector> {
    if reports.len() < 2 {
        return Err(Error::invalid("max-discrepancy weighting needs at least two clients"));
    }
    let posts = posteriors(reports)?;
    let mut floor_hits = 0;
    let mut gammas = Vec::with_capacity(posts.len());
    for (k, qk) in posts.iter().enumerate() {
        let mut best = 0.0f64;
        for (j, qj) in posts.iter().enumerate() {
            if j == k {
                continue;
            }
            let kl = kl_posterior(qk, qj)?;
            best = best.max(floored_reciprocal(kl, &mut floor_hits));
        }
        gammas.push(best);
    }
    if floor_hits > 0 {
        log::info!("max_discrepancy: KL floor hit {floor_hits} times");
    }
    WeightVector::from_scores(&gammas)
}

/// γ_k = 1 / KL(q_g ‖ q_k), normalized.
pub fn weights_distance_to_global(reports: &[ClientReport], global: &PosteriorSet) -> Result<WeightVector> {
    if reports.is_empty() {
        return Err(Error::invalid("no client reports"));
    }
    let posts = posteriors(reports)?;
    let mut floor_hits = 0;
    let gammas = posts
        .iter()
        .map(|qk| Ok(floored_reciprocal(kl_posterior(global, qk)?, &mut floor_hits)))
        .collect::<Result<Vec<_>>>()?;
    if floor_hits > 0 {
        log::info!("distance: KL floor hit {floor_hits} times");
    }
    WeightVector::from_scores(&gammas)
}

/// Dispatches to the configured scheme. `global` is required for
/// [`WeightingScheme::Distance`].
pub fn compute_weights(
    scheme: WeightingScheme,
    reports: &[ClientReport],
    global: Option<&PosteriorSet>,
) -> Result<WeightVector> {
    match scheme {
        WeightingScheme::Equal => weights_equal(reports.len()),
        WeightingScheme::TrainSize => weights_train_size(reports),
        WeightingScheme::MaxDiscrepancy => weights_max_discrepancy(reports),
        WeightingScheme::Distance => {
            let g = global.ok_or_else(|| {
                Error::UnsupportedModel("distance weighting needs a posterior global model".into())
            })?;
            weights_distance_to_global(reports, g)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;

    fn report(id: usize, m: f64, v: f64, n: usize) -> ClientReport {
        ClientReport {
            client_id: id,
            model: ModelParams::Posterior(PosteriorSet::new("t", vec![Gaussian::new(m, v).unwrap()])),
            train_size: n,
        }
    }

    #[test]
    fn equal_weights() {
        assert_eq!(weights_equal(1).unwrap().as_slice(), &[1.0]);
        assert_eq!(weights_equal(4).unwrap().as_slice(), &[0.25; 4]);
        assert_eq!(weights_equal(10).unwrap().as_slice(), &[0.1; 10]);
        assert!(weights_equal(0).is_err());
    }

    #[test]
    fn train_size_weights() {
        let r = [report(0, 0.0, 1.0, 10), report(1, 0.0, 1.0, 30), report(2, 0.0, 1.0, 60)];
        let w = weights_train_size(&r).unwrap();
        for (a, b) in w.as_slice().iter().zip([0.1, 0.3, 0.6]) {
            assert!((a - b).abs() < 1e-15);
        }
        let same: Vec<_> = (0..7).map(|i| report(i, 0.0, 1.0, 13)).collect();
        assert_eq!(weights_train_size(&same).unwrap(), weights_equal(7).unwrap());
        assert_eq!(weights_train_size(&[report(0, 0.0, 1.0, 99)]).unwrap().as_slice(), &[1.0]);
        assert!(weights_train_size(&[report(0, 0.0, 1.0, 0), report(1, 0.0, 1.0, 0)]).is_err());
    }

    #[test]
    fn max_discrepancy_suppresses_outlier() {
        let r = [report(0, 0.0, 1.0, 1), report(1, 0.1, 1.0, 1), report(2, 5.0, 1.0, 1)];
        let w = weights_max_discrepancy(&r).unwrap();
        // γ = (200, 200, 1/12.005), from KL(N(a,1) ‖ N(b,1)) = (a-b)²/2
        let gamma = [200.0, 200.0, 1.0 / 12.005];
        let total: f64 = gamma.iter().sum();
        for (a, g) in w.as_slice().iter().zip(gamma) {
            assert!((a - g / total).abs() < 1e-9);
        }
        assert!((w.as_slice()[2] - 0.00021).abs() < 1e-5);
    }

    #[test]
    fn max_discrepancy_identical_pair_is_symmetric() {
        let r = [report(0, 0.3, 2.0, 1), report(1, 0.3, 2.0, 1)];
        assert_eq!(weights_max_discrepancy(&r).unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn max_discrepancy_errors() {
        assert!(matches!(
            weights_max_discrepancy(&[report(0, 0.0, 1.0, 1)]),
            Err(Error::InvalidArgument(_))
        ));
        let point = ClientReport {
            client_id: 1,
            model: ModelParams::Point(PointSet::new("t", vec![0.0])),
            train_size: 1,
        };
        assert!(matches!(
            weights_max_discrepancy(&[report(0, 0.0, 1.0, 1), point]),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn distance_to_global() {
        let global = PosteriorSet::new("t", vec![Gaussian::standard()]);
        let w = weights_distance_to_global(&[report(0, 1.0, 1.0, 1), report(1, 2.0, 1.0, 1)], &global).unwrap();
        assert!((w.as_slice()[0] - 0.8).abs() < 1e-12);
        assert!((w.as_slice()[1] - 0.2).abs() < 1e-12);

        assert_eq!(weights_distance_to_global(&[report(0, 3.0, 1.0, 1)], &global).unwrap().as_slice(), &[1.0]);

        // a client equal to the global saturates at 1/KL_FLOOR
        let w = weights_distance_to_global(&[report(0, 0.0, 1.0, 1), report(1, 1.0, 1.0, 1)], &global).unwrap();
        let expect = (1.0 / KL_FLOOR) / (1.0 / KL_FLOOR + 2.0);
        assert!((w.as_slice()[0] - expect).abs() < 1e-15);
        assert!(w.as_slice()[0] > 0.999_999);
    }

    #[test]
    fn swapping_clients_swaps_weights() {
        let r = vec![report(0, 0.0, 1.0, 1), report(1, 0.4, 0.5, 1), report(2, -1.0, 2.0, 1)];
        let mut s = r.clone();
        s.swap(0, 2);
        let a = weights_max_discrepancy(&r).unwrap();
        let b = weights_max_discrepancy(&s).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() < 1e-14;
        assert!(close(a.as_slice()[0], b.as_slice()[2]));
        assert!(close(a.as_slice()[1], b.as_slice()[1]));
        let g = PosteriorSet::new("t", vec![Gaussian::new(0.1, 0.9).unwrap()]);
        let a = weights_distance_to_global(&r, &g).unwrap();
        let b = weights_distance_to_global(&s, &g).unwrap();
        assert!(close(a.as_slice()[0], b.as_slice()[2]));
    }
}
