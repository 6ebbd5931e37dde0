//! Server-side fusion of client posteriors into a global model.
//!
//! Every rule works parameter by parameter and accumulates clients in the
//! order they are given (ascending client id in the orchestrator), so results
//! are bit-reproducible.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, PointSet, PosteriorSet};

/// Tolerance on `Σ ω = 1` accepted by [`WeightVector::new`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Lower clamp applied to the DWC combined precision.
pub const DWC_PRECISION_FLOOR: f64 = 1e-8;

/// Normalized, nonnegative client weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weight vector is empty"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("weight {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    /// Normalizes nonnegative scores into weights.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        let total: f64 = scores.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid(format!("cannot normalize scores summing to {total}")));
        }
        Self::new(scores.iter().map(|s| s / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationStrategy {
    /// Naive weighted averaging of means and variances (FedAvg on point models).
    Nwa,
    /// Weighted sum of normals: variance uses squared weights.
    Ws,
    /// Linear pooling, moment-matched to one Gaussian.
    Lp,
    /// Normalized product of client Gaussians.
    Conflation,
    /// Weighted conflation.
    Wc,
    /// Distributed weight consolidation against the previous global model.
    Dwc,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 6] = [
        Self::Nwa,
        Self::Ws,
        Self::Lp,
        Self::Conflation,
        Self::Wc,
        Self::Dwc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Nwa => "nwa",
            Self::Ws => "ws",
            Self::Lp => "lp",
            Self::Conflation => "conflation",
            Self::Wc => "wc",
            Self::Dwc => "dwc",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown aggregation `{s}` (expected nwa|ws|lp|conflation|wc|dwc)"
                ))
            })
    }
}

fn check_clients(clients: &[PosteriorSet]) -> Result<&PosteriorSet> {
    let first = clients
        .first()
        .ok_or_else(|| Error::invalid("no clients to aggregate"))?;
    for c in &clients[1..] {
        first.ensure_compatible(c)?;
    }
    Ok(first)
}

fn check_weights(k: usize, w: &WeightVector) -> Result<()> {
    if w.len() != k {
        return Err(Error::invalid(format!("{k} clients but {} weights", w.len())));
    }
    Ok(())
}

/// Applies `fuse` to the column of client Gaussians at each parameter index.
fn fuse_columns<F>(clients: &[PosteriorSet], mut fuse: F) -> Result<PosteriorSet>
where
    F: FnMut(usize, &mut dyn Iterator<Item = &Gaussian>) -> (f64, f64),
{
    let first = &clients[0];
    let params = (0..first.len())
        .map(|i| {
            let (mean, var) = fuse(i, &mut clients.iter().map(|c| &c.params()[i]));
            Gaussian::new(mean, var)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSet::new(first.shape_tag(), params))
}

pub fn aggregate_nwa(clients: &[PosteriorSet], w: &WeightVector) -> Result<PosteriorSet> {
    check_clients(clients)?;
    check_weights(clients.len(), w)?;
    let ws = w.as_slice();
    fuse_columns(clients, |_, col| {
        let (mut mean, mut var) = (0.0, 0.0);
        for (g, &wk) in col.zip(ws) {
            mean += wk * g.mean();
            var += wk * g.variance();
        }
        (mean, var)
    })
}

pub fn aggregate_ws(clients: &[PosteriorSet], w: &WeightVector) -> Result<PosteriorSet> {
    check_clients(clients)?;
    check_weights(clients.len(), w)?;
    let ws = w.as_slice();
    fuse_columns(clients, |_, col| {
        let (mut mean, mut var) = (0.0, 0.0);
        for (g, &wk) in col.zip(ws) {
            mean += wk * g.mean();
            var += (wk * wk) * g.variance();
        }
        (mean, var)
    })
}

pub fn aggregate_lp(clients: &[PosteriorSet], w: &WeightVector) -> Result<PosteriorSet> {
    check_clients(clients)?;
    check_weights(clients.len(), w)?;
    let ws = w.as_slice();
    fuse_columns(clients, |_, col| {
        let col: Vec<&Gaussian> = col.collect();
        let (mut mean, mut avg_var) = (0.0, 0.0);
        for (g, &wk) in col.iter().zip(ws) {
            mean += wk * g.mean();
            avg_var += wk * g.variance();
        }
        let mut disagreement = 0.0;
        for (g, &wk) in col.iter().zip(ws) {
            let d = g.mean() - mean;
            disagreement += wk * d * d;
        }
        (mean, avg_var + disagreement)
    })
}

pub fn aggregate_conflation(clients: &[PosteriorSet]) -> Result<PosteriorSet> {
    check_clients(clients)?;
    fuse_columns(clients, |_, col| {
        let (mut precision, mut weighted_mean, mut min_var) = (0.0, 0.0, f64::INFINITY);
        for g in col {
            let p = g.precision();
            precision += p;
            weighted_mean += g.mean() * p;
            min_var = min_var.min(g.variance());
        }
        // 1/(1/x) can round one ulp above x; precisions only add.
        ((weighted_mean / precision), (1.0 / precision).min(min_var))
    })
}

pub fn aggregate_wc(clients: &[PosteriorSet], w: &WeightVector) -> Result<PosteriorSet> {
    check_clients(clients)?;
    check_weights(clients.len(), w)?;
    let ws = w.as_slice();
    let w_max = w.max();
    fuse_columns(clients, |_, col| {
        let (mut precision, mut weighted_mean) = (0.0, 0.0);
        let mut bound = f64::INFINITY;
        for (g, &wk) in col.zip(ws) {
            if wk == 0.0 {
                continue;
            }
            let p = wk * g.precision();
            precision += p;
            weighted_mean += p * g.mean();
            if wk == w_max {
                bound = bound.min(g.variance());
            }
        }
        // Same ulp guard as conflation: the result never exceeds the
        // variance of a max-weight client.
        (weighted_mean / precision, (w_max / precision).min(bound))
    })
}

/// Result of a DWC fusion, with the number of parameters whose combined
/// precision had to be clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct DwcOutcome {
    pub posterior: PosteriorSet,
    pub clamped: usize,
}

pub fn aggregate_dwc(clients: &[PosteriorSet], prev_global: &PosteriorSet) -> Result<DwcOutcome> {
    let first = check_clients(clients)?;
    first.ensure_compatible(prev_global)?;
    let extra = (clients.len() - 1) as f64;
    let mut clamped = 0;
    let posterior = fuse_columns(clients, |i, col| {
        let prior = &prev_global.params()[i];
        let (mut precision, mut weighted_mean) = (0.0, 0.0);
        for g in col {
            precision += g.precision();
            weighted_mean += g.mean() * g.precision();
        }
        let mut denom = precision - extra * prior.precision();
        let numer = weighted_mean - extra * prior.mean() * prior.precision();
        if denom < DWC_PRECISION_FLOOR {
            clamped += 1;
            denom = DWC_PRECISION_FLOOR;
        }
        (numer / denom, 1.0 / denom)
    })?;
    if clamped > 0 {
        log::warn!("dwc: clamped combined precision on {clamped} of {} parameters", posterior.len());
    }
    Ok(DwcOutcome { posterior, clamped })
}

pub fn aggregate_point_nwa(clients: &[PointSet], w: &WeightVector) -> Result<PointSet> {
    let first = clients
        .first()
        .ok_or_else(|| Error::invalid("no clients to aggregate"))?;
    if let Some(bad) = clients.iter().find(|c| !first.is_compatible(c)) {
        return Err(Error::shape(format!(
            "point set `{}` (P={}) vs `{}` (P={})",
            first.shape_tag(),
            first.len(),
            bad.shape_tag(),
            bad.len()
        )));
    }
    check_weights(clients.len(), w)?;
    let values = (0..first.len())
        .map(|i| {
            clients
                .iter()
                .zip(w.as_slice())
                .fold(0.0, |acc, (c, &wk)| acc + wk * c.values()[i])
        })
        .collect();
    Ok(PointSet::new(first.shape_tag(), values))
}

/// Output of [`aggregate`]: the new global posterior and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub posterior: PosteriorSet,
    pub dwc_clamped: usize,
}

/// Shared entry point for all strategies. Conflation ignores the weights;
/// DWC ignores them and needs `prev_global`.
pub fn aggregate(
    strategy: AggregationStrategy,
    clients: &[PosteriorSet],
    w: &WeightVector,
    prev_global: Option<&PosteriorSet>,
) -> Result<Aggregated> {
    let posterior = match strategy {
        AggregationStrategy::Nwa => aggregate_nwa(clients, w)?,
        AggregationStrategy::Ws => aggregate_ws(clients, w)?,
        AggregationStrategy::Lp => aggregate_lp(clients, w)?,
        AggregationStrategy::Conflation => aggregate_conflation(clients)?,
        AggregationStrategy::Wc => aggregate_wc(clients, w)?,
        AggregationStrategy::Dwc => {
            let prev = prev_global.ok_or_else(|| Error::invalid("dwc requires the previous global model"))?;
            let out = aggregate_dwc(clients, prev)?;
            return Ok(Aggregated {
                posterior: out.posterior,
                dwc_clamped: out.clamped,
            });
        }
    };
    Ok(Aggregated {
        posterior,
        dwc_clamped: 0,
    })
}
