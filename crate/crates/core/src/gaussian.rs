//! Diagonal-Gaussian posteriors and closed-form KL divergence.
//!
//! A model's variational posterior is a [`PosteriorSet`]: one independent
//! univariate [`Gaussian`] per network weight or bias. Point-valued models
//! (deterministic, MC dropout, or a draw from a posterior) are [`PointSet`]s.

use crate::error::{Error, Result};

/// Smallest variance a [`Gaussian`] may hold.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Univariate normal distribution over one model parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    mean: f64,
    variance: f64,
}

impl Gaussian {
    /// Builds a Gaussian, flooring the variance at [`VARIANCE_FLOOR`].
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() {
            return Err(Error::invalid(format!(
                "gaussian parameters must be finite (mean={mean}, variance={variance})"
            )));
        }
        Ok(Self {
            mean,
            variance: variance.max(VARIANCE_FLOOR),
        })
    }

    /// Standard normal N(0, 1).
    pub fn standard() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }
}

/// KL(p ‖ q) between two univariate Gaussians.
pub fn kl_gaussian(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if !(p.mean.is_finite() && p.variance.is_finite() && q.mean.is_finite() && q.variance.is_finite())
    {
        return Err(Error::invalid("kl_gaussian received non-finite input"));
    }
    Ok(kl_unchecked(p.mean, p.variance, q.mean, q.variance))
}

#[inline]
pub(crate) fn kl_unchecked(p_mean: f64, p_var: f64, q_mean: f64, q_var: f64) -> f64 {
    let diff = p_mean - q_mean;
    // ln(σ_q/σ_p) written as half the log variance ratio
    let kl = 0.5 * (q_var / p_var).ln() + (p_var + diff * diff) / (2.0 * q_var) - 0.5;
    // Rounding can leave a tiny negative residue when p ≈ q.
    kl.max(0.0)
}

/// Ordered per-parameter posterior of a whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSet {
    shape_tag: String,
    params: Vec<Gaussian>,
}

impl PosteriorSet {
    pub fn new(shape_tag: impl Into<String>, params: Vec<Gaussian>) -> Self {
        Self {
            shape_tag: shape_tag.into(),
            params,
        }
    }

    /// Builds a set from parallel mean and variance slices.
    pub fn from_moments(shape_tag: impl Into<String>, means: &[f64], variances: &[f64]) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::invalid(format!(
                "{} means but {} variances",
                means.len(),
                variances.len()
            )));
        }
        let params = means
            .iter()
            .zip(variances)
            .map(|(&m, &v)| Gaussian::new(m, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(shape_tag, params))
    }

    /// Every parameter set to the same Gaussian.
    pub fn filled(shape_tag: impl Into<String>, len: usize, value: Gaussian) -> Self {
        Self::new(shape_tag, vec![value; len])
    }

    pub fn shape_tag(&self) -> &str {
        &self.shape_tag
    }

    pub fn params(&self) -> &[Gaussian] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalar variational parameters (a mean and a variance each).
    pub fn scalar_len(&self) -> usize {
        2 * self.params.len()
    }

    pub fn means(&self) -> Vec<f64> {
        self.params.iter().map(Gaussian::mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.params.iter().map(Gaussian::variance).collect()
    }

    pub fn is_compatible(&self, other: &PosteriorSet) -> bool {
        self.shape_tag == other.shape_tag && self.params.len() == other.params.len()
    }

    pub(crate) fn ensure_compatible(&self, other: &PosteriorSet) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "posterior `{}` (P={}) vs `{}` (P={})",
                self.shape_tag,
                self.params.len(),
                other.shape_tag,
                other.params.len()
            )))
        }
    }

    /// The posterior means as a point estimate.
    pub fn mean_point(&self) -> PointSet {
        PointSet::new(self.shape_tag.clone(), self.means())
    }
}

/// Ordered real-valued model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    shape_tag: String,
    values: Vec<f64>,
}

impl PointSet {
    pub fn new(shape_tag: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            shape_tag: shape_tag.into(),
            values,
        }
    }

    pub fn shape_tag(&self) -> &str {
        &self.shape_tag
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_compatible(&self, other: &PointSet) -> bool {
        self.shape_tag == other.shape_tag && self.values.len() == other.values.len()
    }
}

/// Parameters of a whole model: a posterior for VI networks, plain values
/// for deterministic and MC-dropout networks.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Posterior(PosteriorSet),
    Point(PointSet),
}

impl ModelParams {
    pub fn posterior(&self) -> Option<&PosteriorSet> {
        match self {
            ModelParams::Posterior(p) => Some(p),
            ModelParams::Point(_) => None,
        }
    }

    pub fn point(&self) -> Option<&PointSet> {
        match self {
            ModelParams::Point(p) => Some(p),
            ModelParams::Posterior(_) => None,
        }
    }

    pub fn shape_tag(&self) -> &str {
        match self {
            ModelParams::Posterior(p) => p.shape_tag(),
            ModelParams::Point(p) => p.shape_tag(),
        }
    }

    /// Number of network weights and biases.
    pub fn len(&self) -> usize {
        match self {
            ModelParams::Posterior(p) => p.len(),
            ModelParams::Point(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sum of per-parameter KL divergences KL(p ‖ q) under mean-field independence.
pub fn kl_posterior(p: &PosteriorSet, q: &PosteriorSet) -> Result<f64> {
    p.ensure_compatible(q)?;
    Ok(p.params
        .iter()
        .zip(&q.params)
        .map(|(a, b)| kl_unchecked(a.mean, a.variance, b.mean, b.variance))
        .sum())
}

/// Pathwise sample `mean + sqrt(variance) * noise` for every parameter.
pub fn sample_point(post: &PosteriorSet, noise: &[f64]) -> Result<PointSet> {
    if noise.len() != post.len() {
        return Err(Error::invalid(format!(
            "noise has length {} but posterior has {} parameters",
            noise.len(),
            post.len()
        )));
    }
    let values = post
        .params
        .iter()
        .zip(noise)
        .map(|(g, &e)| g.mean + g.std_dev() * e)
        .collect();
    Ok(PointSet::new(post.shape_tag.clone(), values))
}
