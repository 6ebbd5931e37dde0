//! Labeled data: synthetic Gaussian blobs, comma-separated ingestion and
//! client partitioning.

mod delimited;
mod partition;

pub use delimited::{load_delimited, write_delimited, DelimitedSchema};
pub use partition::{
    partition, partition_2class, partition_dirichlet, partition_iid, PartitionKind, PartitionPlan,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Distance between neighbouring blob centers on the lattice.
pub const BLOB_SPACING: f64 = 4.0;

/// N examples of dimension d with integer labels in `[0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Validation(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Validation(format!("label {l} at row {i} is not below class count {classes}")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Example count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of each class in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Rows at `indices`, in that order. Keeps the class count.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {bad} out of range for {} rows", self.len())));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Self::new(
            self.dim,
            self.classes,
            features,
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Lattice position of class `c`: its base-`side` digits scaled by
/// [`BLOB_SPACING`], centered on the origin.
fn blob_center(c: usize, classes: usize, dim: usize) -> Vec<f64> {
    let side = (1..).find(|s: &usize| s.pow(dim as u32) >= classes).unwrap_or(classes);
    let offset = (side - 1) as f64 * BLOB_SPACING / 2.0;
    let mut rest = c;
    (0..dim)
        .map(|_| {
            let digit = rest % side;
            rest /= side;
            digit as f64 * BLOB_SPACING - offset
        })
        .collect()
}

/// Isotropic Gaussian blobs, `per_class_n` rows per class, rows grouped by
/// class. `spread` is the per-coordinate standard deviation.
pub fn generate_blobs(classes: usize, dim: usize, per_class_n: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::invalid("blobs need at least two classes"));
    }
    if dim == 0 || per_class_n == 0 {
        return Err(Error::invalid("blobs need dim >= 1 and per_class_n >= 1"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::invalid(format!("spread must be finite and nonnegative, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(classes * per_class_n * dim);
    let mut labels = Vec::with_capacity(classes * per_class_n);
    for c in 0..classes {
        let center = blob_center(c, classes, dim);
        for _ in 0..per_class_n {
            features.extend(center.iter().map(|&m| m + spread * noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    LabeledDataset::new(dim, classes, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_reproducible_and_balanced() {
        let a = generate_blobs(3, 2, 50, 1.0, 9).unwrap();
        let b = generate_blobs(3, 2, 50, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![50, 50, 50]);
        assert_ne!(a, generate_blobs(3, 2, 50, 1.0, 10).unwrap());
    }

    #[test]
    fn lattice_centers_are_distinct() {
        for (c, d) in [(3, 2), (4, 2), (10, 2), (5, 1), (8, 3)] {
            let centers: Vec<_> = (0..c).map(|k| blob_center(k, c, d)).collect();
            for i in 0..c {
                for j in i + 1..c {
                    let dist: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    assert!(dist.sqrt() >= BLOB_SPACING - 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_spread_puts_points_on_centers() {
        let ds = generate_blobs(4, 2, 3, 0.0, 1).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features(i), blob_center(ds.label(i), 4, 2).as_slice());
        }
    }

    #[test]
    fn validation() {
        assert!(generate_blobs(1, 2, 5, 1.0, 0).is_err());
        assert!(LabeledDataset::new(2, 2, vec![0.0; 4], vec![0, 2]).is_err());
        assert!(LabeledDataset::new(2, 2, vec![0.0; 3], vec![0, 1]).is_err());
        assert!(LabeledDataset::new(2, 2, vec![], vec![]).is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let ds = generate_blobs(2, 1, 3, 1.0, 4).unwrap();
        let sub = ds.subset(&[5, 0]).unwrap();
        assert_eq!(sub.features(0), ds.features(5));
        assert_eq!(sub.labels(), &[1, 0]);
        assert!(ds.subset(&[6]).is_err());
    }
}
