//! Reductions over Monte Carlo prediction samples: mean class probability,
//! normalized entropy, aleatoric/epistemic variance split, NLL and
//! accuracy-vs-retained-data curves.

use crate::error::{Error, Result};

/// Tolerance on each row summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Probability floor used by [`nll`].
pub const NLL_FLOOR: f64 = 1e-12;

/// M × C class-probability samples for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct McPredictionBlock {
    classes: usize,
    rows: Vec<f64>,
}

impl McPredictionBlock {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || classes == 0 {
            return Err(Error::invalid("prediction block needs at least one non-empty row"));
        }
        let mut flat = Vec::with_capacity(rows.len() * classes);
        for (m, row) in rows.iter().enumerate() {
            if row.len() != classes {
                return Err(Error::invalid(format!("row {m} has {} classes, expected {classes}", row.len())));
            }
            check_simplex(row).map_err(|e| Error::invalid(format!("row {m}: {e}")))?;
            flat.extend_from_slice(row);
        }
        Ok(Self { classes, rows: flat })
    }

    /// Builds a block from rows already known to be valid simplex vectors.
    pub(crate) fn from_flat(classes: usize, rows: Vec<f64>) -> Self {
        debug_assert!(classes > 0 && !rows.is_empty() && rows.len().is_multiple_of(classes));
        Self { classes, rows }
    }

    pub fn samples(&self) -> usize {
        self.rows.len() / self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.classes)
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m * self.classes..(m + 1) * self.classes]
    }
}

fn check_simplex(p: &[f64]) -> std::result::Result<(), String> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err("entries must be finite and nonnegative".into());
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("entries sum to {s}"));
    }
    Ok(())
}

/// Column-wise mean of the sampled probabilities.
pub fn mean_probability(block: &McPredictionBlock) -> Vec<f64> {
    let mut mean = vec![0.0; block.classes];
    for row in block.rows() {
        for (acc, p) in mean.iter_mut().zip(row) {
            *acc += p;
        }
    }
    let m = block.samples() as f64;
    mean.iter_mut().for_each(|x| *x /= m);
    mean
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Entropy divided by ln C, with 0·ln 0 = 0. Lies in [0, 1].
pub fn normalized_entropy(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    // 1/C is not representable for most C, so the sum would land an ulp off
    if p[0] > 0.0 && p.iter().all(|&x| x == p[0]) {
        return 1.0;
    }
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum();
    (h / (p.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Dense symmetric C × C matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }
}

/// Aleatoric `(1/M) Σ diag(p̂) − p̂p̂ᵀ` and epistemic `(1/M) Σ (p̂ − p̄)(p̂ − p̄)ᵀ`.
pub fn decompose_variance(block: &McPredictionBlock) -> (SymMatrix, SymMatrix) {
    let c = block.classes;
    let mean = mean_probability(block);
    let mut aleatoric = SymMatrix::zeros(c);
    let mut epistemic = SymMatrix::zeros(c);
    for row in block.rows() {
        for i in 0..c {
            aleatoric.data[i * c + i] += row[i];
            let di = row[i] - mean[i];
            for j in 0..c {
                aleatoric.data[i * c + j] -= row[i] * row[j];
                epistemic.data[i * c + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let m = block.samples() as f64;
    aleatoric.data.iter_mut().for_each(|x| *x /= m);
    epistemic.data.iter_mut().for_each(|x| *x /= m);
    (aleatoric, epistemic)
}

/// `-ln p[label]` with the probability floored at [`NLL_FLOOR`].
pub fn nll(p_bar: &[f64], label: usize) -> f64 {
    -p_bar[label].max(NLL_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRecord {
    pub mean_prob: Vec<f64>,
    pub predicted_class: usize,
    pub entropy_norm: f64,
    pub aleatoric: SymMatrix,
    pub epistemic: SymMatrix,
    pub aleatoric_trace: f64,
    pub epistemic_trace: f64,
}

impl UncertaintyRecord {
    pub fn from_block(block: &McPredictionBlock) -> Self {
        let mean_prob = mean_probability(block);
        let (aleatoric, epistemic) = decompose_variance(block);
        Self {
            predicted_class: argmax(&mean_prob),
            entropy_norm: normalized_entropy(&mean_prob),
            aleatoric_trace: aleatoric.trace(),
            epistemic_trace: epistemic.trace(),
            mean_prob,
            aleatoric,
            epistemic,
        }
    }
}

/// Uncertainty score used to order examples in a retention curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyMetric {
    Entropy,
    Aleatoric,
    Epistemic,
}

impl UncertaintyMetric {
    pub const ALL: [UncertaintyMetric; 3] = [Self::Entropy, Self::Aleatoric, Self::Epistemic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Entropy => "entropy",
            Self::Aleatoric => "aleatoric",
            Self::Epistemic => "epistemic",
        }
    }

    pub fn score(&self, rec: &UncertaintyRecord) -> f64 {
        match self {
            Self::Entropy => rec.entropy_norm,
            Self::Aleatoric => rec.aleatoric_trace,
            Self::Epistemic => rec.epistemic_trace,
        }
    }
}

/// Default retained fractions 0.50, 0.55, …, 1.00.
pub fn default_fractions() -> Vec<f64> {
    (0..=10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Accuracy on the examples kept after discarding the ⌈(1 − f)·N⌉ most
/// uncertain ones, for each retained fraction `f`.
///
/// Among equal scores the example with the higher index is discarded first,
/// so constant scores keep a prefix of the input.
pub fn retention_curve(scores: &[f64], correct: &[bool], fractions: &[f64]) -> Result<Vec<(f64, f64)>> {
    if scores.is_empty() || fractions.is_empty() {
        return Err(Error::invalid("retention curve needs scores and fractions"));
    }
    if scores.len() != correct.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} correctness flags",
            scores.len(),
            correct.len()
        )));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::invalid(format!("retained fraction {f} outside (0, 1]")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN uncertainty score"));
    }
    let n = scores.len();
    // most certain first; equal scores keep index order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut prefix_correct = vec![0usize; n + 1];
    for (i, &idx) in order.iter().enumerate() {
        prefix_correct[i + 1] = prefix_correct[i] + usize::from(correct[idx]);
    }
    Ok(fractions
        .iter()
        .map(|&f| {
            // guard ceil against 0.30000000000000004-style residue
            let discard = (((1.0 - f) * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let keep = n - discard.min(n);
            let acc = if keep == 0 {
                f64::NAN
            } else {
                prefix_correct[keep] as f64 / keep as f64
            };
            (f, acc)
        })
        .collect())
}
