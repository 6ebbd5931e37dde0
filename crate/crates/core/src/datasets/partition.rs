use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};

const PAIRING_ATTEMPTS: usize = 1000;

/// Disjoint per-client index lists into a [`LabeledDataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn new(assignments: Vec<Vec<usize>>) -> Result<Self> {
        if assignments.iter().any(Vec::is_empty) {
            return Err(Error::Validation("partition has an empty client".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for idx in assignments.iter().flatten() {
            if !seen.insert(*idx) {
                return Err(Error::Validation(format!("index {idx} assigned twice")));
            }
        }
        Ok(Self { assignments })
    }

    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Per-client class histograms.
    pub fn class_histograms(&self, ds: &LabeledDataset) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|idx| {
                let mut h = vec![0; ds.classes()];
                for &i in idx {
                    h[ds.label(i)] += 1;
                }
                h
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionKind {
    Iid,
    TwoClass,
    Dirichlet(f64),
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionKind::Iid => f.write_str("iid"),
            PartitionKind::TwoClass => f.write_str("two_class"),
            PartitionKind::Dirichlet(a) => write!(f, "dirichlet({a})"),
        }
    }
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "iid" => return Ok(Self::Iid),
            "two_class" | "2class" | "2-class" => return Ok(Self::TwoClass),
            _ => {}
        }
        let alpha = s
            .strip_prefix("dirichlet(")
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| {
                Error::invalid(format!("unknown partition `{s}` (expected iid|two_class|dirichlet(alpha))"))
            })?;
        let alpha: f64 = alpha
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad dirichlet alpha `{alpha}`")))?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("dirichlet alpha must be > 0, got {alpha}")));
        }
        Ok(Self::Dirichlet(alpha))
    }
}

pub fn partition(ds: &LabeledDataset, k: usize, kind: PartitionKind, seed: u64) -> Result<PartitionPlan> {
    match kind {
        PartitionKind::Iid => partition_iid(ds, k, seed),
        PartitionKind::TwoClass => partition_2class(ds, k, seed),
        PartitionKind::Dirichlet(alpha) => partition_dirichlet(ds, k, alpha, seed),
    }
}

/// Shuffles each class and deals it round-robin, continuing the dealer
/// position across classes so client sizes differ by at most one.
pub fn partition_iid(ds: &LabeledDataset, k: usize, seed: u64) -> Result<PartitionPlan> {
    if k == 0 || ds.len() < k {
        return Err(Error::invalid(format!("cannot split {} examples over {k} clients", ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![Vec::new(); k];
    let mut dealer = 0;
    for mut idx in ds.indices_by_class() {
        idx.shuffle(&mut rng);
        for i in idx {
            assignments[dealer].push(i);
            dealer = (dealer + 1) % k;
        }
    }
    PartitionPlan::new(assignments)
}

/// Quantity-based label imbalance: 2K single-class shards, two shards of
/// different classes per client.
pub fn partition_2class(ds: &LabeledDataset, k: usize, seed: u64) -> Result<PartitionPlan> {
    let c = ds.classes();
    if c < 2 || k == 0 {
        return Err(Error::invalid("two-class partition needs C >= 2 and K >= 1"));
    }
    let shards_total = 2 * k;
    if !shards_total.is_multiple_of(c) {
        return Err(Error::invalid(format!(
            "two-class partition needs 2K = {shards_total} divisible by C = {c}"
        )));
    }
    let per_class = shards_total / c;
    let by_class = ds.indices_by_class();
    for (class, idx) in by_class.iter().enumerate() {
        if idx.is_empty() || idx.len() % per_class != 0 {
            return Err(Error::invalid(format!(
                "class {class} has {} examples; each class needs a positive multiple of {per_class} \
                 (2K/C shards per class)",
                idx.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shards: Vec<(usize, Vec<usize>)> = Vec::with_capacity(shards_total);
    for (class, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        let size = idx.len() / per_class;
        shards.extend(idx.chunks(size).map(|s| (class, s.to_vec())));
    }

    let mut order: Vec<usize> = (0..shards_total).collect();
    for _ in 0..PAIRING_ATTEMPTS {
        order.shuffle(&mut rng);
        if order.chunks(2).all(|p| shards[p[0]].0 != shards[p[1]].0) {
            let assignments = order
                .chunks(2)
                .map(|p| {
                    let mut idx = shards[p[0]].1.clone();
                    idx.extend_from_slice(&shards[p[1]].1);
                    idx
                })
                .collect();
            return PartitionPlan::new(assignments);
        }
    }
    Err(Error::PartitionInfeasible(format!(
        "no pairing of {shards_total} shards into different-class pairs after {PAIRING_ATTEMPTS} attempts"
    )))
}

/// Distribution-based label imbalance: each class is split across clients
/// by proportions drawn from Dirichlet(alpha · 1_K).
pub fn partition_dirichlet(ds: &LabeledDataset, k: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("dirichlet alpha must be > 0, got {alpha}")));
    }
    if k == 0 || ds.len() < k {
        return Err(Error::invalid(format!("cannot split {} examples over {k} clients", ds.len())));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![Vec::new(); k];
    for mut idx in ds.indices_by_class() {
        idx.shuffle(&mut rng);
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let n = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (client, d) in draws.iter().enumerate() {
            cum += d;
            let end = if client + 1 == k || total <= 0.0 {
                n
            } else {
                ((cum / total) * n as f64).round().min(n as f64) as usize
            };
            let end = end.max(start);
            assignments[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }

    let mut repaired = 0;
    while let Some(empty) = assignments.iter().position(Vec::is_empty) {
        let largest = (0..k).max_by_key(|&c| (assignments[c].len(), std::cmp::Reverse(c))).unwrap_or(0);
        let moved = assignments[largest].pop().expect("largest client is nonempty");
        assignments[empty].push(moved);
        repaired += 1;
    }
    if repaired > 0 {
        log::info!("dirichlet partition: moved {repaired} example(s) into empty clients");
    }
    PartitionPlan::new(assignments)
}
