//! Exact finite distributions over `[k] = {1, ..., k}`.
//!
//! Element ids are 1-based throughout the crate; index `id - 1` addresses
//! the backing vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over `{1, ..., k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        for (i, &v) in probs.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidProbability { id: i + 1, value: v });
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::NotNormalized(total));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        for (i, &v) in weights.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidProbability { id: i + 1, value: v });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptySupport);
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyDistribution);
        }
        Ok(Self { probs: vec![1.0 / k as f64; k] })
    }

    /// The equal-weight mixture `(p + q) / 2`.
    pub fn mixture(p: &Distribution, q: &Distribution) -> Result<Self> {
        if p.k() != q.k() {
            return Err(Error::DomainMismatch(p.k(), q.k()));
        }
        let probs = p.probs.iter().zip(&q.probs).map(|(a, b)| 0.5 * (a + b)).collect();
        Self::new(probs)
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of element `id` (1-based).
    pub fn prob(&self, id: usize) -> f64 {
        self.probs[id - 1]
    }

    pub fn check_id(&self, id: usize) -> Result<()> {
        if id == 0 || id > self.k() {
            return Err(Error::ElementOutOfRange { id, k: self.k() });
        }
        Ok(())
    }

    /// Total mass `p(S)` of a set of element ids.
    pub fn mass(&self, ids: &[usize]) -> f64 {
        ids.iter().map(|&i| self.probs[i - 1]).sum()
    }

    /// Exact conditional distribution `p_S` as (id, probability) pairs.
    pub fn conditional(&self, ids: &[usize]) -> Result<Vec<(usize, f64)>> {
        let total = self.mass(ids);
        if total <= 0.0 {
            return Err(Error::EmptySupport);
        }
        Ok(ids.iter().map(|&i| (i, self.probs[i - 1] / total)).collect())
    }

    /// Draws directly from the distribution, outside any oracle.
    pub fn sampler(&self) -> DirectSampler {
        DirectSampler::new(&self.probs)
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Distribution::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.probs
    }
}

/// Inverse-CDF sampler over a fixed weight vector. Returns 1-based ids.
#[derive(Debug, Clone)]
pub struct DirectSampler {
    cumulative: Vec<f64>,
}

impl DirectSampler {
    pub fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        // Rounding can push `u` past the last boundary; also skip zero-width cells.
        let mut idx = idx.min(self.cumulative.len() - 1);
        while idx > 0 && self.cumulative[idx] == self.cumulative[idx - 1] {
            idx -= 1;
        }
        idx + 1
    }
}

/// Element ids sorted by descending weight, ties broken by ascending id.
///
/// Rank 0 is the heaviest element.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOrder {
    order: Vec<usize>,
    rank_of: Vec<usize>,
}

impl RankOrder {
    pub fn descending(weights: &[f64]) -> Self {
        let mut order: Vec<usize> = (1..=weights.len()).collect();
        order.sort_by(|&a, &b| weights[b - 1].total_cmp(&weights[a - 1]).then(a.cmp(&b)));
        let mut rank_of = vec![0; weights.len()];
        for (rank, &id) in order.iter().enumerate() {
            rank_of[id - 1] = rank;
        }
        Self { order, rank_of }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Ids by rank.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn id_at(&self, rank: usize) -> usize {
        self.order[rank]
    }

    pub fn rank_of(&self, id: usize) -> usize {
        self.rank_of[id - 1]
    }
}

/// Disjoint groups of element ids covering a base set.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for g in &groups {
            if g.is_empty() {
                return Err(Error::EmptyGroup);
            }
            for &id in g {
                if !seen.insert(id) {
                    return Err(Error::OverlappingPartition(id));
                }
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// The covered base set, in group order.
    pub fn base(&self) -> Vec<usize> {
        self.groups.iter().flatten().copied().collect()
    }
}

/// The induced distribution over partition cells: group `j` gets `p(S_j) / p(S)`.
pub fn induced_distribution(dist: &Distribution, partition: &Partition) -> Result<Distribution> {
    for &id in partition.groups.iter().flatten() {
        dist.check_id(id)?;
    }
    let masses: Vec<f64> = partition.groups.iter().map(|g| dist.mass(g)).collect();
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptySupport);
    }
    Distribution::from_weights(masses)
}
