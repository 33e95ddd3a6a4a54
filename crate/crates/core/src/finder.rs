//! Candidate distinguishing elements.
//!
//! Draws `m = ceil(16/eps)` samples and pairs the `j`-th with a far-ness
//! level `beta_j = j*eps/8` and a heaviness level
//! `alpha_j = 1 / (4 j log(16/eps))`. With probability at least 1/5 some
//! candidate is `alpha`-heavy and has weight `a_x >= beta`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::LogBase;
use crate::dist::{Distribution, RankOrder};
use crate::error::{Error, Result};
use crate::oracle::CondAccess;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateTuple {
    pub element: usize,
    pub beta: f64,
    pub alpha: f64,
}

/// Elements by descending probability, ties by ascending id.
pub type HeavinessOrder = RankOrder;

/// Number of candidates, `ceil(16/eps)`. The small slack keeps values
/// like `16/0.5` from rounding up past the integer.
pub fn candidate_count(eps: f64) -> usize {
    (16.0 / eps - 1e-9).ceil() as usize
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 2.0) {
        return Err(Error::InvalidParameter { name: "eps", value: eps });
    }
    Ok(())
}

/// The `(beta_j, alpha_j)` schedule for `j = 1..=m`.
pub fn schedule(eps: f64, log_base: LogBase) -> Result<Vec<(f64, f64)>> {
    check_eps(eps)?;
    let log_term = log_base.log(16.0 / eps);
    Ok((1..=candidate_count(eps))
        .map(|j| {
            let j = j as f64;
            (j * eps / 8.0, 1.0 / (4.0 * j * log_term))
        })
        .collect())
}

/// Builds the candidate list from an arbitrary element source.
pub fn find_element_with<F>(eps: f64, log_base: LogBase, mut draw: F) -> Result<Vec<CandidateTuple>>
where
    F: FnMut() -> usize,
{
    Ok(schedule(eps, log_base)?
        .into_iter()
        .map(|(beta, alpha)| CandidateTuple { element: draw(), beta, alpha })
        .collect())
}

/// Candidates drawn from full-domain queries; costs exactly `ceil(16/eps)`.
pub fn find_element<A, R>(oracle: &A, eps: f64, log_base: LogBase, rng: &mut R) -> Result<Vec<CandidateTuple>>
where
    A: CondAccess,
    R: Rng + ?Sized,
{
    find_element_with(eps, log_base, || oracle.sample(rng))
}

/// Tail sums along the heaviness order, for heaviness lookups.
#[derive(Debug, Clone)]
pub struct HeavinessProfile {
    order: HeavinessOrder,
    /// `tail[r]` is the mass of ranks `r..k`.
    tail: Vec<f64>,
}

impl HeavinessProfile {
    pub fn new(p: &Distribution) -> Self {
        let order = RankOrder::descending(p.probs());
        let k = p.k();
        let mut tail = vec![0.0; k + 1];
        for r in (0..k).rev() {
            tail[r] = tail[r + 1] + p.prob(order.id_at(r));
        }
        Self { order, tail }
    }

    pub fn order(&self) -> &HeavinessOrder {
        &self.order
    }

    /// Mass of the element and everything ranked after it.
    pub fn tail_of(&self, id: usize) -> f64 {
        self.tail[self.order.rank_of(id)]
    }

    pub fn is_heavy(&self, id: usize, alpha: f64) -> bool {
        // A hair of slack so exact ties such as 1.0 >= 1.0 survive rounding.
        self.tail_of(id) >= alpha - 1e-12
    }
}

/// True iff the candidate is `alpha`-heavy and its weight reaches `beta`.
pub fn tuple_quality(profile: &HeavinessProfile, tuple: &CandidateTuple, weights: &[f64]) -> bool {
    profile.is_heavy(tuple.element, tuple.alpha) && weights[tuple.element - 1] >= tuple.beta
}
