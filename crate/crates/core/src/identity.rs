//! Identity testing against a fully known distribution.
//!
//! For each candidate `x` the tester looks at the tail `G_x` (everything
//! ranked at or after `x` in the known distribution), packs it into groups of
//! mass between `p(x)` and `2p(x)`, and runs three sub-tests: `x` against a
//! random group, the tail mass against the rest, and a near-uniform test over
//! the group-induced distributions.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::config::TesterConfig;
use crate::dist::{Distribution, Partition, RankOrder};
use crate::equality::{t_statistic, test_equal, EqualityParams, MajorityVote};
use crate::error::{Error, Result};
use crate::finder::{find_element_with, CandidateTuple};
use crate::oracle::{CondAccess, CondOracle, Count, HiddenDistribution, Region};
use crate::Verdict;

/// Relative slack for "mass reached p(x)" comparisons.
const MASS_TOL: f64 = 1e-12;

/// Tail groups for one candidate, as rank blocks of the known order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankGroups {
    /// Group `g` covers ranks `bounds[g]..bounds[g+1]`; `bounds[0]` is `x`'s rank.
    pub bounds: Vec<usize>,
    /// The last group is a residual lighter than `p(x)`.
    pub undersized: bool,
}

impl RankGroups {
    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Groups that satisfy `p(x) <= p(H) <= 2p(x)`.
    pub fn usable(&self) -> usize {
        self.len() - self.undersized as usize
    }

    pub fn group_of_rank(&self, rank: usize) -> usize {
        self.bounds.partition_point(|&b| b <= rank) - 1
    }
}

/// Greedy packing of ranks `start..` given per-rank masses.
pub fn group_ranks<F>(start: usize, k: usize, mass_at: F) -> Result<RankGroups>
where
    F: Fn(usize) -> f64,
{
    if start >= k {
        return Err(Error::EmptyGroup);
    }
    let px = mass_at(start);
    if px <= 0.0 {
        return Err(Error::EmptySupport);
    }
    let mut bounds = vec![start];
    let mut masses = Vec::new();
    let mut acc = 0.0;
    for r in start..k {
        acc += mass_at(r);
        if acc >= px * (1.0 - MASS_TOL) {
            bounds.push(r + 1);
            masses.push(acc);
            acc = 0.0;
        }
    }
    let mut undersized = false;
    let closed_end = *bounds.last().expect("nonempty");
    if closed_end < k {
        let last = *masses.last().expect("the first rank always closes a group");
        if last + acc <= 2.0 * px * (1.0 + MASS_TOL) {
            *bounds.last_mut().expect("nonempty") = k;
        } else {
            bounds.push(k);
            undersized = true;
        }
    }
    Ok(RankGroups { bounds, undersized })
}

/// Element-level view of the tail grouping for candidate `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingH {
    pub x: usize,
    pub groups: Partition,
    pub undersized: bool,
}

impl GroupingH {
    /// The tail `G_x` in heaviness order.
    pub fn base(&self) -> Vec<usize> {
        self.groups.base()
    }
}

pub fn build_grouping(p: &Distribution, x: usize) -> Result<GroupingH> {
    p.check_id(x)?;
    let order = RankOrder::descending(p.probs());
    let rg = group_ranks(order.rank_of(x), p.k(), |r| p.prob(order.id_at(r)))?;
    let groups = rg
        .bounds
        .windows(2)
        .map(|w| order.order()[w[0]..w[1]].to_vec())
        .collect();
    Ok(GroupingH { x, groups: Partition::new(groups)?, undersized: rg.undersized })
}

/// The known reference distribution with its heaviness order, shared
/// across trials.
#[derive(Debug, Clone)]
pub struct KnownIdentity {
    hidden: HiddenDistribution,
    order: Arc<RankOrder>,
}

impl KnownIdentity {
    pub fn new(p: Distribution) -> Self {
        let order = Arc::new(RankOrder::descending(p.probs()));
        let hidden = HiddenDistribution::with_ranking(p, order.clone()).expect("matching sizes");
        Self { hidden, order }
    }

    pub fn p(&self) -> &Distribution {
        self.hidden.dist()
    }

    pub fn order(&self) -> &Arc<RankOrder> {
        &self.order
    }

    /// Prepares an unknown distribution for rank-block queries in this order.
    pub fn prepare_unknown(&self, q: Distribution) -> Result<HiddenDistribution> {
        if q.k() != self.p().k() {
            return Err(Error::DomainMismatch(self.p().k(), q.k()));
        }
        HiddenDistribution::with_ranking(q, self.order.clone())
    }

    fn mass_at_rank(&self, rank: usize) -> f64 {
        self.p().prob(self.order.id_at(rank))
    }
}

/// Result of one identity test run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub verdict: Verdict,
    /// Draws from the simulated known side.
    pub queries_p: Count,
    /// Draws from the unknown side.
    pub queries_q: Count,
}

/// Chi-squared bound of the tail-mass test.
pub fn mass_test_chi(tuple: &CandidateTuple) -> f64 {
    (tuple.alpha * tuple.beta / 5.0).powi(2)
}

/// Chi-squared bound of the element-versus-group test.
pub fn group_test_chi(tuple: &CandidateTuple) -> f64 {
    tuple.beta.powi(2) / 1800.0
}

/// Error budget of each per-candidate sub-test.
pub fn sub_test_delta(eps: f64, delta: f64) -> f64 {
    eps * delta / 48.0
}

/// Cells of a near-uniform test.
#[derive(Debug, Clone, Copy)]
pub enum CellSet<'a> {
    /// Cell `c` is element `c + 1`.
    Elements,
    /// Cell `c` is the rank block `bounds[c]..bounds[c+1]`.
    RankGroups(&'a [usize]),
}

impl CellSet<'_> {
    fn region<'s>(&self, cell: usize, scratch: &'s mut [usize; 1]) -> Region<'s> {
        match self {
            CellSet::Elements => {
                scratch[0] = cell + 1;
                Region::Ids(&scratch[..])
            }
            CellSet::RankGroups(b) => Region::Ranks(b[cell]..b[cell + 1]),
        }
    }
}

/// Near-uniform identity test over cells, with a reference cell `y` that
/// the caller believes has `p(y) >= q(y)`.
///
/// Candidates come from the unknown side `q`; each is compared with `y` by
/// an equality test at chi-squared bound `beta_j^2/144` and error
/// `6 delta / (pi^2 j^2)`.
#[allow(clippy::too_many_arguments)]
pub fn near_uniform_identity_test<A, B, R>(
    p: &A,
    q: &B,
    cells: CellSet<'_>,
    eps: f64,
    delta: f64,
    y: usize,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<Verdict>
where
    A: CondAccess,
    B: CondAccess,
    R: Rng + ?Sized,
{
    let mut draw_err = None;
    let tuples = find_element_with(eps, cfg.log_base, || match draw_cell(q, cells, rng) {
        Ok(c) => c,
        Err(e) => {
            draw_err = Some(e);
            0
        }
    })?;
    if let Some(e) = draw_err {
        return Err(e);
    }
    let (mut sy, mut sx) = ([0usize; 1], [0usize; 1]);
    for (j, t) in tuples.iter().enumerate() {
        let j = (j + 1) as f64;
        if t.element == y {
            continue;
        }
        let chi = t.beta.powi(2) / 144.0;
        let dj = 6.0 * delta / (PI * PI * j * j);
        let params = EqualityParams::new(chi, dj, cfg.c_te)?.early_stop(cfg.early_stop);
        let src_p = p.binary(cells.region(t.element, &mut sx), cells.region(y, &mut sy))?;
        let src_q = q.binary(cells.region(t.element, &mut sx), cells.region(y, &mut sy))?;
        if test_equal(&src_p, &src_q, &params, rng)?.is_diff() {
            return Ok(Verdict::Diff);
        }
    }
    Ok(Verdict::Same)
}

/// One draw from `q` mapped to its cell index.
fn draw_cell<B: CondAccess, R: Rng + ?Sized>(q: &B, cells: CellSet<'_>, rng: &mut R) -> Result<usize> {
    match cells {
        CellSet::Elements => Ok(q.sample(rng) - 1),
        CellSet::RankGroups(bounds) => {
            let order = q
                .side(0)
                .hidden()
                .ranking()
                .ok_or_else(|| Error::Config("rank groups need an installed rank order".into()))?
                .clone();
            let id = q.sample_in(Region::Ranks(bounds[0]..*bounds.last().expect("nonempty")), rng)?;
            let rank = order.rank_of(id);
            Ok(bounds.partition_point(|&b| b <= rank) - 1)
        }
    }
}

/// Runs the identity tester against the unknown oracle `q`, which must have
/// been prepared with [`KnownIdentity::prepare_unknown`].
pub fn identity_test<R: Rng + ?Sized>(
    known: &KnownIdentity,
    q: &CondOracle,
    eps: f64,
    delta: f64,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<IdentityReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter { name: "delta", value: delta });
    }
    match q.hidden().ranking() {
        Some(o) if Arc::ptr_eq(o, &known.order) || **o == *known.order => {}
        _ => return Err(Error::Config("unknown oracle lacks the known heaviness order".into())),
    }
    let p = CondOracle::new(known.hidden.clone());
    let q_start = q.queries();
    let verdict = run_identity(known, &p, q, eps, delta, cfg, rng)?;
    Ok(IdentityReport { verdict, queries_p: p.queries(), queries_q: q.queries() - q_start })
}

fn run_identity<R: Rng + ?Sized>(
    known: &KnownIdentity,
    p: &CondOracle,
    q: &CondOracle,
    eps: f64,
    delta: f64,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<Verdict> {
    let k = known.p().k();
    let direct = known.p().sampler();
    let tuples = find_element_with(eps, cfg.log_base, || {
        if cfg.charge_known_find {
            p.sample(rng)
        } else {
            direct.sample(rng)
        }
    })?;
    let sub_delta = sub_test_delta(eps, delta);

    if cfg.share_mass_test_samples && shared_mass_tests(known, p, q, &tuples, sub_delta, cfg, rng)?.is_diff() {
        return Ok(Verdict::Diff);
    }

    for t in &tuples {
        let start = known.order.rank_of(t.element);
        let groups = group_ranks(start, k, |r| known.mass_at_rank(r))?;

        // x against a group drawn from the known induced distribution.
        let group = groups.group_of_rank(sample_rank(known, start..k, rng));
        let h = groups.bounds[group]..groups.bounds[group + 1];
        let rest = h.start.max(start + 1)..h.end;
        if !rest.is_empty() {
            let x = Region::Ranks(start..start + 1);
            let params = EqualityParams::new(group_test_chi(t), sub_delta, cfg.c_te)?.early_stop(cfg.early_stop);
            let sp = p.binary(x.clone(), Region::Ranks(rest.clone()))?;
            let sq = q.binary(x, Region::Ranks(rest))?;
            if test_equal(&sp, &sq, &params, rng)?.is_diff() {
                return Ok(Verdict::Diff);
            }
        }

        // Tail mass against the rest of the domain.
        if !cfg.share_mass_test_samples && start > 0 {
            let params = EqualityParams::new(mass_test_chi(t), sub_delta, cfg.c_te)?.early_stop(cfg.early_stop);
            let sp = p.binary(Region::Ranks(start..k), Region::Ranks(0..start))?;
            let sq = q.binary(Region::Ranks(start..k), Region::Ranks(0..start))?;
            if test_equal(&sp, &sq, &params, rng)?.is_diff() {
                return Ok(Verdict::Diff);
            }
        }

        // Near-uniform test over the full-size groups, anchored at x's group.
        let usable = groups.usable();
        if usable >= 2 {
            let cells = CellSet::RankGroups(&groups.bounds[..=usable]);
            if near_uniform_identity_test(p, q, cells, t.beta / 5.0, sub_delta, 0, cfg, rng)?.is_diff() {
                return Ok(Verdict::Diff);
            }
        }
    }
    Ok(Verdict::Same)
}

/// A free draw from the known distribution restricted to a rank block.
fn sample_rank<R: Rng + ?Sized>(known: &KnownIdentity, ranks: std::ops::Range<usize>, rng: &mut R) -> usize {
    // The known side is simulated without charge; reuse a throwaway oracle.
    let scratch = CondOracle::new(known.hidden.clone());
    let id = scratch.sample_in(Region::Ranks(ranks), rng).expect("validated block");
    known.order.rank_of(id)
}

/// Tail-mass tests for every candidate from one shared pool of samples.
///
/// Each repetition draws `Poisson(n)` samples from each side and counts how
/// many land at or after every candidate's rank. Each candidate's votes have
/// exactly the law of its own equality test.
fn shared_mass_tests<R: Rng + ?Sized>(
    known: &KnownIdentity,
    p: &CondOracle,
    q: &CondOracle,
    tuples: &[CandidateTuple],
    sub_delta: f64,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<Verdict> {
    let k = known.p().k();
    let mut active: Vec<(usize, EqualityParams)> = Vec::new();
    for t in tuples {
        let start = known.order.rank_of(t.element);
        if start == 0 {
            // The tail is the whole domain; both sides put all mass there.
            continue;
        }
        active.push((start, EqualityParams::new(mass_test_chi(t), sub_delta, cfg.c_te)?));
    }
    if active.is_empty() {
        return Ok(Verdict::Same);
    }
    let n = active.iter().map(|(_, e)| e.n).fold(0.0, f64::max);
    let reps = active[0].1.repetitions;

    let mut cuts: Vec<usize> = active.iter().map(|(s, _)| *s).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(&cuts);
    bounds.push(k);

    let mut votes: Vec<MajorityVote> = active.iter().map(|_| MajorityVote::new(reps)).collect();
    let mut decided = vec![false; active.len()];
    for _ in 0..reps {
        let cp = p.poissonized_bands(&bounds, n, rng)?;
        let cq = q.poissonized_bands(&bounds, n, rng)?;
        let (tp, tq): (Count, Count) = (cp.iter().sum(), cq.iter().sum());
        // Suffix sums: band b starts at bounds[b].
        let suffix = |c: &[Count]| {
            let mut s = vec![0; c.len() + 1];
            for b in (0..c.len()).rev() {
                s[b] = s[b + 1] + c[b];
            }
            s
        };
        let (sp, sq) = (suffix(&cp), suffix(&cq));
        for (idx, (start, params)) in active.iter().enumerate() {
            if decided[idx] {
                continue;
            }
            let band = bounds.partition_point(|&b| b < *start);
            let t = t_statistic(sp[band], sq[band], tp, tq)?;
            let threshold = n * params.chi_bound / 2.0;
            votes[idx].record(if t <= threshold { Verdict::Same } else { Verdict::Diff });
            if cfg.early_stop {
                match votes[idx].decided() {
                    Some(Verdict::Diff) => return Ok(Verdict::Diff),
                    Some(Verdict::Same) => decided[idx] = true,
                    None => {}
                }
            }
        }
        if decided.iter().all(|&d| d) {
            return Ok(Verdict::Same);
        }
    }
    Ok(if votes.iter().any(|v| v.verdict().is_diff()) { Verdict::Diff } else { Verdict::Same })
}
