//! Simulated conditional-sampling oracles.
//!
//! An oracle hides a [`Distribution`] and answers "draw one element of `S`
//! with probability `p(i)/p(S)`" queries, counting every draw. The testers
//! only ever touch the hidden vector through the query types here; batch
//! helpers ([`BinaryQuery::count`], [`BinaryQuery::poissonized`]) are exact
//! in distribution and charge exactly one query per simulated draw.

use std::cell::Cell;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution as _, Poisson, StandardNormal};

use crate::dist::{DirectSampler, Distribution, RankOrder};
use crate::error::{Error, Result};

/// Query and sample counts. Closeness parameters push batch means past
/// `u64`, so counts are 128-bit.
pub type Count = u128;

/// Draws `Poisson(mean)`. Beyond the exact sampler's range a rounded normal
/// approximation is used; its relative error there is far below `1e-9`.
pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Count {
    if mean.is_nan() || mean <= 0.0 {
        return 0;
    }
    if mean < 1e18 {
        let d = Poisson::new(mean).expect("positive finite mean");
        return d.sample(rng) as Count;
    }
    let z: f64 = rng.sample(StandardNormal);
    (mean + mean.sqrt() * z).round().max(0.0) as Count
}

/// Draws `Binomial(n, p)`, with a normal approximation past `u64::MAX` trials.
pub fn binomial<R: Rng + ?Sized>(n: Count, p: f64, rng: &mut R) -> Count {
    let p = p.clamp(0.0, 1.0);
    if n == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    if let Ok(n64) = u64::try_from(n) {
        let d = Binomial::new(n64, p).expect("valid binomial");
        return d.sample(rng) as Count;
    }
    let nf = n as f64;
    let z: f64 = rng.sample(StandardNormal);
    let x = (nf * p + (nf * p * (1.0 - p)).sqrt() * z).round().clamp(0.0, nf);
    x as Count
}

/// A subset of the domain named in a query.
#[derive(Debug, Clone)]
pub enum Region<'a> {
    /// Explicit element ids.
    Ids(&'a [usize]),
    /// A contiguous block of ranks in the oracle's installed [`RankOrder`].
    Ranks(Range<usize>),
}

impl Region<'_> {
    pub fn size(&self) -> usize {
        match self {
            Region::Ids(ids) => ids.len(),
            Region::Ranks(r) => r.len(),
        }
    }
}

#[derive(Debug)]
struct Ranked {
    order: Arc<RankOrder>,
    /// `tail[r]` is the mass of ranks `r..k`; `tail[k] = 0`.
    tail: Vec<f64>,
}

#[derive(Debug)]
struct Prepared {
    dist: Distribution,
    sampler: DirectSampler,
    ranked: Option<Ranked>,
}

/// A hidden distribution with precomputed lookup tables, shared by every
/// oracle built over it.
#[derive(Debug, Clone)]
pub struct HiddenDistribution(Arc<Prepared>);

impl HiddenDistribution {
    pub fn new(dist: Distribution) -> Self {
        let sampler = dist.sampler();
        Self(Arc::new(Prepared { dist, sampler, ranked: None }))
    }

    /// Installs a rank order so that [`Region::Ranks`] queries are O(log k).
    pub fn with_ranking(dist: Distribution, order: Arc<RankOrder>) -> Result<Self> {
        if order.len() != dist.k() {
            return Err(Error::DomainMismatch(dist.k(), order.len()));
        }
        let k = dist.k();
        let mut tail = vec![0.0; k + 1];
        for r in (0..k).rev() {
            tail[r] = tail[r + 1] + dist.prob(order.id_at(r));
        }
        let sampler = dist.sampler();
        Ok(Self(Arc::new(Prepared { dist, sampler, ranked: Some(Ranked { order, tail }) })))
    }

    pub fn dist(&self) -> &Distribution {
        &self.0.dist
    }

    pub fn k(&self) -> usize {
        self.0.dist.k()
    }

    pub fn ranking(&self) -> Option<&Arc<RankOrder>> {
        self.0.ranked.as_ref().map(|r| &r.order)
    }
}

/// Query-counted conditional access to one hidden distribution.
///
/// Counters use interior mutability so several prepared queries can be live
/// at once; the oracle is `Send` but deliberately not `Sync`.
#[derive(Debug)]
pub struct CondOracle {
    hidden: HiddenDistribution,
    queries: Cell<Count>,
    zero_mass: Cell<bool>,
}

impl CondOracle {
    pub fn new(hidden: HiddenDistribution) -> Self {
        Self { hidden, queries: Cell::new(0), zero_mass: Cell::new(false) }
    }

    pub fn from_distribution(dist: Distribution) -> Self {
        Self::new(HiddenDistribution::new(dist))
    }

    pub fn k(&self) -> usize {
        self.hidden.k()
    }

    pub fn queries(&self) -> Count {
        self.queries.get()
    }

    /// True once any query was posed on a set of zero mass.
    pub fn zero_mass_seen(&self) -> bool {
        self.zero_mass.get()
    }

    /// The hidden distribution. For harness bookkeeping and reference
    /// checks only; testers must not look.
    pub fn hidden(&self) -> &HiddenDistribution {
        &self.hidden
    }

    pub(crate) fn charge(&self, n: Count) {
        self.queries.set(self.queries.get() + n);
    }

    fn flag_zero_mass(&self) {
        self.zero_mass.set(true);
    }

    fn prob(&self, id: usize) -> f64 {
        self.hidden.0.dist.prob(id)
    }

    fn ranked(&self) -> Result<&Ranked> {
        self.hidden
            .0
            .ranked
            .as_ref()
            .ok_or_else(|| Error::Config("rank queries need an installed rank order".into()))
    }

    fn validate(&self, region: &Region<'_>) -> Result<()> {
        match region {
            Region::Ids(ids) => {
                if ids.is_empty() {
                    return Err(Error::EmptyQuerySet);
                }
                for &id in ids.iter() {
                    self.hidden.0.dist.check_id(id)?;
                }
            }
            Region::Ranks(r) => {
                if r.is_empty() {
                    return Err(Error::EmptyQuerySet);
                }
                if r.end > self.k() {
                    return Err(Error::ElementOutOfRange { id: r.end, k: self.k() });
                }
                self.ranked()?;
            }
        }
        Ok(())
    }

    /// Mass of a validated region.
    fn mass(&self, region: &Region<'_>) -> f64 {
        match region {
            Region::Ids(ids) => ids.iter().map(|&i| self.prob(i)).sum(),
            Region::Ranks(r) => {
                let tail = &self.ranked().expect("validated").tail;
                (tail[r.start] - tail[r.end]).max(0.0)
            }
        }
    }

    fn sample_full<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.charge(1);
        self.hidden.0.sampler.sample(rng)
    }

    fn sample_region<R: Rng + ?Sized>(&self, region: &Region<'_>, rng: &mut R) -> usize {
        self.charge(1);
        match region {
            Region::Ids(ids) => {
                if ids.len() == 1 {
                    if self.prob(ids[0]) <= 0.0 {
                        self.flag_zero_mass();
                    }
                    return ids[0];
                }
                if ids.len() == 2 {
                    let (a, b) = (self.prob(ids[0]), self.prob(ids[1]));
                    let theta = if a + b > 0.0 {
                        a / (a + b)
                    } else {
                        self.flag_zero_mass();
                        0.5
                    };
                    return if rng.random::<f64>() < theta { ids[0] } else { ids[1] };
                }
                let weights: Vec<f64> = ids.iter().map(|&i| self.prob(i)).collect();
                if weights.iter().sum::<f64>() <= 0.0 {
                    self.flag_zero_mass();
                    return ids[rng.random_range(0..ids.len())];
                }
                ids[DirectSampler::new(&weights).sample(rng) - 1]
            }
            Region::Ranks(r) => {
                let ranked = self.ranked().expect("validated");
                let (hi, lo) = (ranked.tail[r.start], ranked.tail[r.end]);
                if hi - lo <= 0.0 {
                    self.flag_zero_mass();
                    return ranked.order.id_at(rng.random_range(r.clone()));
                }
                // tail is nonincreasing; find the last rank whose tail exceeds u.
                let u = lo + rng.random::<f64>() * (hi - lo);
                let slice = &ranked.tail[r.start..r.end];
                let pos = slice.partition_point(|&t| t > u).max(1) - 1;
                let mut rank = r.start + pos;
                // Skip zero-mass ranks that share a tail value with their successor.
                while rank > r.start && self.prob(ranked.order.id_at(rank)) <= 0.0 {
                    rank -= 1;
                }
                ranked.order.id_at(rank)
            }
        }
    }

    fn theta(&self, a: &Region<'_>, b: &Region<'_>) -> f64 {
        let (ma, mb) = (self.mass(a), self.mass(b));
        if ma + mb > 0.0 {
            ma / (ma + mb)
        } else {
            self.flag_zero_mass();
            a.size() as f64 / (a.size() + b.size()) as f64
        }
    }
}

/// Equal mixture `(p + q) / 2`: each draw flips a fair coin and queries the
/// chosen side, so exactly one underlying counter moves per draw.
#[derive(Debug)]
pub struct MixtureOracle {
    left: CondOracle,
    right: CondOracle,
}

impl MixtureOracle {
    pub fn new(left: CondOracle, right: CondOracle) -> Result<Self> {
        if left.k() != right.k() {
            return Err(Error::DomainMismatch(left.k(), right.k()));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &CondOracle {
        &self.left
    }

    pub fn right(&self) -> &CondOracle {
        &self.right
    }
}

/// Common query surface of single and mixture oracles.
pub trait CondAccess {
    fn k(&self) -> usize;

    /// Number of underlying oracles (1, or 2 for a mixture).
    fn side_count(&self) -> usize;

    fn side(&self, idx: usize) -> &CondOracle;

    fn queries(&self) -> Count {
        (0..self.side_count()).map(|i| self.side(i).queries()).sum()
    }

    fn pick_side<R: Rng + ?Sized>(&self, rng: &mut R) -> &CondOracle {
        if self.side_count() == 1 || rng.random::<bool>() {
            self.side(0)
        } else {
            self.side(1)
        }
    }

    /// One draw from the whole domain.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.pick_side(rng).sample_full(rng)
    }

    /// One draw from the conditional distribution on `set`.
    fn conditional_sample<R: Rng + ?Sized>(&self, set: &[usize], rng: &mut R) -> Result<usize> {
        self.sample_in(Region::Ids(set), rng)
    }

    /// One draw conditioned on a region; returns an element id.
    fn sample_in<R: Rng + ?Sized>(&self, region: Region<'_>, rng: &mut R) -> Result<usize> {
        self.side(0).validate(&region)?;
        Ok(self.pick_side(rng).sample_region(&region, rng))
    }

    /// Prepares a two-outcome query on `a ∪ b`, success meaning "landed in `a`".
    fn binary(&self, a: Region<'_>, b: Region<'_>) -> Result<BinaryQuery<'_>> {
        let first = self.side(0);
        first.validate(&a)?;
        first.validate(&b)?;
        let sides: Vec<_> = (0..self.side_count())
            .map(|i| {
                let o = self.side(i);
                (o, o.theta(&a, &b))
            })
            .collect();
        Ok(BinaryQuery { sides })
    }

    /// Draws `Poisson(mean)` full-domain samples and reports how many fell in
    /// each rank band `bounds[b]..bounds[b+1]`. Bands must tile `0..k`.
    fn poissonized_bands<R: Rng + ?Sized>(&self, bounds: &[usize], mean: f64, rng: &mut R) -> Result<Vec<Count>> {
        self.side(0).ranked()?;
        if bounds.first() != Some(&0) || bounds.last() != Some(&self.k()) || bounds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("rank bands must tile the domain".into()));
        }
        let share = mean / self.side_count() as f64;
        let mut counts = vec![0; bounds.len() - 1];
        for s in 0..self.side_count() {
            let oracle = self.side(s);
            let tail = &oracle.ranked()?.tail;
            for (b, c) in counts.iter_mut().enumerate() {
                let mass = (tail[bounds[b]] - tail[bounds[b + 1]]).max(0.0);
                let n = poisson(share * mass, rng);
                oracle.charge(n);
                *c += n;
            }
        }
        Ok(counts)
    }

    /// Prepares repeated draws from an explicit set that supports removal.
    fn set_query(&self, members: Vec<usize>) -> Result<SetQuery<'_>> {
        for &id in &members {
            self.side(0).hidden.0.dist.check_id(id)?;
        }
        let sides = (0..self.side_count())
            .map(|i| {
                let oracle = self.side(i);
                let weights: Vec<f64> = members.iter().map(|&j| oracle.prob(j)).collect();
                let positive = weights.iter().filter(|&&w| w > 0.0).count();
                SideTree { oracle, tree: Fenwick::new(&weights), weights, positive }
            })
            .collect();
        let n = members.len();
        Ok(SetQuery { sides, members, live: vec![true; n], live_count: n })
    }
}

impl CondAccess for CondOracle {
    fn k(&self) -> usize {
        CondOracle::k(self)
    }
    fn side_count(&self) -> usize {
        1
    }
    fn side(&self, _idx: usize) -> &CondOracle {
        self
    }
}

impl CondAccess for MixtureOracle {
    fn k(&self) -> usize {
        self.left.k()
    }
    fn side_count(&self) -> usize {
        2
    }
    fn side(&self, idx: usize) -> &CondOracle {
        if idx == 0 {
            &self.left
        } else {
            &self.right
        }
    }
}

/// A two-outcome query with its success probability fixed per side.
#[derive(Debug, Clone)]
pub struct BinaryQuery<'a> {
    sides: Vec<(&'a CondOracle, f64)>,
}

impl BinaryQuery<'_> {
    /// Success probability of one draw, averaged over mixture sides.
    pub fn success_probability(&self) -> f64 {
        self.sides.iter().map(|s| s.1).sum::<f64>() / self.sides.len() as f64
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        let (oracle, theta) = self.pick(rng);
        oracle.charge(1);
        rng.random::<f64>() < theta
    }

    /// Number of successes in `n` draws.
    pub fn count<R: Rng + ?Sized>(&self, n: Count, rng: &mut R) -> Count {
        match self.sides.as_slice() {
            [(o, theta)] => {
                o.charge(n);
                binomial(n, *theta, rng)
            }
            [(a, ta), (b, tb)] => {
                let na = binomial(n, 0.5, rng);
                a.charge(na);
                b.charge(n - na);
                binomial(na, *ta, rng) + binomial(n - na, *tb, rng)
            }
            _ => unreachable!("one or two sides"),
        }
    }

    /// Draws `Poisson(mean)` samples; returns `(successes, total)`.
    pub fn poissonized<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> (Count, Count) {
        let share = mean / self.sides.len() as f64;
        let mut hits = 0;
        let mut total = 0;
        for &(o, theta) in &self.sides {
            let s = poisson(share * theta, rng);
            let f = poisson(share * (1.0 - theta), rng);
            o.charge(s + f);
            hits += s;
            total += s + f;
        }
        (hits, total)
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> (&CondOracle, f64) {
        let idx = if self.sides.len() == 1 { 0 } else { rng.random_range(0..2) };
        self.sides[idx]
    }
}

#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        tree[1..].copy_from_slice(weights);
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        Self { tree }
    }

    fn add(&mut self, idx: usize, delta: f64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut i = self.tree.len() - 1;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    /// Smallest index whose prefix sum exceeds `u`.
    fn find(&self, mut u: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                pos = next;
                u -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n.saturating_sub(1))
    }
}

#[derive(Debug)]
struct SideTree<'a> {
    oracle: &'a CondOracle,
    weights: Vec<f64>,
    tree: Fenwick,
    /// Live members with positive weight; zero means a zero-mass query.
    positive: usize,
}

/// Repeated draws from an explicit set, with removal.
#[derive(Debug)]
pub struct SetQuery<'a> {
    sides: Vec<SideTree<'a>>,
    members: Vec<usize>,
    live: Vec<bool>,
    live_count: usize,
}

impl SetQuery<'_> {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn live_len(&self) -> usize {
        self.live_count
    }

    pub fn is_empty(&self) -> bool {
        self.live_count == 0
    }

    pub fn is_live(&self, idx: usize) -> bool {
        self.live[idx]
    }

    pub fn live_members(&self) -> Vec<usize> {
        self.members.iter().zip(&self.live).filter(|(_, &l)| l).map(|(&m, _)| m).collect()
    }

    pub fn remove(&mut self, idx: usize) {
        if !self.live[idx] {
            return;
        }
        self.live[idx] = false;
        self.live_count -= 1;
        for side in &mut self.sides {
            let w = side.weights[idx];
            if w > 0.0 {
                side.tree.add(idx, -w);
                side.positive -= 1;
            }
        }
    }

    /// One draw from the live set; returns the member index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.live_count == 0 {
            return Err(Error::EmptyQuerySet);
        }
        let side = self.pick(rng);
        side.oracle.charge(1);
        Ok(self.draw_member(side, rng))
    }

    /// One draw from the live set together with `extra` (not a member);
    /// returns an element id.
    pub fn sample_with<R: Rng + ?Sized>(&self, extra: usize, rng: &mut R) -> usize {
        let side = self.pick(rng);
        side.oracle.charge(1);
        let m_extra = side.oracle.prob(extra);
        let m_set = self.live_mass_fast(side);
        if m_extra + m_set <= 0.0 {
            side.oracle.flag_zero_mass();
            let pick = rng.random_range(0..=self.live_count);
            if pick == self.live_count {
                return extra;
            }
            return self.members[self.uniform_live(rng)];
        }
        if rng.random::<f64>() * (m_extra + m_set) < m_extra {
            extra
        } else {
            self.members[self.draw_member(side, rng)]
        }
    }

    /// A binary query `{extra}` against the live set.
    pub fn versus(&self, extra: usize) -> BinaryQuery<'_> {
        let sides = self
            .sides
            .iter()
            .map(|side| {
                let m_extra = side.oracle.prob(extra);
                let m_set: f64 = side
                    .weights
                    .iter()
                    .zip(&self.live)
                    .filter(|(_, &l)| l)
                    .map(|(w, _)| w)
                    .sum();
                let theta = if m_extra + m_set > 0.0 {
                    m_extra / (m_extra + m_set)
                } else {
                    side.oracle.flag_zero_mass();
                    1.0 / (1 + self.live_count) as f64
                };
                (side.oracle, theta)
            })
            .collect();
        BinaryQuery { sides }
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &SideTree<'_> {
        if self.sides.len() == 1 || rng.random::<bool>() {
            &self.sides[0]
        } else {
            &self.sides[1]
        }
    }

    fn live_mass_fast(&self, side: &SideTree<'_>) -> f64 {
        if side.positive == 0 {
            0.0
        } else {
            side.tree.total().max(0.0)
        }
    }

    fn uniform_live<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        loop {
            let idx = rng.random_range(0..self.members.len());
            if self.live[idx] {
                return idx;
            }
        }
    }

    fn draw_member<R: Rng + ?Sized>(&self, side: &SideTree<'_>, rng: &mut R) -> usize {
        if side.positive == 0 {
            side.oracle.flag_zero_mass();
            return self.uniform_live(rng);
        }
        let total = self.live_mass_fast(side);
        for _ in 0..8 {
            let idx = side.tree.find(rng.random::<f64>() * total);
            if self.live[idx] && side.weights[idx] > 0.0 {
                return idx;
            }
        }
        // Accumulated rounding in the tree; fall back to an exact scan.
        let total: f64 = (0..self.members.len())
            .filter(|&i| self.live[i])
            .map(|i| side.weights[i])
            .sum();
        let mut u = rng.random::<f64>() * total;
        let mut last = None;
        for i in (0..self.members.len()).filter(|&i| self.live[i] && side.weights[i] > 0.0) {
            last = Some(i);
            if u < side.weights[i] {
                return i;
            }
            u -= side.weights[i];
        }
        last.expect("positive live member")
    }
}
