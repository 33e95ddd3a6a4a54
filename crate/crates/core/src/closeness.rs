//! Closeness testing with two unknown conditional oracles.
//!
//! Candidates come from the mixture `r = (p + q)/2`. For each candidate `i`
//! a binary search over `log r_guess` looks for a rate comparable to
//! `r(i)/r(G_i)`; at every visited rate random sets are drawn, pruned of
//! elements much heavier than `i`, and used for pairwise and set-level
//! equality tests.

use rand::Rng;
use rand_distr::{Distribution as _, Geometric};
use serde::{Deserialize, Serialize};

use crate::config::TesterConfig;
use crate::equality::{test_equal, EqualityParams};
use crate::error::{Error, Result};
use crate::finder::{find_element, CandidateTuple};
use crate::oracle::{CondAccess, Count, MixtureOracle, Region};
use crate::Verdict;

/// `log2 log2 k` as a real number. Needs `k >= 4`.
pub fn loglog(k: usize) -> Result<f64> {
    if k < 4 {
        return Err(Error::InvalidParameter { name: "k", value: k as f64 });
    }
    Ok((k as f64).log2().log2())
}

/// Number of binary-search rounds, `ceil(log2 log2 k)`.
pub fn search_rounds(k: usize) -> Result<usize> {
    Ok((loglog(k)? - 1e-9).ceil().max(1.0) as usize)
}

/// Search bracket over `log r_guess`, natural log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessState {
    pub log_r_guess: f64,
    pub low: f64,
    pub high: f64,
    pub round: usize,
}

impl GuessState {
    pub fn new(k: usize) -> Self {
        let ln_k = (k as f64).ln();
        Self { log_r_guess: -0.5 * ln_k, low: -ln_k, high: 0.0, round: 0 }
    }

    pub fn r_guess(&self) -> f64 {
        self.log_r_guess.exp()
    }

    /// Moves the bracket after one comparator outcome.
    pub fn update(&mut self, heavy: bool) {
        if heavy {
            self.high = self.log_r_guess;
            self.log_r_guess = (self.log_r_guess + self.low) / 2.0;
        } else {
            self.low = self.log_r_guess;
            self.log_r_guess = (self.log_r_guess + self.high) / 2.0;
        }
        self.round += 1;
    }
}

/// Every count and threshold used for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessParams {
    pub k: usize,
    /// Continuous `log2 log2 k`.
    pub loglog: f64,
    pub rounds: usize,
    pub gamma: f64,
    /// Sets per assisted test.
    pub m: u64,
    pub beta_dd: f64,
    pub n1_assisted: u64,
    pub n1_search: u64,
    pub n2: u64,
    pub n3: u64,
    pub n4: u64,
    pub delta_assisted: f64,
    pub delta_prune_assisted: f64,
    pub delta_prune_search: f64,
    pub chi_pair: f64,
    pub chi_set: f64,
}

fn ceil_count(x: f64) -> u64 {
    if x.is_finite() {
        x.ceil().max(1.0) as u64
    } else {
        u64::MAX
    }
}

/// Pruning iterations for an error budget `delta_prime`.
fn prune_iterations(gamma: f64, alpha: f64, beta: f64, delta_prime: f64, mult: f64) -> u64 {
    let g = gamma / (alpha * beta);
    let l = (1.0 / delta_prime).ln();
    let inner = g * g.ln() + l * l.ln().max(0.0);
    ceil_count(mult * (g / delta_prime).ln() * inner)
}

impl ClosenessParams {
    pub fn new(k: usize, eps: f64, delta: f64, tuple: &CandidateTuple, cfg: &TesterConfig) -> Result<Self> {
        if !(eps > 0.0 && eps <= 2.0) {
            return Err(Error::InvalidParameter { name: "eps", value: eps });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter { name: "delta", value: delta });
        }
        let ll = loglog(k)?;
        let rounds = search_rounds(k)?;
        let (alpha, beta) = (tuple.alpha, tuple.beta);

        let gamma = cfg.gamma_scale * 1000.0 * (ll / (delta * eps)).ln();
        if gamma.is_nan() || gamma < 1.0 {
            return Err(Error::InvalidParameter { name: "gamma", value: gamma });
        }
        let m = ceil_count(cfg.set_count_scale * 4096.0 * gamma / (alpha * beta * beta));
        let beta_dd = alpha * beta / (128.0 * gamma * (128.0 * gamma / (beta * beta)).ln());
        let n4 = ceil_count(cfg.n4_mult * gamma / (alpha * beta));
        let delta_assisted = eps * delta / (32.0 * m as f64 * (n4 as f64 + 1.0) * ll);
        let delta_prune_assisted = delta / (40.0 * m as f64 * ll);
        let delta_prune_search = delta / (40.0 * ll);
        let n1_assisted = prune_iterations(gamma, alpha, beta, delta_prune_assisted, cfg.n1_mult);
        let n1_search = prune_iterations(gamma, alpha, beta, delta_prune_search, cfg.n1_mult);
        let n2 = ceil_count(cfg.n2_mult * (ll.ln() + (1.0 / (eps * delta)).ln()));
        let n3 = ceil_count(cfg.n3_mult * gamma * gamma * (ll / delta).ln());
        let chi_pair = beta_dd * beta_dd / 25.0;
        let log_set = (128.0 * gamma / (alpha * beta * beta)).ln();
        let chi_set = (alpha * beta).powi(3) / (2f64.powi(23) * gamma * gamma * log_set.powi(3));
        Ok(Self {
            k,
            loglog: ll,
            rounds,
            gamma,
            m,
            beta_dd,
            n1_assisted,
            n1_search,
            n2,
            n3,
            n4,
            delta_assisted,
            delta_prune_assisted,
            delta_prune_search,
            chi_pair,
            chi_set,
        })
    }
}

/// A random set of elements, never containing the distinguished element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub members: Vec<usize>,
    pub pruned: bool,
}

impl CandidateSet {
    /// Keeps each element of `1..=k` other than `exclude` independently
    /// with probability `rate`, using geometric skips.
    pub fn sample<R: Rng + ?Sized>(k: usize, exclude: usize, rate: f64, rng: &mut R) -> Self {
        let others = k.saturating_sub(1);
        let to_id = |t: usize| if t + 1 < exclude { t + 1 } else { t + 2 };
        let members = if rate.is_nan() || rate <= 0.0 {
            Vec::new()
        } else if rate >= 1.0 {
            (0..others).map(to_id).collect()
        } else {
            let geo = Geometric::new(rate).expect("rate in (0, 1)");
            let mut members = Vec::new();
            let mut t: u64 = 0;
            loop {
                t = t.saturating_add(geo.sample(rng));
                if t >= others as u64 {
                    break;
                }
                members.push(to_id(t as usize));
                t += 1;
            }
            members
        };
        Self { members, pruned: false }
    }
}

/// Removes elements that clearly outweigh `i` under the mixture.
///
/// Each of `n1` steps draws `j` from the live set, then `n2` draws from
/// `{j, i}`; `j` goes when it wins at least three quarters of them.
pub fn prune_set<R: Rng + ?Sized>(
    set: CandidateSet,
    i: usize,
    n1: u64,
    n2: u64,
    mixture: &MixtureOracle,
    rng: &mut R,
) -> Result<CandidateSet> {
    let mut sq = mixture.set_query(set.members)?;
    for _ in 0..n1 {
        if sq.is_empty() {
            break;
        }
        let idx = sq.sample(rng)?;
        let j = sq.members()[idx];
        let wins = mixture.binary(Region::Ids(&[j]), Region::Ids(&[i]))?.count(n2 as Count, rng);
        if 4 * wins >= 3 * n2 as Count {
            sq.remove(idx);
        }
    }
    Ok(CandidateSet { members: sq.live_members(), pruned: true })
}

/// Pairwise and set-level tests on one pruned set.
fn test_pruned_set<R: Rng + ?Sized>(
    set: &CandidateSet,
    i: usize,
    params: &ClosenessParams,
    mixture: &MixtureOracle,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<Verdict> {
    if set.members.is_empty() {
        return Ok(Verdict::Same);
    }
    let (p, q) = (mixture.left(), mixture.right());
    let sq = mixture.set_query(set.members.clone())?;
    let mut seen = Vec::new();
    for _ in 0..params.n4 {
        let j = sq.sample_with(i, rng);
        if j != i && !seen.contains(&j) {
            seen.push(j);
        }
    }
    let pair = EqualityParams::new(params.chi_pair, params.delta_assisted, cfg.c_te)?.early_stop(cfg.early_stop);
    for j in seen {
        let src_p = p.binary(Region::Ids(&[i]), Region::Ids(&[j]))?;
        let src_q = q.binary(Region::Ids(&[i]), Region::Ids(&[j]))?;
        if test_equal(&src_p, &src_q, &pair, rng)?.is_diff() {
            return Ok(Verdict::Diff);
        }
    }
    let whole = EqualityParams::new(params.chi_set, params.delta_assisted, cfg.c_te)?.early_stop(cfg.early_stop);
    let src_p = p.binary(Region::Ids(&[i]), Region::Ids(&set.members))?;
    let src_q = q.binary(Region::Ids(&[i]), Region::Ids(&set.members))?;
    test_equal(&src_p, &src_q, &whole, rng)
}

/// Closeness test for a fixed candidate and rate: builds and prunes `m`
/// sets, then tests each until one says Diff.
pub fn assisted_closeness_test<R: Rng + ?Sized>(
    r_guess: f64,
    tuple: &CandidateTuple,
    params: &ClosenessParams,
    mixture: &MixtureOracle,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<Verdict> {
    let i = tuple.element;
    let mut sets = Vec::with_capacity(params.m.min(1 << 20) as usize);
    for _ in 0..params.m {
        let s = CandidateSet::sample(params.k, i, r_guess, rng);
        sets.push(prune_set(s, i, params.n1_assisted, params.n2, mixture, rng)?);
    }
    for s in &sets {
        if test_pruned_set(s, i, params, mixture, cfg, rng)?.is_diff() {
            return Ok(Verdict::Diff);
        }
    }
    Ok(Verdict::Same)
}

/// Rates visited by one binary search and the comparator outcomes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub log_guesses: Vec<f64>,
    pub heavy: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub verdict: Verdict,
    pub trace: SearchTrace,
}

/// Comparator: `heavy` when `i` wins fewer than `5 n3 / gamma` of `n3`
/// draws from `S ∪ {i}`.
fn compare<R: Rng + ?Sized>(
    set: &CandidateSet,
    i: usize,
    params: &ClosenessParams,
    mixture: &MixtureOracle,
    rng: &mut R,
) -> Result<bool> {
    let sq = mixture.set_query(set.members.clone())?;
    let wins = sq.versus(i).count(params.n3 as Count, rng);
    Ok((wins as f64) * params.gamma < 5.0 * params.n3 as f64)
}

/// Binary search over `log r_guess` with an assisted test at every step.
pub fn binary_search<R: Rng + ?Sized>(
    tuple: &CandidateTuple,
    params: &ClosenessParams,
    mixture: &MixtureOracle,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<SearchOutcome> {
    let i = tuple.element;
    let mut state = GuessState::new(params.k);
    let mut trace = SearchTrace::default();
    for _ in 0..params.rounds {
        let r_guess = state.r_guess();
        trace.log_guesses.push(state.log_r_guess);
        let s = CandidateSet::sample(params.k, i, r_guess, rng);
        let s = prune_set(s, i, params.n1_search, params.n2, mixture, rng)?;
        if assisted_closeness_test(r_guess, tuple, params, mixture, cfg, rng)?.is_diff() {
            return Ok(SearchOutcome { verdict: Verdict::Diff, trace });
        }
        let heavy = compare(&s, i, params, mixture, rng)?;
        trace.heavy.push(heavy);
        state.update(heavy);
    }
    Ok(SearchOutcome { verdict: Verdict::Same, trace })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosenessReport {
    pub verdict: Verdict,
    pub queries_p: Count,
    pub queries_q: Count,
}

/// Full closeness test: candidates from the mixture, one binary search each.
pub fn closeness_test<R: Rng + ?Sized>(
    mixture: &MixtureOracle,
    eps: f64,
    delta: f64,
    cfg: &TesterConfig,
    rng: &mut R,
) -> Result<ClosenessReport> {
    cfg.validate()?;
    let k = mixture.k();
    let (p0, q0) = (mixture.left().queries(), mixture.right().queries());
    let tuples = find_element(mixture, eps, cfg.log_base, rng)?;
    let mut verdict = Verdict::Same;
    for t in &tuples {
        let params = ClosenessParams::new(k, eps, delta, t, cfg)?;
        if binary_search(t, &params, mixture, cfg, rng)?.verdict.is_diff() {
            verdict = Verdict::Diff;
            break;
        }
    }
    Ok(ClosenessReport {
        verdict,
        queries_p: mixture.left().queries() - p0,
        queries_q: mixture.right().queries() - q0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Distribution;
    use crate::oracle::CondOracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mixture(p: Vec<f64>, q: Vec<f64>) -> MixtureOracle {
        MixtureOracle::new(
            CondOracle::from_distribution(Distribution::new(p).unwrap()),
            CondOracle::from_distribution(Distribution::new(q).unwrap()),
        )
        .unwrap()
    }

    fn tuple() -> CandidateTuple {
        CandidateTuple { element: 1, beta: 0.0625, alpha: 1.0 / (4.0 * 32f64.ln()) }
    }

    #[test]
    fn rounds_follow_loglog() {
        assert_eq!(search_rounds(1 << 16).unwrap(), 4);
        assert_eq!(search_rounds(1 << 8).unwrap(), 3);
        assert_eq!(search_rounds(4096).unwrap(), 4);
        assert_eq!(search_rounds(1 << 20).unwrap(), 5);
        assert_eq!(search_rounds(4).unwrap(), 1);
        assert!(search_rounds(3).is_err());
    }

    #[test]
    fn parameters_match_formulas_at_unit_multipliers() {
        let cfg = TesterConfig::unscaled();
        let (k, eps, delta) = (1usize << 16, 0.5, 0.2);
        let t = tuple();
        let p = ClosenessParams::new(k, eps, delta, &t, &cfg).unwrap();
        let (a, b) = (t.alpha, t.beta);
        let ll = 4.0f64;
        let gamma = 1000.0 * (ll / (delta * eps)).ln();
        assert!((p.gamma - gamma).abs() < 1e-9);
        let m = (4096.0 * gamma / (a * b * b)).ceil();
        assert_eq!(p.m as f64, m);
        let bdd = a * b / (128.0 * gamma * (128.0 * gamma / (b * b)).ln());
        assert!((p.beta_dd - bdd).abs() < 1e-18);
        let n4 = (gamma / (a * b)).ceil();
        assert_eq!(p.n4 as f64, n4);
        let dp = eps * delta / (32.0 * m * (n4 + 1.0) * ll);
        assert!((p.delta_assisted / dp - 1.0).abs() < 1e-12);
        let dps = delta / (40.0 * ll);
        assert!((p.delta_prune_search / dps - 1.0).abs() < 1e-12);
        let g = gamma / (a * b);
        let n1 = ((g / dps).ln() * (g * g.ln() + (1.0 / dps).ln() * (1.0 / dps).ln().ln())).ceil();
        assert_eq!(p.n1_search as f64, n1);
        assert_eq!(p.n2 as f64, (ll.ln() + (1.0 / (eps * delta)).ln()).ceil());
        assert_eq!(p.n3 as f64, (gamma * gamma * (ll / delta).ln()).ceil());
        assert!((p.chi_pair - bdd * bdd / 25.0).abs() < 1e-30);
        let chi_set = (a * b).powi(3) / (2f64.powi(23) * gamma * gamma * (128.0 * gamma / (a * b * b)).ln().powi(3));
        assert!((p.chi_set / chi_set - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_gamma_is_rejected() {
        let cfg = TesterConfig { gamma_scale: 1e-6, ..TesterConfig::default() };
        assert!(matches!(
            ClosenessParams::new(256, 0.5, 0.2, &tuple(), &cfg),
            Err(Error::InvalidParameter { name: "gamma", .. })
        ));
    }

    #[test]
    fn guess_state_starts_at_root_k() {
        let s = GuessState::new(1 << 16);
        assert!((s.log_r_guess + 8.0 * 2f64.ln()).abs() < 1e-12);
        assert!((s.low + 16.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(s.high, 0.0);
    }

    #[test]
    fn candidate_sets_exclude_the_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rate in [0.0, 0.01, 0.5, 1.0] {
            let s = CandidateSet::sample(100, 37, rate, &mut rng);
            assert!(!s.members.contains(&37));
            assert!(s.members.windows(2).all(|w| w[0] < w[1]));
            assert!(s.members.iter().all(|&j| (1..=100).contains(&j)));
        }
        assert_eq!(CandidateSet::sample(100, 37, 1.0, &mut rng).members.len(), 99);
        assert!(CandidateSet::sample(100, 37, 0.0, &mut rng).members.is_empty());
    }

    #[test]
    fn candidate_set_size_tracks_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let total: usize = (0..200).map(|_| CandidateSet::sample(10_001, 1, 0.1, &mut rng).members.len()).sum();
        let mean = total as f64 / 200.0;
        // Each set is Binomial(10000, 0.1); the mean of 200 has sd ~ 2.1.
        assert!((mean - 1000.0).abs() < 10.0, "{mean}");
    }

    fn default_prune_counts() -> (u64, u64) {
        let p = ClosenessParams::new(4096, 0.5, 0.2, &tuple(), &TesterConfig::default()).unwrap();
        (p.n1_search, p.n2)
    }

    #[test]
    fn prune_keeps_equal_masses() {
        let (n1, n2) = default_prune_counts();
        let k = 64;
        let mo = mixture(vec![1.0 / k as f64; k], vec![1.0 / k as f64; k]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let runs = 1000;
        let mut removals = 0;
        for _ in 0..runs {
            let set = CandidateSet { members: (2..=10).collect(), pruned: false };
            let out = prune_set(set, 1, n1, n2, &mo, &mut rng).unwrap();
            assert!(out.pruned);
            removals += 9 - out.members.len();
        }
        // A fair coin reaching 3/4 of n2 draws is a far-tail event.
        assert!(removals <= 3, "{removals}");
    }

    #[test]
    fn prune_removes_a_tenfold_element() {
        let (n1, n2) = default_prune_counts();
        let mut w = vec![1.0; 40];
        w[4] = 10.0;
        let d = Distribution::from_weights(w).unwrap();
        let mo = MixtureOracle::new(
            CondOracle::from_distribution(d.clone()),
            CondOracle::from_distribution(d),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let runs = 300;
        let removed = (0..runs)
            .filter(|_| {
                let set = CandidateSet { members: (2..=12).collect(), pruned: false };
                !prune_set(set, 1, n1, n2, &mo, &mut rng).unwrap().members.contains(&5)
            })
            .count();
        assert!(removed as f64 >= 0.95 * runs as f64, "{removed}");
    }

    #[test]
    fn prune_keeps_a_light_element() {
        let (n1, n2) = default_prune_counts();
        let mut w = vec![1.0; 40];
        w[4] = 0.25;
        let d = Distribution::from_weights(w).unwrap();
        let mo = MixtureOracle::new(
            CondOracle::from_distribution(d.clone()),
            CondOracle::from_distribution(d),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs = 300;
        let removed = (0..runs)
            .filter(|_| {
                let set = CandidateSet { members: (2..=12).collect(), pruned: false };
                !prune_set(set, 1, n1, n2, &mo, &mut rng).unwrap().members.contains(&5)
            })
            .count();
        assert!(removed as f64 <= 0.05 * runs as f64, "{removed}");
    }

    #[test]
    fn prune_of_empty_set_is_empty() {
        let mo = mixture(vec![0.5, 0.5], vec![0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = prune_set(CandidateSet { members: vec![], pruned: false }, 1, 10, 10, &mo, &mut rng).unwrap();
        assert!(out.members.is_empty());
        assert_eq!(mo.queries(), 0);
    }

    #[test]
    fn search_visits_every_round_when_equal() {
        let k = 1 << 8;
        let u = vec![1.0 / k as f64; k];
        let mo = mixture(u.clone(), u);
        let cfg = TesterConfig::default();
        let t = CandidateTuple { element: 10, beta: 0.5, alpha: 0.05 };
        let params = ClosenessParams::new(k, 0.5, 0.2, &t, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = binary_search(&t, &params, &mo, &cfg, &mut rng).unwrap();
        assert_eq!(out.verdict, Verdict::Same);
        assert_eq!(out.trace.log_guesses.len(), 3);
        assert_eq!(out.trace.heavy.len(), 3);
    }

    #[test]
    fn equal_pair_is_same() {
        let k = 256;
        let u = vec![1.0 / k as f64; k];
        let mo = mixture(u.clone(), u);
        let cfg = TesterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r = closeness_test(&mo, 0.5, 0.2, &cfg, &mut rng).unwrap();
        assert_eq!(r.verdict, Verdict::Same);
        assert_eq!(r.queries_p + r.queries_q, mo.queries());
    }

    proptest::proptest! {
        #[test]
        fn guess_state_brackets(k in 4usize..1_000_000, moves in proptest::collection::vec(proptest::bool::ANY, 0..12)) {
            let mut s = GuessState::new(k);
            for heavy in moves {
                let before = s;
                s.update(heavy);
                proptest::prop_assert!(s.low <= s.log_r_guess && s.log_r_guess <= s.high);
                if heavy {
                    proptest::prop_assert!(s.high < before.high);
                    proptest::prop_assert_eq!(s.low, before.low);
                } else {
                    proptest::prop_assert!(s.low > before.low);
                    proptest::prop_assert_eq!(s.high, before.high);
                }
            }
        }

        #[test]
        fn pruned_sets_never_hold_the_element(seed in 0u64..500, i in 1usize..50, rate in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mo = mixture(vec![0.02; 50], vec![0.02; 50]);
            let s = CandidateSet::sample(50, i, rate, &mut rng);
            let out = prune_set(s, i, 20, 8, &mo, &mut rng).unwrap();
            proptest::prop_assert!(!out.members.contains(&i));
        }
    }
}
