//! Poissonized equality test for two Bernoulli sources.
//!
//! Distinguishes `p = q` from a chi-squared distance
//! `(p-q)^2 / ((p+q)(2-p-q)) >= chi_bound`.

use std::cell::Cell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::oracle::{poisson, BinaryQuery, Count};
use crate::Verdict;

/// A source of i.i.d. Bernoulli outcomes, one query per draw.
pub trait BinarySampleSource {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> bool;

    /// Draws `Poisson(mean)` outcomes; returns `(successes, total)`.
    fn poissonized<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> (Count, Count) {
        let n = poisson(mean, rng);
        let mut hits = 0;
        for _ in 0..n {
            hits += self.draw(rng) as Count;
        }
        (hits, n)
    }
}

impl BinarySampleSource for BinaryQuery<'_> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        BinaryQuery::draw(self, rng)
    }

    fn poissonized<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> (Count, Count) {
        BinaryQuery::poissonized(self, mean, rng)
    }
}

/// A fixed coin with its own draw counter.
#[derive(Debug)]
pub struct BernoulliSource {
    p: f64,
    draws: Cell<Count>,
}

impl BernoulliSource {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter { name: "p", value: p });
        }
        Ok(Self { p, draws: Cell::new(0) })
    }

    pub fn draws(&self) -> Count {
        self.draws.get()
    }
}

impl BinarySampleSource for BernoulliSource {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        self.draws.set(self.draws.get() + 1);
        rng.random::<f64>() < self.p
    }

    fn poissonized<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> (Count, Count) {
        let s = poisson(mean * self.p, rng);
        let f = poisson(mean * (1.0 - self.p), rng);
        self.draws.set(self.draws.get() + s + f);
        (s, s + f)
    }
}

/// Parameters of one equality test.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityParams {
    pub chi_bound: f64,
    pub delta: f64,
    /// Poisson batch mean.
    pub n: f64,
    pub repetitions: usize,
    pub early_stop: bool,
}

impl EqualityParams {
    /// Batch mean `ceil(c_te / chi_bound)`.
    pub fn new(chi_bound: f64, delta: f64, c_te: f64) -> Result<Self> {
        if !(c_te.is_finite() && c_te > 0.0) {
            return Err(Error::InvalidParameter { name: "c_te", value: c_te });
        }
        Self::with_n(chi_bound, delta, (c_te / chi_bound).ceil())
    }

    pub fn with_n(chi_bound: f64, delta: f64, n: f64) -> Result<Self> {
        if !(chi_bound > 0.0 && chi_bound <= 2.0) {
            return Err(Error::InvalidParameter { name: "chi_bound", value: chi_bound });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter { name: "delta", value: delta });
        }
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::InvalidParameter { name: "n", value: n });
        }
        // The analysis needs n * chi_bound >= 10.
        if n * chi_bound < 10.0 {
            return Err(Error::InvalidParameter { name: "n", value: n });
        }
        Ok(Self { chi_bound, delta, n, repetitions: repetitions(delta), early_stop: true })
    }

    pub fn early_stop(mut self, on: bool) -> Self {
        self.early_stop = on;
        self
    }

    /// Vote threshold on the statistic.
    pub fn threshold(&self) -> f64 {
        self.n * self.chi_bound / 2.0
    }
}

/// `ceil(18 ln(1/delta))`, at least 1.
pub fn repetitions(delta: f64) -> usize {
    ((18.0 * (1.0 / delta).ln()).ceil() as usize).max(1)
}

/// Majority vote over a fixed number of rounds; ties go to `Same`.
#[derive(Debug, Clone)]
pub struct MajorityVote {
    rounds: usize,
    same: usize,
    diff: usize,
}

impl MajorityVote {
    pub fn new(rounds: usize) -> Self {
        Self { rounds, same: 0, diff: 0 }
    }

    pub fn record(&mut self, vote: Verdict) {
        match vote {
            Verdict::Same => self.same += 1,
            Verdict::Diff => self.diff += 1,
        }
    }

    pub fn votes(&self) -> (usize, usize) {
        (self.same, self.diff)
    }

    /// The final outcome if the remaining rounds can no longer change it.
    pub fn decided(&self) -> Option<Verdict> {
        if 2 * self.diff > self.rounds {
            Some(Verdict::Diff)
        } else if 2 * self.same >= self.rounds {
            Some(Verdict::Same)
        } else {
            None
        }
    }

    pub fn verdict(&self) -> Verdict {
        if self.diff > self.same {
            Verdict::Diff
        } else {
            Verdict::Same
        }
    }
}

/// The equality statistic
/// `[(n1-n2)^2 - n1 - n2] / (n1+n2-1) + [(n1-n2)^2 - n1 - n2] / (n'+n''-n1-n2-1)`.
///
/// A term with zero numerator is zero whatever its denominator.
pub fn t_statistic(n1: Count, n2: Count, n_prime: Count, n_dprime: Count) -> Result<f64> {
    if n1 > n_prime || n2 > n_dprime {
        return Err(Error::InvalidParameter { name: "counts", value: n1 as f64 });
    }
    let s = n1 + n2;
    let failures = n_prime + n_dprime - s;
    let numerator = numerator(n1, n2);
    Ok(term(numerator, s as f64 - 1.0)? + term(numerator, failures as f64 - 1.0)?)
}

/// `(n1-n2)^2 - n1 - n2`, exact when it fits in 128 bits.
fn numerator(n1: Count, n2: Count) -> f64 {
    let d = n1.abs_diff(n2);
    match d.checked_mul(d) {
        Some(sq) => {
            let s = n1 + n2;
            if sq >= s {
                (sq - s) as f64
            } else {
                -((s - sq) as f64)
            }
        }
        None => (d as f64) * (d as f64) - (n1 + n2) as f64,
    }
}

fn term(numerator: f64, denominator: f64) -> Result<f64> {
    if numerator == 0.0 {
        return Ok(0.0);
    }
    if denominator == 0.0 {
        return Err(Error::DegenerateStatistic);
    }
    Ok(numerator / denominator)
}

/// One repetition: draws both Poisson batches and votes.
pub fn vote_once<A, B, R>(src_p: &A, src_q: &B, params: &EqualityParams, rng: &mut R) -> Result<Verdict>
where
    A: BinarySampleSource,
    B: BinarySampleSource,
    R: Rng + ?Sized,
{
    let (n1, n_prime) = src_p.poissonized(params.n, rng);
    let (n2, n_dprime) = src_q.poissonized(params.n, rng);
    let t = t_statistic(n1, n2, n_prime, n_dprime)?;
    Ok(if t <= params.threshold() { Verdict::Same } else { Verdict::Diff })
}

/// The repeated, majority-voted equality test.
pub fn test_equal<A, B, R>(src_p: &A, src_q: &B, params: &EqualityParams, rng: &mut R) -> Result<Verdict>
where
    A: BinarySampleSource,
    B: BinarySampleSource,
    R: Rng + ?Sized,
{
    let mut vote = MajorityVote::new(params.repetitions);
    for _ in 0..params.repetitions {
        vote.record(vote_once(src_p, src_q, params, rng)?);
        if params.early_stop {
            if let Some(v) = vote.decided() {
                return Ok(v);
            }
        }
    }
    Ok(vote.verdict())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn statistic_examples() {
        assert_eq!(t_statistic(0, 0, 0, 0).unwrap(), 0.0);
        let t = t_statistic(10, 10, 100, 100).unwrap();
        let expected = -20.0 / 19.0 - 20.0 / 179.0;
        assert!((t - expected).abs() < 1e-12);
        assert!((t - (-1.1644)).abs() < 1e-4);
        let t = t_statistic(20, 0, 100, 100).unwrap();
        assert!((t - (20.0 + 380.0 / 179.0)).abs() < 1e-12);
        assert!((t - 22.1229).abs() < 1e-4);
    }

    #[test]
    fn statistic_single_success_is_zero() {
        // (1-0)^2 - 1 = 0 over a zero denominator.
        assert_eq!(t_statistic(1, 0, 1, 5).unwrap(), 0.0);
        assert_eq!(t_statistic(0, 1, 3, 1).unwrap(), 0.0);
    }

    #[test]
    fn statistic_rejects_impossible_counts() {
        assert!(t_statistic(5, 0, 4, 0).is_err());
    }

    #[test]
    fn params_follow_defaults() {
        let p = EqualityParams::new(0.04, 0.1, 200.0).unwrap();
        assert_eq!(p.n, 5000.0);
        assert_eq!(p.repetitions, (18.0 * 10f64.ln()).ceil() as usize);
        assert_eq!(p.repetitions, 42);
        assert!(EqualityParams::new(0.0, 0.1, 200.0).is_err());
        assert!(EqualityParams::new(2.5, 0.1, 200.0).is_err());
        assert!(EqualityParams::new(0.1, 1.0, 200.0).is_err());
        // n * chi = 9 < 10
        assert!(EqualityParams::with_n(0.1, 0.1, 90.0).is_err());
    }

    #[test]
    fn majority_ties_go_to_same() {
        let mut v = MajorityVote::new(4);
        v.record(Verdict::Diff);
        v.record(Verdict::Diff);
        assert_eq!(v.decided(), None);
        v.record(Verdict::Same);
        v.record(Verdict::Same);
        assert_eq!(v.verdict(), Verdict::Same);
        assert_eq!(v.decided(), Some(Verdict::Same));
    }

    #[test]
    fn degenerate_coins_always_same() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = BernoulliSource::new(0.0).unwrap();
        let b = BernoulliSource::new(0.0).unwrap();
        let params = EqualityParams::new(0.04, 0.1, 200.0).unwrap();
        for _ in 0..50 {
            assert_eq!(test_equal(&a, &b, &params, &mut rng).unwrap(), Verdict::Same);
        }
    }

    #[test]
    fn early_stop_does_not_change_the_verdict() {
        let params = EqualityParams::new(0.04, 0.05, 200.0).unwrap();
        for seed in 0..40 {
            let a = BernoulliSource::new(0.5).unwrap();
            let b = BernoulliSource::new(0.6).unwrap();
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let early = test_equal(&a, &b, &params, &mut r1).unwrap();
            let full = test_equal(&a, &b, &params.clone().early_stop(false), &mut r2).unwrap();
            assert_eq!(early, full);
        }
    }

    #[test]
    fn poissonized_cost_is_charged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = BernoulliSource::new(0.5).unwrap();
        let b = BernoulliSource::new(0.5).unwrap();
        let params = EqualityParams::new(0.5, 0.3, 200.0).unwrap().early_stop(false);
        test_equal(&a, &b, &params, &mut rng).unwrap();
        // Each repetition draws about n = 400 per side.
        let per_side = a.draws() as f64 / params.repetitions as f64;
        assert!((per_side - 400.0).abs() < 100.0, "{per_side}");
    }

    proptest::proptest! {
        #[test]
        fn statistic_grows_with_imbalance(s in 2u64..400, extra in 1u64..400, a in 0u64..400) {
            let s = s as Count;
            let a = (a as Count).min(s);
            let b = (a + 1).min(s);
            let (lo1, lo2) = (s - a, a);
            let (hi1, hi2) = (s - b.min(s), b.min(s));
            // |lo1 - lo2| vs |hi1 - hi2| for splits a and a+1 of s.
            let fail = extra as Count;
            let t_a = t_statistic(lo1, lo2, lo1 + fail, lo2 + fail).unwrap();
            let t_b = t_statistic(hi1, hi2, hi1 + fail, hi2 + fail).unwrap();
            let d_a = lo1.abs_diff(lo2);
            let d_b = hi1.abs_diff(hi2);
            if d_a > d_b {
                proptest::prop_assert!(t_a > t_b);
            } else if d_a < d_b {
                proptest::prop_assert!(t_a < t_b);
            }
        }
    }
}
