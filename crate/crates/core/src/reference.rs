//! Closed forms and brute-force checks over fully known vectors.
//!
//! Nothing here queries an oracle. These are the yardsticks the testers are
//! judged against: distances, heaviness and approximability under the
//! `p + q` order, and numeric sweeps of the supporting inequalities.

use rand::Rng;
use rand_distr::{Distribution as _, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::dist::{Distribution, RankOrder};
use crate::error::{Error, Result};

fn check_same_domain(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.k() != q.k() {
        return Err(Error::DomainMismatch(p.k(), q.k()));
    }
    Ok(())
}

pub fn l1_distance(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_same_domain(p, q)?;
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum())
}

/// Chi-squared distance between two coins with success chances `p`, `q`.
/// Identical degenerate coins give 0.
pub fn chi2_binary(p: f64, q: f64) -> f64 {
    let num = (p - q).powi(2);
    if num == 0.0 {
        return 0.0;
    }
    num / ((p + q) * (2.0 - p - q))
}

/// Signature shared by [`chi2_binary`] and deliberately broken variants.
pub type Chi2Fn = fn(f64, f64) -> f64;

/// Exact pair chi-squared and its lower bounds for one quadruple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiLow {
    /// Chi-squared distance between the `{i, j}` conditionals.
    pub lhs: f64,
    /// Gap between the element-level signed ratios of `i` and `j`.
    pub premise: f64,
    /// Bound with the exact denominator.
    pub middle: f64,
    /// Final bound `premise^2 s_i s_j / (4 (s_i + s_j)^2)`.
    pub bound: f64,
}

/// Evaluates the pair chi-squared lower bound at `eps = premise`.
pub fn chilow_bound(p_i: f64, q_i: f64, p_j: f64, q_j: f64) -> ChiLow {
    chilow_with(p_i, q_i, p_j, q_j, chi2_binary)
}

pub fn chilow_with(p_i: f64, q_i: f64, p_j: f64, q_j: f64, chi2: Chi2Fn) -> ChiLow {
    let (s_i, s_j) = (p_i + q_i, p_j + q_j);
    let lhs = chi2(p_i / (p_i + p_j), q_i / (q_i + q_j));
    let premise = 2.0 * (p_i * q_j - p_j * q_i).abs() / (s_i * s_j);
    let d1 = p_i * (q_i + q_j) + q_i * (p_i + p_j);
    let d2 = p_j * (q_i + q_j) + q_j * (p_i + p_j);
    let e2 = premise * premise;
    let middle = e2 * s_i * s_i * s_j * s_j / (4.0 * d1 * d2);
    let bound = e2 * s_i * s_j / (4.0 * (s_i + s_j).powi(2));
    ChiLow { lhs, premise, middle, bound }
}

/// Mean of the single-term Poisson statistic predicted in closed form.
pub fn poisson_stat_mean(lam1: f64, lam2: f64) -> f64 {
    let s = lam1 + lam2;
    if s == 0.0 {
        return 0.0;
    }
    (lam1 - lam2).powi(2) / s * (1.0 - (-s).exp())
}

/// The part of the variance bound that does not involve the constant.
pub fn poisson_stat_var_core(lam1: f64, lam2: f64) -> f64 {
    let s = lam1 + lam2;
    if s == 0.0 {
        return 0.0;
    }
    4.0 * (lam1 - lam2).powi(2) / s
}

/// `((a - b)^2 - a - b) / (a + b - 1)`, with a zero numerator giving 0.
pub fn single_term(a: u64, b: u64) -> f64 {
    let d = a as f64 - b as f64;
    let s = (a + b) as f64;
    let num = d * d - s;
    if num == 0.0 {
        0.0
    } else {
        num / (s - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub lam1: f64,
    pub lam2: f64,
    pub trials: usize,
    pub mean: f64,
    pub expected_mean: f64,
    /// Standard error of `mean`.
    pub std_error: f64,
    pub var: f64,
    /// `4 (lam1 - lam2)^2 / (lam1 + lam2)`.
    pub var_core: f64,
}

impl MomentRow {
    pub fn mean_within(&self, sigmas: f64) -> bool {
        (self.mean - self.expected_mean).abs() <= sigmas * self.std_error + 1e-12
    }

    /// Smallest constant that makes the variance bound hold for this row.
    pub fn needed_c(&self) -> f64 {
        (self.var - self.var_core).max(0.0).sqrt()
    }
}

/// Monte-Carlo moments of the single-term statistic.
pub fn poisson_stat_moments<R: Rng + ?Sized>(lam1: f64, lam2: f64, trials: usize, rng: &mut R) -> Result<MomentRow> {
    if !(lam1 >= 0.0 && lam2 >= 0.0 && lam1.is_finite() && lam2.is_finite()) {
        return Err(Error::InvalidParameter { name: "lambda", value: lam1.min(lam2) });
    }
    if trials < 2 {
        return Err(Error::InvalidParameter { name: "trials", value: trials as f64 });
    }
    let draw = |lam: f64, rng: &mut R| -> u64 {
        if lam == 0.0 {
            0
        } else {
            Poisson::new(lam).expect("positive mean").sample(rng) as u64
        }
    };
    // Welford accumulation keeps the variance stable.
    let (mut mean, mut m2) = (0.0, 0.0);
    for t in 0..trials {
        let x = single_term(draw(lam1, rng), draw(lam2, rng));
        let delta = x - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (trials - 1) as f64;
    Ok(MomentRow {
        lam1,
        lam2,
        trials,
        mean,
        expected_mean: poisson_stat_mean(lam1, lam2),
        std_error: (var / trials as f64).sqrt(),
        var,
        var_core: poisson_stat_var_core(lam1, lam2),
    })
}

/// Elements by `p + q` descending, ties by id.
pub fn pair_order(p: &Distribution, q: &Distribution) -> Result<RankOrder> {
    check_same_domain(p, q)?;
    let s: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(a, b)| a + b).collect();
    Ok(RankOrder::descending(&s))
}

fn signed_ratio(dp: f64, s: f64) -> f64 {
    if s > 0.0 {
        dp / s
    } else {
        0.0
    }
}

/// Per-rank quantities under the `p + q` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub l1: f64,
    /// Ids in `p + q` order.
    pub order: Vec<usize>,
    /// `r(G)` for the tail starting at each rank.
    pub tails: Vec<f64>,
    /// Approximability of the element at each rank.
    pub approximability: Vec<f64>,
}

pub fn pair_metrics(p: &Distribution, q: &Distribution) -> Result<PairMetrics> {
    let order = pair_order(p, q)?;
    let k = p.k();
    let mut tails = vec![0.0; k];
    let mut approximability = vec![0.0; k];
    let (mut tail_p, mut tail_q) = (0.0, 0.0);
    for rank in (0..k).rev() {
        let id = order.id_at(rank);
        let (a, b) = (p.prob(id), q.prob(id));
        tail_p += a;
        tail_q += b;
        tails[rank] = (tail_p + tail_q) / 2.0;
        approximability[rank] = (signed_ratio(a - b, a + b) - signed_ratio(tail_p - tail_q, tail_p + tail_q)).abs();
    }
    Ok(PairMetrics { l1: l1_distance(p, q)?, order: order.order().to_vec(), tails, approximability })
}

/// `sum_i r(i) * approximability(i)`; at least `l1 / 4` for every pair.
pub fn exp_approx_check(p: &Distribution, q: &Distribution) -> Result<f64> {
    let m = pair_metrics(p, q)?;
    Ok(m
        .order
        .iter()
        .zip(&m.approximability)
        .map(|(&id, a)| (p.prob(id) + q.prob(id)) / 2.0 * a)
        .sum())
}

/// Exact facts about one element of a known pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clairvoyant {
    /// `r(i) / r(G_i)`.
    pub ratio: f64,
    /// `r(G_i)`, the heaviness of `i`.
    pub heaviness: f64,
    pub approximability: f64,
    /// Rank of `i` in the `p + q` order, starting at 1.
    pub rank: usize,
}

pub fn clairvoyant(p: &Distribution, q: &Distribution, i: usize) -> Result<Clairvoyant> {
    p.check_id(i)?;
    let m = pair_metrics(p, q)?;
    let rank = m.order.iter().position(|&id| id == i).expect("id in order");
    let r_i = (p.prob(i) + q.prob(i)) / 2.0;
    let heaviness = m.tails[rank];
    let ratio = if heaviness > 0.0 { r_i / heaviness } else { 0.0 };
    Ok(Clairvoyant { ratio, heaviness, approximability: m.approximability[rank], rank: rank + 1 })
}

/// A probability vector drawn from a symmetric Dirichlet.
pub fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Result<Distribution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter { name: "alpha", value: alpha });
    }
    if k == 0 {
        return Err(Error::EmptyDistribution);
    }
    let g = Gamma::new(alpha, 1.0).expect("valid gamma");
    loop {
        let w: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        if w.iter().sum::<f64>() > 0.0 {
            return Distribution::from_weights(w);
        }
    }
}

/// Outcome of a numeric sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub checked: usize,
    /// Cases where the inequality's premise held and was therefore tested.
    pub applicable: usize,
    pub violations: usize,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

const REL_SLACK: f64 = 1e-9;

/// Random positive quadruples and a random target gap; wherever the gap is
/// met, both chi-squared lower bounds must hold.
pub fn chilow_sweep<R: Rng + ?Sized>(count: usize, chi2: Chi2Fn, rng: &mut R) -> SweepReport {
    let mut report = SweepReport { checked: 0, applicable: 0, violations: 0 };
    for _ in 0..count {
        // Log-uniform masses cover both balanced and lopsided quadruples.
        let mut mass = || 10f64.powf(rng.random_range(-4.0..0.0));
        let (p_i, q_i, p_j, q_j) = (mass(), mass(), mass(), mass());
        let eps: f64 = rng.random_range(0.0..2.0);
        let c = chilow_with(p_i, q_i, p_j, q_j, chi2);
        report.checked += 1;
        if c.premise < eps {
            continue;
        }
        report.applicable += 1;
        let e2 = eps * eps;
        let scale = e2 / (c.premise * c.premise);
        let (middle, bound) = (c.middle * scale, c.bound * scale);
        if c.lhs < middle * (1.0 - REL_SLACK) || middle < bound * (1.0 - REL_SLACK) {
            report.violations += 1;
        }
    }
    report
}

/// Random Dirichlet pairs; the approximability sum must reach `l1 / 4`.
pub fn exp_approx_sweep<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<SweepReport> {
    let mut report = SweepReport { checked: 0, applicable: 0, violations: 0 };
    for _ in 0..count {
        let k = rng.random_range(2..=64);
        let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
        let p = dirichlet(k, alpha, rng)?;
        let q = dirichlet(k, alpha, rng)?;
        let l1 = l1_distance(&p, &q)?;
        let sum = exp_approx_check(&p, &q)?;
        report.checked += 1;
        report.applicable += 1;
        if sum < l1 / 4.0 - 1e-12 {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// The lambda grid of the moment table.
pub const MOMENT_GRID: [f64; 4] = [0.0, 1.0, 5.0, 10.0];

/// Moment rows over `MOMENT_GRID x MOMENT_GRID`.
pub fn moment_table<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> Result<Vec<MomentRow>> {
    let mut rows = Vec::new();
    for &a in &MOMENT_GRID {
        for &b in &MOMENT_GRID {
            rows.push(poisson_stat_moments(a, b, trials, rng)?);
        }
    }
    Ok(rows)
}

/// Smallest constant making every row's variance bound hold.
pub fn fitted_c(rows: &[MomentRow]) -> f64 {
    rows.iter().map(MomentRow::needed_c).fold(0.0, f64::max)
}

/// Batch-mean constant the equality test's analysis asks for, `max(192, 20c)`.
pub fn required_c_te(c: f64) -> f64 {
    192f64.max(20.0 * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn two_bump(k: usize, eps: f64) -> (Distribution, Distribution) {
        let p = Distribution::uniform(k).unwrap();
        let q = (0..k)
            .map(|t| if t % 2 == 0 { (1.0 + eps) / k as f64 } else { (1.0 - eps) / k as f64 })
            .collect();
        (p, Distribution::new(q).unwrap())
    }

    #[test]
    fn l1_examples() {
        let u = Distribution::uniform(5).unwrap();
        assert_eq!(l1_distance(&u, &u).unwrap(), 0.0);
        assert!((l1_distance(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap() - 2.0).abs() < 1e-15);
        let (p, q) = two_bump(100, 0.5);
        assert!((l1_distance(&p, &q).unwrap() - 0.5).abs() < 1e-12);
        assert!(l1_distance(&u, &p).is_err());
    }

    #[test]
    fn chi2_examples() {
        assert_eq!(chi2_binary(0.3, 0.3), 0.0);
        assert_eq!(chi2_binary(0.0, 0.0), 0.0);
        assert_eq!(chi2_binary(1.0, 1.0), 0.0);
        // (0.2^2) / (1.2 * 0.8)
        assert!((chi2_binary(0.5, 0.7) - 0.04 / 0.96).abs() < 1e-12);
        assert!((chi2_binary(0.5, 0.7) - 0.041_666_666_7).abs() < 1e-9);
        assert!((chi2_binary(0.0, 0.25) - 0.0625 / (0.25 * 1.75)).abs() < 1e-15);
        assert!((chi2_binary(0.0, 0.25) - 0.142_857_142_857).abs() < 1e-9);
    }

    #[test]
    fn chilow_examples() {
        let sym = chilow_bound(0.3, 0.3, 0.2, 0.2);
        assert_eq!(sym.lhs, 0.0);
        assert_eq!(sym.premise, 0.0);

        let c = chilow_bound(0.5, 0.1, 0.1, 0.5);
        assert!((c.premise - 4.0 / 3.0).abs() < 1e-12);
        // Conditionals 5/6 and 1/6: (2/3)^2 / (1 * 1).
        assert!((c.lhs - 4.0 / 9.0).abs() < 1e-12);
        // Denominators are both 0.36, so the middle bound is exact here.
        assert!((c.middle - 4.0 / 9.0).abs() < 1e-12);
        // (16/9) * 0.36 / (4 * 1.44)
        assert!((c.bound - 1.0 / 9.0).abs() < 1e-12);
        assert!(c.lhs >= c.middle - 1e-12 && c.middle >= c.bound);
    }

    #[test]
    fn chilow_sweep_finds_no_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = chilow_sweep(10_000, chi2_binary, &mut rng);
        assert_eq!(r.checked, 10_000);
        assert!(r.applicable > 1000);
        assert!(r.passed());
    }

    #[test]
    fn chilow_sweep_catches_a_broken_chi2() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let broken: Chi2Fn = |p, q| chi2_binary(p, q) / 10.0;
        assert!(!chilow_sweep(10_000, broken, &mut rng).passed());
    }

    #[test]
    fn moment_formula_examples() {
        assert_eq!(poisson_stat_mean(5.0, 5.0), 0.0);
        assert_eq!(poisson_stat_mean(0.0, 0.0), 0.0);
        let m = poisson_stat_mean(10.0, 2.0);
        assert!((m - 64.0 / 12.0 * (1.0 - (-12f64).exp())).abs() < 1e-12);
        assert!((m - 5.3333).abs() < 1e-3);
        assert_eq!(single_term(0, 0), 0.0);
        assert_eq!(single_term(1, 0), 0.0);
        assert_eq!(single_term(0, 1), 0.0);
        assert!((single_term(20, 0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_moments_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let zero = poisson_stat_moments(0.0, 0.0, 100_000, &mut rng).unwrap();
        assert_eq!(zero.mean, 0.0);
        assert_eq!(zero.var, 0.0);
        for (a, b) in [(5.0, 5.0), (10.0, 2.0), (1.0, 0.0)] {
            let row = poisson_stat_moments(a, b, 100_000, &mut rng).unwrap();
            assert!(row.mean_within(5.0), "{row:?}");
        }
    }

    #[test]
    fn exp_approx_examples() {
        let u = Distribution::uniform(7).unwrap();
        assert_eq!(exp_approx_check(&u, &u).unwrap(), 0.0);
        let (p, q) = two_bump(64, 0.5);
        assert!(exp_approx_check(&p, &q).unwrap() >= 0.125);
    }

    #[test]
    fn exp_approx_sweep_finds_no_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = exp_approx_sweep(1000, &mut rng).unwrap();
        assert_eq!(r.checked, 1000);
        assert!(r.passed());
    }

    #[test]
    fn clairvoyant_uniform_ratio() {
        let k = 10;
        let u = Distribution::uniform(k).unwrap();
        for i in 1..=k {
            let c = clairvoyant(&u, &u, i).unwrap();
            assert_eq!(c.rank, i);
            assert!((c.ratio - 1.0 / (k - i + 1) as f64).abs() < 1e-12);
            assert_eq!(c.approximability, 0.0);
        }
    }

    #[test]
    fn clairvoyant_four_element_two_bump() {
        let p = d(&[0.375, 0.375, 0.125, 0.125]);
        let q = d(&[0.125, 0.125, 0.375, 0.375]);
        // All r(i) = 1/4, so the order is by id. Element 1: signed ratio
        // 0.25/0.5 = 0.5; the whole domain has ratio 0.
        let c = clairvoyant(&p, &q, 1).unwrap();
        assert!((c.approximability - 0.5).abs() < 1e-12);
        assert!((c.ratio - 0.25).abs() < 1e-12);
        // Element 2: tail {2,3,4} has p = 0.625, q = 0.875, so its ratio is
        // -0.25 / 1.5 = -1/6 and |0.5 + 1/6| = 2/3.
        let c2 = clairvoyant(&p, &q, 2).unwrap();
        assert!((c2.approximability - 2.0 / 3.0).abs() < 1e-12);
        assert!((c2.ratio - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clairvoyant_spike_element() {
        let (k, eps) = (50usize, 0.5);
        let rest = (1.0 - eps / 2.0) / (k - 2) as f64;
        let mut pv = vec![rest; k];
        pv[0] = eps / 2.0;
        pv[1] = 0.0;
        let mut qv = vec![rest; k];
        qv[0] = 0.0;
        qv[1] = eps / 2.0;
        let (p, q) = (d(&pv), d(&qv));
        let c = clairvoyant(&p, &q, 1).unwrap();
        // Element 1 is fully on p's side while the whole domain is balanced.
        assert!((c.approximability - 1.0).abs() < 1e-12);
        assert!(c.approximability >= eps / 2.0);
    }

    #[test]
    fn fitted_constant_supports_the_batch_default() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rows = moment_table(100_000, &mut rng).unwrap();
        assert_eq!(rows.len(), 16);
        assert!(rows.iter().all(|r| r.mean_within(5.0)));
        let c = fitted_c(&rows);
        assert!(c > 0.5 && c < 5.0, "{c}");
        assert!(200.0 >= required_c_te(c));
    }

    proptest::proptest! {
        #[test]
        fn chi2_is_symmetric_and_bounded(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let a = chi2_binary(p, q);
            proptest::prop_assert!((a - chi2_binary(q, p)).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn l1_is_in_range(w1 in proptest::collection::vec(0.01f64..1.0, 8), w2 in proptest::collection::vec(0.01f64..1.0, 8)) {
            let p = Distribution::from_weights(w1).unwrap();
            let q = Distribution::from_weights(w2).unwrap();
            let l1 = l1_distance(&p, &q).unwrap();
            proptest::prop_assert!((0.0..=2.0 + 1e-12).contains(&l1));
            proptest::prop_assert!(exp_approx_check(&p, &q).unwrap() >= l1 / 4.0 - 1e-12);
        }
    }
}
