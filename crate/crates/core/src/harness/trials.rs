//! Reproducible trial loops and the amplifier.

use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::{Fixture, GeneratorSpec};
use super::records::{config_hash, ExperimentRecord};
use crate::closeness::closeness_test;
use crate::config::TesterConfig;
use crate::error::{Error, Result};
use crate::identity::{identity_test, KnownIdentity};
use crate::oracle::{CondOracle, Count, HiddenDistribution, MixtureOracle};
use crate::Verdict;

/// Environment variable that overrides any seed given on the command line.
pub const SEED_ENV: &str = "CONDTEST_SEED";

/// Returns the seed from [`SEED_ENV`] if set, else `fallback`.
pub fn resolve_seed(fallback: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV} is not a u64: {s:?}"))),
        Err(_) => Ok(fallback),
    }
}

/// SplitMix64 finalizer over `seed` and a stream index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream index reserved for building random fixtures.
const FIXTURE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TesterKind {
    Identity,
    Closeness,
}

impl FromStr for TesterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(TesterKind::Identity),
            "closeness" => Ok(TesterKind::Closeness),
            other => Err(Error::Config(format!("unknown tester {other:?}"))),
        }
    }
}

/// `ceil(c_amp * ln(1/delta))`, at least 1.
pub fn amplifier_rounds(c_amp: f64, delta: f64) -> usize {
    ((c_amp * (1.0 / delta).ln()).ceil() as usize).max(1)
}

/// Runs a base tester up to `rounds` times and answers Diff iff more than
/// a 1/60 fraction of the runs said Diff. Stops as soon as the answer is
/// fixed; `run` returns the base verdict.
pub fn amplify<F>(rounds: usize, mut run: F) -> Result<Verdict>
where
    F: FnMut() -> Result<Verdict>,
{
    let rounds = rounds.max(1);
    let mut diffs = 0usize;
    for done in 1..=rounds {
        if run()?.is_diff() {
            diffs += 1;
        }
        // Diff iff 60 * diffs > rounds.
        if 60 * diffs > rounds {
            return Ok(Verdict::Diff);
        }
        if 60 * (diffs + rounds - done) <= rounds {
            return Ok(Verdict::Same);
        }
    }
    Ok(Verdict::Same)
}

/// Everything needed to rerun a batch of trials exactly.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub spec: GeneratorSpec,
    pub tester: TesterKind,
    pub k: usize,
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub cfg: TesterConfig,
    /// Amplifier rounds per trial; `None` runs the base tester once.
    pub amplify_rounds: Option<usize>,
    pub record_wall_time: bool,
}

impl TrialPlan {
    pub fn new(spec: GeneratorSpec, tester: TesterKind, k: usize, eps: f64, delta: f64) -> Self {
        Self {
            spec,
            tester,
            k,
            eps,
            delta,
            trials: 1,
            seed: 0,
            cfg: TesterConfig::default(),
            amplify_rounds: None,
            record_wall_time: true,
        }
    }

    pub fn trial_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, index as u64)
    }
}

/// Oracle-ready form of a fixture, shared read-only by all trials.
enum Prepared {
    Identity { known: KnownIdentity, q: HiddenDistribution },
    Closeness { p: HiddenDistribution, q: HiddenDistribution },
}

impl Prepared {
    fn new(tester: TesterKind, f: Fixture) -> Result<Self> {
        Ok(match tester {
            TesterKind::Identity => {
                let known = KnownIdentity::new(f.p);
                let q = known.prepare_unknown(f.q)?;
                Prepared::Identity { known, q }
            }
            TesterKind::Closeness => {
                Prepared::Closeness { p: HiddenDistribution::new(f.p), q: HiddenDistribution::new(f.q) }
            }
        })
    }

    /// One base run with fresh oracles; returns the verdict and query split.
    fn run_once<R: Rng + ?Sized>(&self, plan: &TrialPlan, rng: &mut R) -> Result<(Verdict, Count, Count)> {
        match self {
            Prepared::Identity { known, q } => {
                let oracle = CondOracle::new(q.clone());
                let r = identity_test(known, &oracle, plan.eps, plan.delta, &plan.cfg, rng)?;
                Ok((r.verdict, r.queries_p, r.queries_q))
            }
            Prepared::Closeness { p, q } => {
                let mo = MixtureOracle::new(CondOracle::new(p.clone()), CondOracle::new(q.clone()))?;
                let r = closeness_test(&mo, plan.eps, plan.delta, &plan.cfg, rng)?;
                Ok((r.verdict, r.queries_p, r.queries_q))
            }
        }
    }
}

/// Builds and verifies the fixture of a plan.
pub fn build_fixture(plan: &TrialPlan) -> Result<Fixture> {
    plan.spec.build(plan.k, plan.eps, derive_seed(plan.seed, FIXTURE_STREAM))
}

/// Runs `plan.trials` independent trials in parallel. Records come back in
/// trial order, and each depends only on `(plan, index)`.
pub fn run_trials(plan: &TrialPlan) -> Result<Vec<ExperimentRecord>> {
    plan.cfg.validate()?;
    let prepared = Prepared::new(plan.tester, build_fixture(plan)?)?;
    let hash = config_hash(&plan.cfg);
    let generator = plan.spec.to_string();
    (0..plan.trials)
        .into_par_iter()
        .map(|index| {
            let seed = plan.trial_seed(index);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = Instant::now();
            let (mut qp, mut qq) = (0, 0);
            let mut run = || -> Result<Verdict> {
                let (v, a, b) = prepared.run_once(plan, &mut rng)?;
                qp += a;
                qq += b;
                Ok(v)
            };
            let verdict = match plan.amplify_rounds {
                Some(rounds) => amplify(rounds, &mut run)?,
                None => run()?,
            };
            Ok(ExperimentRecord {
                generator: generator.clone(),
                k: plan.k,
                eps: plan.eps,
                delta: plan.delta,
                seed,
                verdict,
                queries_p: qp,
                queries_q: qq,
                wall_ms: plan.record_wall_time.then(|| start.elapsed().as_millis() as u64),
                config_hash: hash.clone(),
            })
        })
        .collect()
}

/// Runs the same plan at every `(k, eps)` pair, in order.
pub fn sweep(base: &TrialPlan, ks: &[usize], epss: &[f64]) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    for &k in ks {
        for &eps in epss {
            let plan = TrialPlan { k, eps, ..base.clone() };
            out.extend(run_trials(&plan)?);
        }
    }
    Ok(out)
}

/// Fraction of Diff verdicts.
pub fn diff_rate(records: &[ExperimentRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.verdict.is_diff()).count() as f64 / records.len() as f64
}

/// Median of total queries; the mean of the middle pair for even counts.
pub fn median_queries(records: &[ExperimentRecord]) -> f64 {
    let mut q: Vec<f64> = records.iter().map(|r| r.total_queries() as f64).collect();
    median(&mut q)
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Least-squares line `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Sum of squared residuals.
    pub ssr: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Config("line fit needs two or more paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("line fit needs distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(LineFit { intercept, slope, ssr })
}
