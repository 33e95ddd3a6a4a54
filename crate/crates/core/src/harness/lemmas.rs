//! Lemma verification runs and the pinned snapshot of fitted constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trials::derive_seed;
use crate::config::TesterConfig;
use crate::error::Result;
use crate::reference::{
    chi2_binary, chilow_sweep, exp_approx_sweep, fitted_c, moment_table, required_c_te, Chi2Fn, MomentRow,
    SweepReport,
};

pub const CHILOW_CASES: usize = 10_000;
pub const EXP_APPROX_CASES: usize = 1_000;
pub const MOMENT_TRIALS: usize = 100_000;
/// Mean agreement tolerance of the moment table, in standard errors.
pub const MOMENT_SIGMAS: f64 = 5.0;

/// Per-sweep seeds derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSeeds {
    pub chilow: u64,
    pub exp_approx: u64,
    pub moments: u64,
}

impl SweepSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self { chilow: derive_seed(seed, 1), exp_approx: derive_seed(seed, 2), moments: derive_seed(seed, 3) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub seed: u64,
    pub seeds: SweepSeeds,
    pub chilow: SweepReport,
    pub exp_approx: SweepReport,
    pub moments: Vec<MomentRow>,
    /// Rows whose Monte-Carlo mean misses the closed form.
    pub moment_failures: usize,
    pub fitted_c: f64,
    pub required_c_te: f64,
    pub c_te: f64,
    pub passed: bool,
}

impl LemmaReport {
    /// Human-readable summary, one line per check plus the moment table.
    pub fn render(&self) -> String {
        let status = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut s = format!("seed {}\n", self.seed);
        s += &format!(
            "{} chilow: {} cases, {} applicable, {} violations\n",
            status(self.chilow.passed()),
            self.chilow.checked,
            self.chilow.applicable,
            self.chilow.violations
        );
        s += &format!(
            "{} exp_approx: {} pairs, {} violations\n",
            status(self.exp_approx.passed()),
            self.exp_approx.checked,
            self.exp_approx.violations
        );
        s += &format!("{} moments: {} rows off by more than {MOMENT_SIGMAS} sigma\n", status(self.moment_failures == 0), self.moment_failures);
        s += &format!(
            "{} fitted c = {:.4}; batch constant {} vs required {:.1}\n",
            status(self.c_te >= self.required_c_te),
            self.fitted_c,
            self.c_te,
            self.required_c_te
        );
        s += "lam1 lam2 mean expected std_err var var_core\n";
        for r in &self.moments {
            s += &format!(
                "{:>4} {:>4} {:>9.4} {:>9.4} {:>8.4} {:>9.4} {:>9.4}\n",
                r.lam1, r.lam2, r.mean, r.expected_mean, r.std_error, r.var, r.var_core
            );
        }
        s
    }
}

pub fn verify_lemmas(seed: u64, cfg: &TesterConfig) -> Result<LemmaReport> {
    verify_lemmas_with(seed, cfg, chi2_binary)
}

/// As [`verify_lemmas`], with the chi-squared closed form swapped out so the
/// checker itself can be mutation-tested.
pub fn verify_lemmas_with(seed: u64, cfg: &TesterConfig, chi2: Chi2Fn) -> Result<LemmaReport> {
    let seeds = SweepSeeds::from_seed(seed);
    let chilow = chilow_sweep(CHILOW_CASES, chi2, &mut ChaCha8Rng::seed_from_u64(seeds.chilow));
    let exp_approx = exp_approx_sweep(EXP_APPROX_CASES, &mut ChaCha8Rng::seed_from_u64(seeds.exp_approx))?;
    let moments = moment_table(MOMENT_TRIALS, &mut ChaCha8Rng::seed_from_u64(seeds.moments))?;
    let moment_failures = moments.iter().filter(|r| !r.mean_within(MOMENT_SIGMAS)).count();
    let c = fitted_c(&moments);
    let needed = required_c_te(c);
    let passed = chilow.passed() && exp_approx.passed() && moment_failures == 0 && cfg.c_te >= needed;
    Ok(LemmaReport {
        seed,
        seeds,
        chilow,
        exp_approx,
        moments,
        moment_failures,
        fitted_c: c,
        required_c_te: needed,
        c_te: cfg.c_te,
        passed,
    })
}

/// Pinned results of the default verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSnapshot {
    pub seed: u64,
    pub seeds: SweepSeeds,
    pub moment_trials: usize,
    pub fitted_c: f64,
    pub required_c_te: f64,
    pub default_c_te: f64,
    pub chilow_applicable: usize,
    pub exp_approx_pairs: usize,
}

/// Seed of the pinned run.
pub const SNAPSHOT_SEED: u64 = 20_240_601;

/// The snapshot committed with the crate.
pub const SNAPSHOT_JSON: &str = include_str!("../../data/lemma_snapshot.json");

impl LemmaSnapshot {
    pub fn from_report(r: &LemmaReport) -> Self {
        Self {
            seed: r.seed,
            seeds: r.seeds,
            moment_trials: MOMENT_TRIALS,
            fitted_c: r.fitted_c,
            required_c_te: r.required_c_te,
            default_c_te: r.c_te,
            chilow_applicable: r.chilow.applicable,
            exp_approx_pairs: r.exp_approx.checked,
        }
    }

    pub fn pinned() -> Result<Self> {
        Ok(serde_json::from_str(SNAPSHOT_JSON)?)
    }
}
