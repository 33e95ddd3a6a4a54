//! Acceptance suite. Each test checks one criterion and prints a single
//! PASS/FAIL line straight to stderr, so the lines show up even when test
//! output is captured.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use condtest::equality::{test_equal, BernoulliSource, EqualityParams};
use condtest::finder::{find_element, tuple_quality, HeavinessProfile};
use condtest::harness::lemmas::{verify_lemmas, SNAPSHOT_SEED};
use condtest::harness::records::write_csv;
use condtest::harness::{
    amplifier_rounds, derive_seed, diff_rate, fit_line, median_queries, run_trials, GeneratorSpec, TesterKind,
    TrialPlan,
};
use condtest::{CondOracle, Distribution, TesterConfig, Verdict};

fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] {status} criterion {id} ({name}): {detail} [{:.1}s]", elapsed.as_secs_f64());
}

/// `target - 3 sigma` for a binomial rate over `n` runs.
fn floor_3sigma(target: f64, n: usize) -> f64 {
    target - 3.0 * (target * (1.0 - target) / n as f64).sqrt()
}

fn plan(spec: &str, tester: TesterKind, k: usize, eps: f64, delta: f64, trials: usize, seed: u64) -> TrialPlan {
    let mut p = TrialPlan::new(spec.parse().unwrap(), tester, k, eps, delta);
    p.trials = trials;
    p.seed = seed;
    p.record_wall_time = false;
    p
}

fn same_rate(records: &[condtest::harness::ExperimentRecord]) -> f64 {
    1.0 - diff_rate(records)
}

#[test]
fn criterion_1_equality_contract() {
    let start = Instant::now();
    let runs = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let params = EqualityParams::new(0.04, 0.1, TesterConfig::default().c_te).unwrap();
    let fair = BernoulliSource::new(0.5).unwrap();
    let shifted = BernoulliSource::new(0.7).unwrap();
    let same = (0..runs).filter(|_| test_equal(&fair, &fair, &params, &mut rng).unwrap() == Verdict::Same).count();
    let diff = (0..runs).filter(|_| test_equal(&fair, &shifted, &params, &mut rng).unwrap().is_diff()).count();
    let (same_rate, diff_rate) = (same as f64 / runs as f64, diff as f64 / runs as f64);
    let floor = floor_3sigma(0.9, runs);
    let elapsed = start.elapsed();
    let pass = same_rate >= floor && diff_rate >= floor && elapsed < Duration::from_secs(60);
    report(
        1,
        "equality test",
        pass,
        &format!("same rate {same_rate:.3}, diff rate {diff_rate:.3}, floor {floor:.3}"),
        elapsed,
    );
    assert!(pass);
}

/// Fraction of `runs` candidate lists holding a good tuple for `weights`.
fn finder_success(p: &Distribution, weights: &[f64], eps: f64, runs: usize, seed: u64) -> f64 {
    let profile = HeavinessProfile::new(p);
    let oracle = CondOracle::from_distribution(p.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..runs)
        .filter(|_| {
            find_element(&oracle, eps, TesterConfig::default().log_base, &mut rng)
                .unwrap()
                .iter()
                .any(|t| tuple_quality(&profile, t, weights))
        })
        .count();
    hits as f64 / runs as f64
}

/// `max(0, (p(i) - q(i)) / p(i))`, the weights that make `p`'s excess count.
fn excess_weights(p: &Distribution, q: &Distribution) -> Vec<f64> {
    p.probs().iter().zip(q.probs()).map(|(a, b)| if *a > 0.0 { ((a - b) / a).max(0.0) } else { 0.0 }).collect()
}

#[test]
fn criterion_2_find_element_contract() {
    let start = Instant::now();
    let (eps, k, runs) = (0.5, 1000, 10_000);
    let uniform = Distribution::uniform(k).unwrap();
    let flat = vec![eps / 4.0; k];
    let spike = GeneratorSpec::Spike(None).build(k, eps, 0).unwrap();
    let bump = GeneratorSpec::TwoBump(None).build(k, eps, 0).unwrap();
    let fixtures = [
        ("uniform-a", uniform.clone(), flat),
        ("spike", spike.p.clone(), excess_weights(&spike.p, &spike.q)),
        ("two-bump", bump.p.clone(), excess_weights(&bump.p, &bump.q)),
    ];
    let floor = floor_3sigma(0.2, runs);
    let mut pass = true;
    let mut detail = Vec::new();
    for (idx, (name, p, a)) in fixtures.iter().enumerate() {
        let mass: f64 = p.probs().iter().zip(a).map(|(x, w)| x * w).sum();
        assert!(mass >= eps / 4.0 - 1e-12, "{name} fixture has sum p*a = {mass}");
        let rate = finder_success(p, a, eps, runs, 200 + idx as u64);
        pass &= rate >= floor;
        detail.push(format!("{name} {rate:.3}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    report(2, "find-element", pass, &format!("{} (floor {floor:.3})", detail.join(", ")), elapsed);
    assert!(pass);
}

#[test]
fn criterion_3_identity_contract() {
    let start = Instant::now();
    let (k, eps, delta) = (1000, 0.5, 0.2);
    let null = run_trials(&plan("zipf(1)", TesterKind::Identity, k, eps, delta, 200, 301)).unwrap();
    let null_rate = same_rate(&null);
    let null_floor = floor_3sigma(1.0 - delta, 200);
    let mut pass = null_rate >= null_floor;
    let mut detail = vec![format!("null same {null_rate:.3} (floor {null_floor:.3})")];
    let raw_floor = floor_3sigma(1.0 / 30.0, 200);
    let rounds = amplifier_rounds(TesterConfig::default().c_amp, delta);
    for (idx, spec) in ["two-bump", "spike"].into_iter().enumerate() {
        let raw = diff_rate(&run_trials(&plan(spec, TesterKind::Identity, k, eps, delta, 200, 310 + idx as u64)).unwrap());
        let mut amp = plan(spec, TesterKind::Identity, k, eps, delta, 100, 320 + idx as u64);
        amp.amplify_rounds = Some(rounds);
        let amplified = diff_rate(&run_trials(&amp).unwrap());
        pass &= raw >= raw_floor && amplified >= 0.9;
        detail.push(format!("{spec} raw {raw:.3} amplified {amplified:.3}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    report(3, "identity test", pass, &format!("{} (raw floor {raw_floor:.4})", detail.join(", ")), elapsed);
    assert!(pass);
}

#[test]
fn criterion_4_identity_queries_flat_in_k() {
    let start = Instant::now();
    let medians: Vec<f64> = [100usize, 10_000, 1_000_000]
        .iter()
        .map(|&k| median_queries(&run_trials(&plan("zipf(1)", TesterKind::Identity, k, 0.5, 0.2, 30, 401)).unwrap()))
        .collect();
    let hi = medians.iter().cloned().fold(f64::MIN, f64::max);
    let lo = medians.iter().cloned().fold(f64::MAX, f64::min);
    let elapsed = start.elapsed();
    let pass = hi / lo <= 1.5 && elapsed < Duration::from_secs(600);
    report(
        4,
        "identity k-independence",
        pass,
        &format!("medians {:.3e} / {:.3e} / {:.3e}, spread {:.3}", medians[0], medians[1], medians[2], hi / lo),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_5_identity_eps_scaling() {
    let start = Instant::now();
    let delta = 0.2;
    let epss = [1.0, 0.5, 0.25];
    // Normalize by eps^-2 and the log(1/(eps delta)) factor of the bound.
    let normalized: Vec<f64> = epss
        .iter()
        .map(|&eps| {
            let m = median_queries(&run_trials(&plan("zipf(1)", TesterKind::Identity, 1000, eps, delta, 30, 501)).unwrap());
            m * eps * eps / (1.0 / (eps * delta)).ln()
        })
        .collect();
    // Least-squares constant in log space is the geometric mean.
    let c = (normalized.iter().map(|v| v.ln()).sum::<f64>() / normalized.len() as f64).exp();
    let worst = normalized.iter().map(|v| (v / c).max(c / v)).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst <= 2.0 && elapsed < Duration::from_secs(900);
    report(
        5,
        "identity eps scaling",
        pass,
        &format!("c = {c:.3e}, worst ratio to fit {worst:.3}"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_6_closeness_contract() {
    let start = Instant::now();
    let (k, eps, delta) = (4096, 0.5, 0.2);
    let null = run_trials(&plan("zipf(1)", TesterKind::Closeness, k, eps, delta, 100, 601)).unwrap();
    let null_rate = same_rate(&null);
    let null_floor = floor_3sigma(1.0 - delta, 100);
    let raw = diff_rate(&run_trials(&plan("two-bump", TesterKind::Closeness, k, eps, delta, 100, 602)).unwrap());
    let raw_floor = floor_3sigma(1.0 / 30.0, 100);
    let mut amp = plan("two-bump", TesterKind::Closeness, k, eps, delta, 50, 603);
    amp.amplify_rounds = Some(amplifier_rounds(TesterConfig::default().c_amp, delta));
    let amplified = diff_rate(&run_trials(&amp).unwrap());
    let elapsed = start.elapsed();
    let pass = null_rate >= null_floor && raw >= raw_floor && amplified >= 0.9 && elapsed < Duration::from_secs(3600);
    report(
        6,
        "closeness test",
        pass,
        &format!(
            "null same {null_rate:.3} (floor {null_floor:.3}), two-bump raw {raw:.3} (floor {raw_floor:.4}), amplified {amplified:.3}"
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_7_closeness_loglog_shape() {
    let start = Instant::now();
    let ks = [1usize << 8, 1 << 12, 1 << 16, 1 << 20];
    let medians: Vec<f64> = ks
        .iter()
        .map(|&k| median_queries(&run_trials(&plan("zipf(1)", TesterKind::Closeness, k, 0.5, 0.2, 30, 701)).unwrap()))
        .collect();
    let log_k: Vec<f64> = ks.iter().map(|&k| (k as f64).log2()).collect();
    let loglog_k: Vec<f64> = log_k.iter().map(|v| v.log2()).collect();
    let fit_loglog = fit_line(&loglog_k, &medians).unwrap();
    let fit_log = fit_line(&log_k, &medians).unwrap();
    let elapsed = start.elapsed();
    let pass = fit_loglog.ssr < fit_log.ssr && elapsed < Duration::from_secs(3600);
    report(
        7,
        "closeness log log k shape",
        pass,
        &format!(
            "medians {}; residual ssr log log k {:.4e} vs log k {:.4e}",
            medians.iter().map(|m| format!("{m:.4e}")).collect::<Vec<_>>().join(" "),
            fit_loglog.ssr,
            fit_log.ssr
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_8_lemma_sweeps() {
    let start = Instant::now();
    let r = verify_lemmas(SNAPSHOT_SEED, &TesterConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let pass = r.chilow.passed()
        && r.chilow.checked == 10_000
        && r.exp_approx.passed()
        && r.exp_approx.checked == 1_000
        && r.moment_failures == 0
        && elapsed < Duration::from_secs(300);
    report(
        8,
        "lemma sweeps",
        pass,
        &format!(
            "chilow {} violations in {} applicable, exp_approx {} violations, {} moment rows off, fitted c {:.3}",
            r.chilow.violations, r.chilow.applicable, r.exp_approx.violations, r.moment_failures, r.fitted_c
        ),
        elapsed,
    );
    assert!(pass);
}

fn csv_bytes(p: &TrialPlan) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&run_trials(p).unwrap(), &mut buf).unwrap();
    buf
}

#[test]
fn criterion_9_determinism() {
    let start = Instant::now();
    let plans = [
        plan("zipf(1)", TesterKind::Identity, 500, 0.5, 0.2, 20, 901),
        plan("two-bump", TesterKind::Identity, 500, 0.5, 0.2, 20, 902),
        plan("zipf(1)", TesterKind::Closeness, 1024, 0.5, 0.2, 10, 903),
        plan("spike", TesterKind::Closeness, 1024, 0.5, 0.2, 10, 904),
    ];
    let mut pass = true;
    for p in &plans {
        let (a, b) = (csv_bytes(p), csv_bytes(p));
        pass &= a == b;
        let other = TrialPlan { seed: derive_seed(p.seed, 1), ..p.clone() };
        pass &= csv_bytes(&other) != a;
    }
    let elapsed = start.elapsed();
    report(9, "determinism", pass, &format!("{} plans rerun byte-for-byte", plans.len()), elapsed);
    assert!(pass);
}
