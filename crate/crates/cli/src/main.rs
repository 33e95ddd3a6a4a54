//! `condtest`: run identity/closeness experiments and lemma checks.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use condtest::harness::lemmas::verify_lemmas;
use condtest::harness::{
    amplifier_rounds, diff_rate, median_queries, resolve_seed, run_trials, sweep, write_records, ExperimentRecord,
    GeneratorSpec, LemmaSnapshot, OutputFormat, TesterKind, TrialPlan,
};
use condtest::{Result, TesterConfig};

#[derive(Parser)]
#[command(name = "condtest", version, about = "Conditional-sampling identity and closeness testing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identity test against a known distribution.
    Identity(RunArgs),
    /// Closeness test between two unknown distributions.
    Closeness(RunArgs),
    /// Runs one tester over several domain sizes and gaps.
    Sweep(SweepArgs),
    /// Runs the numeric lemma sweeps.
    VerifyLemmas(LemmaArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Seed of the run; the CONDTEST_SEED environment variable overrides it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tester constants in `key = value` form.
    #[arg(long)]
    multipliers: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args, Clone)]
struct TrialArgs {
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Generator spec, e.g. `uniform`, `zipf(1)`, `two-bump`, `spike(0.5)`.
    #[arg(long = "gen", default_value = "uniform")]
    generator: String,
    /// Wrap each trial in the 1/60-threshold amplifier.
    #[arg(long)]
    amplify: bool,
    /// Amplifier rounds; defaults to ceil(c_amp * ln(1/delta)).
    #[arg(long)]
    rounds: Option<usize>,
    /// Leave wall_ms empty so reruns are byte-identical.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[command(flatten)]
    trial: TrialArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "closeness")]
    tester: String,
    /// Comma-separated domain sizes.
    #[arg(long, value_delimiter = ',', default_value = "256,4096,65536,1048576")]
    k: Vec<usize>,
    /// Comma-separated gaps.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    eps: Vec<f64>,
    #[command(flatten)]
    trial: TrialArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long, default_value_t = condtest::harness::lemmas::SNAPSHOT_SEED)]
    seed: u64,
    #[arg(long)]
    multipliers: Option<PathBuf>,
    /// Writes the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes the pinned-constants snapshot as JSON.
    #[arg(long)]
    write_snapshot: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<TesterConfig> {
    match path {
        Some(p) => TesterConfig::load(p),
        None => Ok(TesterConfig::default()),
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn plan(tester: TesterKind, k: usize, eps: f64, t: &TrialArgs, c: &Common) -> Result<TrialPlan> {
    let cfg = load_config(&c.multipliers)?;
    let spec: GeneratorSpec = t.generator.parse()?;
    let amplify_rounds = if t.amplify || t.rounds.is_some() {
        Some(t.rounds.unwrap_or_else(|| amplifier_rounds(cfg.c_amp, t.delta)))
    } else {
        None
    };
    Ok(TrialPlan {
        spec,
        tester,
        k,
        eps,
        delta: t.delta,
        trials: t.trials,
        seed: resolve_seed(c.seed)?,
        cfg,
        amplify_rounds,
        record_wall_time: !t.no_wall_time,
    })
}

fn emit(records: &[ExperimentRecord], c: &Common) -> Result<()> {
    let format: OutputFormat = c.format.parse()?;
    let mut out = open_out(&c.out)?;
    write_records(records, format, &mut out)?;
    out.flush()?;
    eprintln!(
        "{} trials, diff rate {:.4}, median queries {:.4e}",
        records.len(),
        diff_rate(records),
        median_queries(records)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Identity(a) => {
            let p = plan(TesterKind::Identity, a.k, a.eps, &a.trial, &a.common)?;
            emit(&run_trials(&p)?, &a.common)?;
        }
        Command::Closeness(a) => {
            let p = plan(TesterKind::Closeness, a.k, a.eps, &a.trial, &a.common)?;
            emit(&run_trials(&p)?, &a.common)?;
        }
        Command::Sweep(a) => {
            let tester: TesterKind = a.tester.parse()?;
            let base = plan(tester, a.k[0], a.eps[0], &a.trial, &a.common)?;
            let records = sweep(&base, &a.k, &a.eps)?;
            for &k in &a.k {
                for &eps in &a.eps {
                    let group: Vec<_> = records.iter().filter(|r| r.k == k && r.eps == eps).cloned().collect();
                    eprintln!("k={k} eps={eps}: median queries {:.4e}", median_queries(&group));
                }
            }
            emit(&records, &a.common)?;
        }
        Command::VerifyLemmas(a) => {
            let cfg = load_config(&a.multipliers)?;
            let report = verify_lemmas(resolve_seed(a.seed)?, &cfg)?;
            print!("{}", report.render());
            if let Some(path) = &a.out {
                serde_json::to_writer_pretty(File::create(path)?, &report)?;
            }
            if let Some(path) = &a.write_snapshot {
                let mut f = File::create(path)?;
                serde_json::to_writer_pretty(&mut f, &LemmaSnapshot::from_report(&report))?;
                writeln!(f)?;
            }
            println!("{}", if report.passed { "all checks passed" } else { "verification FAILED" });
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
