//! Experiment harness: generators, trial loops, amplification, records and
//! lemma verification.

pub mod generators;
pub mod lemmas;
pub mod records;
pub mod trials;

pub use generators::{Fixture, GeneratorSpec, Relation};
pub use lemmas::{verify_lemmas, LemmaReport, LemmaSnapshot};
pub use records::{config_hash, write_records, ExperimentRecord, OutputFormat};
pub use trials::{
    amplifier_rounds, amplify, derive_seed, diff_rate, fit_line, median_queries, resolve_seed, run_trials, sweep,
    LineFit, TesterKind, TrialPlan,
};
