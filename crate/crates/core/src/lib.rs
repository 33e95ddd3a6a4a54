//! Identity and closeness testing of discrete distributions with
//! conditional-sampling (COND) oracles.
//!
//! The crate is organized bottom-up:
//!
//! - [`dist`] holds exact distributions and induced distributions.
//! - [`oracle`] simulates query-counted conditional sampling.
//! - [`equality`] is the Poissonized binary equality test.
//! - [`finder`] produces candidate distinguishing elements.
//! - [`identity`] and [`closeness`] are the two testers.
//! - [`reference`] holds closed-form and Monte-Carlo checkers.
//! - [`harness`] runs reproducible experiments on top of all of it.

pub mod closeness;
pub mod config;
pub mod dist;
pub mod equality;
pub mod error;
pub mod finder;
pub mod harness;
pub mod identity;
pub mod oracle;
pub mod reference;

pub use config::TesterConfig;
pub use dist::{Distribution, Partition};
pub use error::{Error, Result};
pub use oracle::{CondAccess, CondOracle, Count, MixtureOracle};

use serde::{Deserialize, Serialize};

/// Outcome of any tester.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Same,
    Diff,
}

impl Verdict {
    pub fn is_diff(self) -> bool {
        self == Verdict::Diff
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Same => "same",
            Verdict::Diff => "diff",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
