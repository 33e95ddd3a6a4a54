//! Tunable constants of the testers.
//!
//! Every count the analysis hides inside `O(·)` is a field here. Files use
//! a flat `key = value` form (a TOML subset); bare words are accepted for
//! string values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logarithm used in the candidate heaviness schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    pub fn ln_scale(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Two => std::f64::consts::LN_2,
        }
    }

    pub fn log(self, x: f64) -> f64 {
        x.ln() / self.ln_scale()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TesterConfig {
    /// Batch mean of the equality test is `ceil(c_te / chi_bound)`.
    pub c_te: f64,
    /// Stop the equality majority vote once its outcome is fixed.
    pub early_stop: bool,
    pub log_base: LogBase,
    /// Charge the identity tester for drawing candidates from the known side.
    pub charge_known_find: bool,
    /// Share one sample pool across all candidates in the tail-mass test.
    pub share_mass_test_samples: bool,
    /// Scales the search band `gamma`.
    pub gamma_scale: f64,
    /// Scales the number of candidate sets per assisted test.
    pub set_count_scale: f64,
    pub n1_mult: f64,
    pub n2_mult: f64,
    pub n3_mult: f64,
    pub n4_mult: f64,
    /// Amplifier rounds are `ceil(c_amp * ln(1/delta))`.
    pub c_amp: f64,
}

impl Default for TesterConfig {
    fn default() -> Self {
        Self {
            c_te: 200.0,
            early_stop: true,
            log_base: LogBase::Natural,
            charge_known_find: false,
            share_mass_test_samples: true,
            gamma_scale: 0.01,
            set_count_scale: 1e-8,
            n1_mult: 1e-4,
            n2_mult: 24.0,
            n3_mult: 4.0,
            n4_mult: 0.005,
            c_amp: 60.0,
        }
    }
}

impl TesterConfig {
    /// Constants exactly as the analysis states them (every multiplier 1).
    pub fn unscaled() -> Self {
        Self {
            gamma_scale: 1.0,
            set_count_scale: 1.0,
            n1_mult: 1.0,
            n2_mult: 1.0,
            n3_mult: 1.0,
            n4_mult: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_te", self.c_te),
            ("gamma_scale", self.gamma_scale),
            ("set_count_scale", self.set_count_scale),
            ("n1_mult", self.n1_mult),
            ("n2_mult", self.n2_mult),
            ("n3_mult", self.n3_mult),
            ("n4_mult", self.n4_mult),
            ("c_amp", self.c_amp),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// Parses the `key = value` multipliers format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut normalized = String::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key = value, got {trimmed:?}")))?;
            let value = value.trim();
            let is_literal = value.parse::<f64>().is_ok()
                || value == "true"
                || value == "false"
                || value.starts_with('"');
            if is_literal {
                normalized.push_str(&format!("{} = {}\n", key.trim(), value));
            } else {
                normalized.push_str(&format!("{} = \"{}\"\n", key.trim(), value));
            }
        }
        let cfg: TesterConfig = toml::from_str(&normalized).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical `key = value` rendering, used for hashing and echoing.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
