//! Trial records and their CSV/JSON forms.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TesterConfig;
use crate::error::{Error, Result};
use crate::oracle::Count;
use crate::Verdict;

/// Column order of the CSV output.
pub const CSV_HEADER: [&str; 9] = ["generator", "k", "eps", "delta", "seed", "verdict", "queries_p", "queries_q", "wall_ms"];

/// One trial. The JSON form carries the same fields as the CSV plus the
/// config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub generator: String,
    pub k: usize,
    pub eps: f64,
    pub delta: f64,
    /// Seed of this trial's generator stream.
    pub seed: u64,
    pub verdict: Verdict,
    pub queries_p: Count,
    pub queries_q: Count,
    /// Absent when wall time recording is off.
    pub wall_ms: Option<u64>,
    #[serde(default)]
    pub config_hash: String,
}

impl ExperimentRecord {
    pub fn total_queries(&self) -> Count {
        self.queries_p + self.queries_q
    }

    fn csv_row(&self) -> [String; 9] {
        [
            self.generator.clone(),
            self.k.to_string(),
            self.eps.to_string(),
            self.delta.to_string(),
            self.seed.to_string(),
            self.verdict.to_string(),
            self.queries_p.to_string(),
            self.queries_q.to_string(),
            self.wall_ms.map(|w| w.to_string()).unwrap_or_default(),
        ]
    }
}

/// Short SHA-256 fingerprint of the canonical config text.
pub fn config_hash(cfg: &TesterConfig) -> String {
    let digest = Sha256::digest(cfg.to_text().as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(records: &[ExperimentRecord], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, records)?;
    writeln!(out)?;
    Ok(())
}

pub fn write_records<W: Write>(records: &[ExperimentRecord], format: OutputFormat, out: W) -> Result<()> {
    match format {
        OutputFormat::Csv => write_csv(records, out),
        OutputFormat::Json => write_json(records, out),
    }
}

/// Reads back a CSV written by [`write_csv`]. The config hash is not part
/// of the CSV and comes back empty.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    let parse_err = |field: &str| Error::Config(format!("bad CSV field {field}"));
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        out.push(ExperimentRecord {
            generator: get(0).to_string(),
            k: get(1).parse().map_err(|_| parse_err("k"))?,
            eps: get(2).parse().map_err(|_| parse_err("eps"))?,
            delta: get(3).parse().map_err(|_| parse_err("delta"))?,
            seed: get(4).parse().map_err(|_| parse_err("seed"))?,
            verdict: match get(5) {
                "same" => Verdict::Same,
                "diff" => Verdict::Diff,
                _ => return Err(parse_err("verdict")),
            },
            queries_p: get(6).parse().map_err(|_| parse_err("queries_p"))?,
            queries_q: get(7).parse().map_err(|_| parse_err("queries_q"))?,
            wall_ms: match get(8) {
                "" => None,
                w => Some(w.parse().map_err(|_| parse_err("wall_ms"))?),
            },
            config_hash: String::new(),
        });
    }
    Ok(out)
}
