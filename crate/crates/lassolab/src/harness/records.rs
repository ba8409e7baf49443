//! Per-trial records and the campaign summary. One CSV row per
//! (trial, lambda) pair, `trials x points` rows exactly, in trial-major
//! order; the summary echoes the config so a results directory is
//! self-describing.

use super::config::{ExperimentConfig, ExperimentKind};
use crate::Result;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Invariant: `pass == certified && support_w <= sparsity_cap` plus any
/// experiment-specific clause (path shape, endpoint bounds); `pass` is never
/// true for an uncertified record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub lambda: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub support_w: usize,
    pub support_z: usize,
    pub sparsity_cap: usize,
    pub gamma: f64,
    pub gamma_mode: String,
    pub lambda_star: f64,
    pub residual_p: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub certified: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub version: String,
    pub records: usize,
    pub certified: usize,
    pub certified_passes: usize,
    pub all_certified_pass: bool,
    pub details: BTreeMap<String, serde_json::Value>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn new(
        config: &ExperimentConfig,
        records: Vec<TrialRecord>,
        details: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        let certified = records.iter().filter(|r| r.certified).count();
        let certified_passes = records.iter().filter(|r| r.certified && r.pass).count();
        let summary = Summary {
            experiment: config.experiment,
            version: env!("CARGO_PKG_VERSION").to_string(),
            records: records.len(),
            certified,
            certified_passes,
            all_certified_pass: certified_passes == certified,
            details,
            config: config.clone(),
        };
        ExperimentReport { records, summary }
    }

    /// Exit contract for the CLI: success iff every certified record passes.
    pub fn all_certified_pass(&self) -> bool {
        self.summary.all_certified_pass
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_records_csv(&dir.join("records.csv"), &self.records)?;
        write_summary_json(&dir.join("summary.json"), &self.summary)
    }
}

pub fn write_records_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_summary_json(path: &Path, summary: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
