//! Reproducible experiment campaigns over random instances: configuration,
//! per-trial records, and the runners that tie instance generation, solving,
//! certification, and isometry measurement together. Output is a CSV of
//! records plus a JSON summary, byte-identical across runs of the same
//! config and seed.

mod config;
mod experiments;
mod records;

pub use config::{ExperimentConfig, ExperimentKind, LambdaGridSpec};
pub use experiments::run;
pub use records::{
    write_records_csv, write_summary_json, ExperimentReport, Summary, TrialRecord,
};
