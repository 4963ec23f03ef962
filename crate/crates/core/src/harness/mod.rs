//! Run configs, the training loop, and the artifact writers behind the
//! `sharpgeo` CLI.
//!
//! Artifacts in the output directory: `checkpoint.sgeo` (+ `.json`
//! sidecar), `metrics.jsonl`, `report.json`, `landscape.csv` (+
//! `landscape.json`), `attack.json` and `sweep.json`.

pub mod commands;
pub mod config;
pub mod train;

pub use commands::{cmd_attack, cmd_diagnose, cmd_landscape, cmd_sweep, cmd_train, evaluation_subset, SweepRow, SweepTable};
pub use config::{DataConfig, LandscapeConfig, ModelChoice, RunConfig, SweepConfig, SweepParam, SyntheticConfig};
pub use train::{
    accuracy, load_checkpoint, read_metrics, save_checkpoint, train_run, MetricsRecord, TrainOutcome, MAX_NONFINITE_STEPS,
};

use crate::error::Error;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Process exit code for an error: 1 config, 2 numerical divergence, 3 I/O
/// (including malformed artifact files).
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Validation(_) => EXIT_IO,
        Error::NonFinite(_) | Error::NonFiniteProbe { .. } | Error::Collapsed | Error::DegenerateGradient(_) => {
            EXIT_DIVERGED
        }
        _ => EXIT_CONFIG,
    }
}
