//! Batch runner for excursion-set experiments: config, dispatch, outputs and verdicts.

pub mod check;
pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use check::{check, check_rows, CriterionVerdict, Verdict};
pub use config::{ExperimentConfig, Suite};
pub use error::{HarnessError, Result};
pub use output::RunManifest;
pub use run::{resolve_workers, run, MANIFEST};
