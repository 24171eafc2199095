//! Config-driven parameter sweeps, CSV output with provenance, and the
//! cross-check suite behind `stresspop verify`.

mod config;
mod output;
mod sweep;
mod verify;

use thiserror::Error;

use crate::error::ModelError;

pub use config::{
    Axis, AxisName, ExperimentConfig, MethodConfig, ModelConfig, OutputConfig, SimMode, Spacing, SweepSpec,
};
pub use output::{format_float, render_csv, write_outputs, RunStatus};
pub use sweep::{cell_seed, run_sweep, CellValue, Row, SweepResult, Table};
pub use verify::{verify_suite, CheckResult, Level, VerifyOptions, VerifyReport};

/// Library version stamped into every output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Compute(#[from] ModelError),
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("refusing to overwrite {path}: {reason}")]
    Conflict { path: String, reason: String },
}

impl ExperimentError {
    /// Process exit code: 1 for config and output conflicts, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Conflict { .. } => 1,
            Self::Compute(_) | Self::Io { .. } => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }
}
