//! Batch experiments driven by a config file. Every run writes one CSV
//! table and a JSON manifest holding the resolved inputs, applied
//! defaults, derived constants and a verdict. Outputs depend only on the
//! config and the seed, not on the number of worker threads.

mod config;
mod run;

pub use config::{
    conservative_restriction, load, resolve_str, suggestions, validate_config, AppliedDefault, ExperimentConfig,
    ExperimentKind, GirsanovConfig, ReductionConfig, ValidationReport, DEFAULT_C2_GRID_POINTS, DEFAULT_DT,
    DEFAULT_ETA, DEFAULT_GAMMA, DEFAULT_HORIZON, DEFAULT_N_PATHS, DEFAULT_SCALES, KIND_NAMES, MANIFEST_NAME,
    REFERENCE_NAMES, SCHEMA_VERSION,
};
pub use run::{execute, read_manifest, run, write_outputs, Manifest, RunOutput, Table, Verdict};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config {path}: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error("{experiment}: {message}")]
    Module { experiment: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
