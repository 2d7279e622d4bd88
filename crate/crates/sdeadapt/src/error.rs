//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building problems, configuring
/// strategies, simulating, or writing reports.
#[derive(Debug, Error)]
pub enum Error {
    /// A problem name not present in the registry.
    #[error("unknown problem '{name}'; valid problems are {valid}")]
    UnknownProblem { name: String, valid: String },

    /// A parameter key the target problem or driver does not accept.
    #[error("unknown parameter '{key}' for '{context}'")]
    UnknownParameter { key: String, context: String },

    /// A parameter value outside its admissible range.
    #[error("invalid parameter {key}={value} for '{context}': {reason}")]
    InvalidParameter {
        key: String,
        value: f64,
        context: String,
        reason: String,
    },

    /// A strategy configuration that fails validation.
    #[error("invalid strategy configuration: {0}")]
    InvalidStrategy(String),

    /// The state or drift stopped being finite mid-simulation.
    #[error("non-finite state at t={t} after {steps} steps")]
    NonFinite { t: f64, steps: usize },

    /// Malformed config file contents.
    #[error("config parse error at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    /// Filesystem and formatting failures while writing reports.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON serialisation failures while writing mirrors.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
