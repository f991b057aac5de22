//! Experiment orchestration for the plasticity-loss laboratory.
//!
//! The library half of the `plastlab` binary: parse a TOML experiment
//! config (or a named built-in preset), run the continual-learning loop
//! over a stage stream with optional mitigation hooks, and emit metrics
//! as CSV/JSONL plus an SVG chart.  A separate subcommand drives the
//! quadratic-loss convergence suite from `plastlab-core`.

pub mod config;
pub mod emit;
pub mod plot;
pub mod presets;
pub mod runner;
pub mod theory_cmd;

use std::path::PathBuf;

/// Errors surfaced by the runner and emitters.  Config problems carry the
/// offending key; IO problems carry the path.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("failed to parse config: {0}")]
    ConfigSyntax(String),
    #[error("unknown preset `{0}` (run `plastlab presets` for the list)")]
    UnknownPreset(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] plastlab_core::CoreError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn config(key: &str, msg: impl Into<String>) -> Self {
        CliError::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
