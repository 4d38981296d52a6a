//! Config-driven experiment runner for the `fedtraffic` library.
//!
//! - [`config`]: the TOML experiment format and its validation
//! - [`synthetic`]: a parametric generator of base-station traces
//! - [`runner`]: executes a config and writes per-run artifacts and summaries
//! - [`report`]: merges summaries into plot-ready long-format CSV

pub mod config;
pub mod report;
pub mod runner;
pub mod synthetic;

use thiserror::Error;

pub use config::{ExperimentConfig, Setting};
pub use report::{emit_comparison, emit_plot_data};
pub use runner::{run_experiment, ExperimentSummary, FinalMetrics};
pub use synthetic::{generate_synthetic, Days, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Serialize(#[from] toml::ser::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] fedtraffic::dataio::DataError),
    #[error(transparent)]
    Federation(#[from] fedtraffic::federation::FederationError),
    #[error(transparent)]
    Model(#[from] fedtraffic::neuralnet::ModelError),
    #[error(transparent)]
    Metric(#[from] fedtraffic::metrics::MetricError),
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
    #[error("{0}")]
    Invalid(String),
}

impl RunError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.display().to_string(), source }
    }
}
