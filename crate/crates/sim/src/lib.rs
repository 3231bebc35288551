//! Synthetic users and systems driving the platform through its HTTP APIs,
//! to check that mean normalized reward ranks systems by true quality.

pub mod agents;
pub mod behavior;
pub mod config;
pub mod experiment;
pub mod http;
pub mod population;
pub mod report;

pub use config::{Quality, SimConfig, SystemSpec};
pub use experiment::{run_experiment, run_seeds, win_counts, ExperimentResult, SystemResult};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("api: {0}")]
    Api(String),
    #[error(transparent)]
    Core(#[from] litlab_core::Error),
}
