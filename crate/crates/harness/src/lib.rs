//! Config-driven experiment harness: scenario generators, tabular
//! pipelines, the run/sweep/validate commands, and result persistence.

pub mod config;
pub mod ingest;
pub mod lemmas;
pub mod runner;
pub mod scenarios;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cstrat_core::CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
