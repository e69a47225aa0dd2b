//! Persistence, the session runtime, the HTTP API and the operator CLI.

pub mod api;
pub mod cli;
pub mod providers;
pub mod render;
pub mod runtime;
pub mod store;

use std::path::PathBuf;

use thiserror::Error;

use ircopilot_bench::BenchError;
use ircopilot_core::engine::EngineError;
use ircopilot_core::provider::ProviderError;

pub use runtime::{Input, Services, SessionHandle, SessionView};
pub use store::{SessionLog, SessionManifest, SessionStatus, Store};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` already exists")]
    SessionExists(String),
    #[error("session `{0}` is not running in this process")]
    NotLive(String),
    #[error("storage failure at {path}: {source}")]
    Storage { path: PathBuf, source: std::io::Error },
    #[error("event log is corrupt: {0}")]
    CorruptLog(String),
    #[error("illegal status change {from:?} -> {to:?}")]
    StatusTransition { from: SessionStatus, to: SessionStatus },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("session worker stopped")]
    WorkerGone,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

impl ServiceError {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Storage { path: path.into(), source }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
