//! Benchmark harness: suite documents, difficulty scoring, scripted replay
//! through the engine, and the efficiency metrics reported per method.

pub mod difficulty;
pub mod metrics;
pub mod replay;
pub mod report;
pub mod suite;
pub mod taxonomy;

use std::path::PathBuf;

use ircopilot_core::engine::EngineError;
use thiserror::Error;

pub use difficulty::{score_difficulty, Difficulty, DifficultyScore, ScoringMethod};
pub use metrics::{fmt_rate, judge_success, metrics, round_half_up, AttemptRecord, Judgement, Measure, MethodMetrics};
pub use replay::{replay, ReplayOutcome, ScriptedExecutor, TrialRun, TrialSettings};
pub use report::{completion_rates, BenchReport, CompletionRate, CompletionRow, TaskReport};
pub use suite::{load_suite, load_task, sample_suite_dir, BenchTask, Grading, ScenarioScript, SubTask, Suite};
pub use taxonomy::{category_phase, classify_failure, FailureReason, Phase, CATEGORIES};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("task {task}: field `{field}`: {detail}")]
    SchemaViolation { task: String, field: String, detail: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid JSON in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("unknown failure label `{0}`")]
    UnknownFailureLabel(String),
    #[error("difficulty score {0} is outside 1..10")]
    OutOfRangeScore(u8),
    #[error("difficulty needs at least 3 scores, got {0}")]
    TooFewScores(usize),
    #[error("no attempt records")]
    EmptyRecords,
    #[error("records mix task `{expected}` with `{found}`")]
    MixedTask { expected: String, found: String },
    #[error("inconsistent attempt record: {0}")]
    InconsistentRecord(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl BenchError {
    pub(crate) fn schema(task: &str, field: impl Into<String>, detail: impl Into<String>) -> Self {
        BenchError::SchemaViolation { task: task.to_string(), field: field.into(), detail: detail.into() }
    }
}
