//! The reasoning/action/reflection loop.
//!
//! Every state change is an [`Event`] folded by [`EngineState::apply`], so a
//! persisted log replays to the exact live state.

mod events;
mod run;
mod state;
mod text;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyst::AnalysisConfig;
use crate::guidance::Guidance;
use crate::irt::{IrtError, NodeId};
use crate::provider::{ChatParams, CostError, ProviderError};
use crate::session::SessionError;

pub use events::{strip_timestamps, Event, EventKind, TranscriptOp};
pub use run::{Engine, EventSink, NullSink, SessionSetup};
pub use state::{is_terminal, EngineState, PendingProposal, PendingResult, Totals};
pub use text::{goal_items, mechanical_tree, parse_scenario, parse_task_selection, scrub_private};

pub const DEFAULT_MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Reasoning,
    Action,
    Reflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    AwaitUser,
    PlanUpdate,
    IrtReview,
    TaskSelect,
    DecisionReview,
    Generate,
    GuidanceReview,
    AwaitExecution,
    ResultScreen,
    Analyze,
    Done,
}

impl Step {
    pub fn phase(&self) -> Phase {
        match self {
            Step::AwaitUser | Step::PlanUpdate | Step::TaskSelect | Step::Analyze | Step::Done => Phase::Reasoning,
            Step::Generate | Step::AwaitExecution => Phase::Action,
            Step::IrtReview | Step::DecisionReview | Step::GuidanceReview | Step::ResultScreen => Phase::Reflection,
        }
    }

    pub fn is_review(&self) -> bool {
        self.phase() == Phase::Reflection
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationToggles {
    pub planner_enabled: bool,
    pub generator_enabled: bool,
    pub reflector_enabled: bool,
    pub analyst_enabled: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles { planner_enabled: true, generator_enabled: true, reflector_enabled: true, analyst_enabled: true }
    }
}

impl AblationToggles {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !self.planner_enabled && !self.generator_enabled {
            return Err(EngineError::InvalidToggles);
        }
        Ok(())
    }

    pub fn without(role: crate::session::Role) -> Self {
        use crate::session::Role;
        let mut t = AblationToggles::default();
        match role {
            Role::Planner => t.planner_enabled = false,
            Role::Generator => t.generator_enabled = false,
            Role::Reflector => t.reflector_enabled = false,
            Role::Analyst => t.analyst_enabled = false,
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub task: NodeId,
    pub concise_solution: String,
    /// 1-based position among the candidates; 0 when not a candidate.
    pub priority_rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    /// Taken from the task selection line of the planner's tree update.
    Hint,
    Planner,
    Mechanical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseReason {
    RetryBudgetExhausted,
    NoPendingTasks,
    NoViableBranch,
    TaskStalled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauseInfo {
    pub reason: PauseReason,
    pub at: Step,
    pub detail: String,
    /// Artifacts surfaced to the responder: the last accepted one and the
    /// rejected candidate, where they exist.
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideAction {
    /// Accept the rejected candidate. Invalid trees are still refused.
    Approve,
    /// Reset the retry budget and ask the producing role again.
    Retry,
    /// Drop the candidate and continue from the last accepted state.
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_retries: u32,
    pub candidate_limit: usize,
    pub context_budget: usize,
    pub analysis: AnalysisConfig,
    pub params: ChatParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_retries: DEFAULT_MAX_RETRIES,
            candidate_limit: 10,
            context_budget: crate::session::DEFAULT_CONTEXT_BUDGET,
            analysis: AnalysisConfig::default(),
            params: ChatParams::default(),
        }
    }
}

/// Runs generated commands and returns their combined output.
pub trait Executor {
    fn execute(&mut self, guidance: &Guidance) -> String;
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("goal must not be empty")]
    EmptyGoal,
    #[error("at least one of the planner and the generator must be enabled")]
    InvalidToggles,
    #[error("step {step} does not take this input")]
    InvalidStepInput { step: Step },
    #[error("session is finished")]
    SessionFinished,
    #[error("session is not paused")]
    NotPaused,
    #[error("override refused: {0}")]
    InvalidOverride(String),
    #[error("scenario classification failed after {attempts} attempt(s)")]
    ClassificationFailure { attempts: u32 },
    #[error("provider failure: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error("event log is corrupt: {0}")]
    CorruptLog(String),
    #[error("event log is empty")]
    EmptyLog,
    #[error("storage failure: {0}")]
    Storage(String),
}
