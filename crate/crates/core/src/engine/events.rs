use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AblationToggles, Decision, DecisionSource, EngineConfig, OverrideAction, PauseReason, Phase, Step};
use crate::analyst::AnalysisOutcome;
use crate::guidance::Guidance;
use crate::irt::{Irt, NodeId, OsTag, UpdateProposal};
use crate::privacy::RedactionReport;
use crate::provider::TokenUsage;
use crate::review::Reflection;
use crate::session::{Message, Role, ScenarioKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub session_id: String,
    /// Step being executed when the event was emitted.
    pub step: Step,
    pub phase: Phase,
    /// Step in force once the event is applied.
    pub then: Step,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TranscriptOp {
    Append { messages: Vec<Message> },
    Snapshot { label: String },
    Restore { label: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    SessionStarted {
        goal: String,
        system_info: String,
        os_tag: OsTag,
        toggles: AblationToggles,
        model: String,
        config: EngineConfig,
        /// Engine-built tree, present when the planner is disabled.
        #[serde(default)]
        initial_irt: Option<Irt>,
    },
    ScenarioClassified {
        scenario: ScenarioKind,
    },
    Transcript {
        role: Role,
        #[serde(flatten)]
        op: TranscriptOp,
    },
    /// Responder message for the planner only. Content is marked private.
    PlannerMessageQueued {
        text: String,
        private: bool,
    },
    IrtProposed {
        produced_by: Option<Role>,
        reply: String,
        proposal: Option<UpdateProposal>,
        parse_error: Option<String>,
        hint: Option<Decision>,
        consumed_private: usize,
    },
    /// Mechanical rejection when no reviewer is running.
    IrtRejected {
        violations: Vec<String>,
    },
    ReflectionIssued {
        reflection: Reflection,
    },
    IrtUpdated {
        produced_by: Option<Role>,
        irt: Irt,
    },
    DecisionMade {
        decision: Decision,
        source: DecisionSource,
    },
    GuidanceProposed {
        source: Role,
        raw: String,
    },
    GuidanceReady {
        source: Role,
        guidance: Guidance,
    },
    ExecutionRequested {
        task: NodeId,
        commands: Vec<String>,
    },
    ResultReceived {
        task: NodeId,
        redacted: String,
        report: RedactionReport,
    },
    AnalysisReady {
        task: NodeId,
        outcome: Option<AnalysisOutcome>,
        needs_review: Option<String>,
    },
    CostRecorded {
        role: Role,
        model: String,
        usage: TokenUsage,
        cost_usd: f64,
        latency_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure_label: Option<String>,
    },
    SessionPaused {
        reason: PauseReason,
        at: Step,
        detail: String,
        candidates: Vec<String>,
    },
    SessionResumed {
        action: OverrideAction,
        at: Step,
        note: Option<String>,
    },
    SessionDone {
        summary: Vec<(NodeId, String)>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionStarted { .. } => "SessionStarted",
            EventKind::ScenarioClassified { .. } => "ScenarioClassified",
            EventKind::Transcript { .. } => "Transcript",
            EventKind::PlannerMessageQueued { .. } => "PlannerMessageQueued",
            EventKind::IrtProposed { .. } => "IrtProposed",
            EventKind::IrtRejected { .. } => "IrtRejected",
            EventKind::ReflectionIssued { .. } => "ReflectionIssued",
            EventKind::IrtUpdated { .. } => "IrtUpdated",
            EventKind::DecisionMade { .. } => "DecisionMade",
            EventKind::GuidanceProposed { .. } => "GuidanceProposed",
            EventKind::GuidanceReady { .. } => "GuidanceReady",
            EventKind::ExecutionRequested { .. } => "ExecutionRequested",
            EventKind::ResultReceived { .. } => "ResultReceived",
            EventKind::AnalysisReady { .. } => "AnalysisReady",
            EventKind::CostRecorded { .. } => "CostRecorded",
            EventKind::SessionPaused { .. } => "SessionPaused",
            EventKind::SessionResumed { .. } => "SessionResumed",
            EventKind::SessionDone { .. } => "SessionDone",
        }
    }
}

/// JSON lines of `events` with timestamps removed, for replay comparisons.
pub fn strip_timestamps(events: &[Event]) -> Vec<String> {
    events
        .iter()
        .map(|e| {
            let mut value = serde_json::to_value(e).expect("events serialize");
            if let Some(obj) = value.as_object_mut() {
                obj.remove("ts");
            }
            value.to_string()
        })
        .collect()
}
