use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::{Event, EventKind, TranscriptOp};
use super::{AblationToggles, Decision, EngineConfig, EngineError, OverrideAction, PauseInfo, Step};
use crate::guidance::Guidance;
use crate::irt::{is_complete, Irt, NodeId, OsTag, UpdateProposal};
use crate::privacy::RedactionReport;
use crate::provider::TokenUsage;
use crate::review::Verdict;
use crate::session::{Role, ScenarioKind, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingProposal {
    pub produced_by: Option<Role>,
    pub reply: String,
    pub proposal: Option<UpdateProposal>,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingResult {
    pub task: NodeId,
    pub text: String,
    pub report: RedactionReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub usage: TokenUsage,
    pub cost_usd: f64,
    pub latency_ms: u64,
    pub calls: BTreeMap<Role, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub session_id: String,
    pub goal: String,
    pub system_info: String,
    pub os_tag: OsTag,
    pub toggles: AblationToggles,
    pub config: EngineConfig,
    pub model: String,
    pub scenario: Option<ScenarioKind>,
    pub step: Step,
    pub irt: Irt,
    pub pending_proposal: Option<PendingProposal>,
    pub decision_hint: Option<Decision>,
    pub pending_decision: Option<Decision>,
    /// Rejected or unreviewed guidance text.
    pub guidance_candidate: Option<String>,
    pub pending_guidance: Option<Guidance>,
    pub pending_result: Option<PendingResult>,
    pub retry_counts: BTreeMap<Step, u32>,
    pub transcripts: BTreeMap<Role, Transcript>,
    pub planner_queue: Vec<String>,
    /// Every private message ever received, used to scrub forwarded text.
    pub private_history: Vec<String>,
    /// Reviewer or responder feedback for the next producing call.
    pub feedback: Option<String>,
    pub paused: Option<PauseInfo>,
    pub needs_review: Option<String>,
    pub task_attempts: BTreeMap<NodeId, u32>,
    pub totals: Totals,
    pub last_seq: u64,
    pub summary: Option<Vec<(NodeId, String)>>,
}

impl EngineState {
    /// State before any event.
    fn blank(session_id: &str) -> Self {
        EngineState {
            session_id: session_id.to_string(),
            goal: String::new(),
            system_info: String::new(),
            os_tag: OsTag::Linux,
            toggles: AblationToggles::default(),
            config: EngineConfig::default(),
            model: String::new(),
            scenario: None,
            step: Step::AwaitUser,
            irt: Irt::new(OsTag::Linux, false),
            pending_proposal: None,
            decision_hint: None,
            pending_decision: None,
            guidance_candidate: None,
            pending_guidance: None,
            pending_result: None,
            retry_counts: BTreeMap::new(),
            transcripts: Role::ALL.into_iter().map(|r| (r, Transcript::new(r))).collect(),
            planner_queue: Vec::new(),
            private_history: Vec::new(),
            feedback: None,
            paused: None,
            needs_review: None,
            task_attempts: BTreeMap::new(),
            totals: Totals::default(),
            last_seq: 0,
            summary: None,
        }
    }

    pub fn transcript(&self, role: Role) -> &Transcript {
        &self.transcripts[&role]
    }

    pub fn retry_count(&self, step: Step) -> u32 {
        self.retry_counts.get(&step).copied().unwrap_or(0)
    }

    /// Folds one event. The sequence number must follow the last one.
    pub fn apply(&mut self, event: &Event) -> Result<(), EngineError> {
        if event.seq != self.last_seq + 1 {
            return Err(EngineError::CorruptLog(format!("expected seq {}, found {}", self.last_seq + 1, event.seq)));
        }
        if event.session_id != self.session_id {
            return Err(EngineError::CorruptLog(format!("event for session {} in log of {}", event.session_id, self.session_id)));
        }
        match &event.kind {
            EventKind::SessionStarted { goal, system_info, os_tag, toggles, model, config, initial_irt } => {
                self.goal = goal.clone();
                self.system_info = system_info.clone();
                self.os_tag = *os_tag;
                self.toggles = *toggles;
                self.model = model.clone();
                self.config = *config;
                self.irt = initial_irt.clone().unwrap_or_else(|| Irt::new(*os_tag, false));
            }
            EventKind::ScenarioClassified { scenario } => self.scenario = Some(*scenario),
            EventKind::Transcript { role, op } => {
                let t = self.transcripts.get_mut(role).expect("all roles present");
                match op {
                    TranscriptOp::Append { messages } => {
                        for m in messages {
                            t.push(m.clone()).map_err(|e| EngineError::CorruptLog(e.to_string()))?;
                        }
                    }
                    TranscriptOp::Snapshot { label } => t.take_snapshot(label),
                    TranscriptOp::Restore { label } => t.restore_snapshot(label).map_err(|e| EngineError::CorruptLog(e.to_string()))?,
                }
            }
            EventKind::PlannerMessageQueued { text, .. } => {
                self.planner_queue.push(text.clone());
                self.private_history.push(text.clone());
            }
            EventKind::IrtProposed { produced_by, reply, proposal, parse_error, hint, consumed_private } => {
                self.pending_proposal = Some(PendingProposal {
                    produced_by: *produced_by,
                    reply: reply.clone(),
                    proposal: proposal.clone(),
                    parse_error: parse_error.clone(),
                });
                self.decision_hint = hint.clone();
                let n = (*consumed_private).min(self.planner_queue.len());
                self.planner_queue.drain(..n);
                self.feedback = None;
                self.needs_review = None;
            }
            EventKind::IrtRejected { violations } => {
                *self.retry_counts.entry(Step::PlanUpdate).or_default() += 1;
                self.feedback = Some(format!(
                    "Your tree was rejected by the constraint check:\n- {}\nRestate the previous tree and apply only supported changes.",
                    violations.join("\n- ")
                ));
            }
            EventKind::ReflectionIssued { reflection } => {
                if reflection.verdict == Verdict::Approve {
                    self.retry_counts.remove(&event.step);
                } else {
                    *self.retry_counts.entry(event.step).or_default() += 1;
                    self.feedback = Some(reflection.feedback());
                }
            }
            EventKind::IrtUpdated { irt, .. } => {
                self.irt = irt.clone();
                self.pending_proposal = None;
                self.pending_decision = None;
                self.pending_result = None;
                self.retry_counts.remove(&Step::IrtReview);
                self.retry_counts.remove(&Step::PlanUpdate);
            }
            EventKind::DecisionMade { decision, .. } => {
                self.pending_decision = Some(decision.clone());
                self.decision_hint = None;
                self.guidance_candidate = None;
            }
            EventKind::GuidanceProposed { raw, .. } => {
                self.guidance_candidate = Some(raw.clone());
                self.pending_result = None;
                self.feedback = None;
            }
            EventKind::GuidanceReady { guidance, .. } => {
                self.pending_guidance = Some(guidance.clone());
                self.guidance_candidate = None;
                self.retry_counts.remove(&Step::GuidanceReview);
            }
            EventKind::ExecutionRequested { task, .. } => {
                *self.task_attempts.entry(task.clone()).or_default() += 1;
            }
            EventKind::ResultReceived { task, redacted, report } => {
                self.pending_guidance = None;
                self.pending_result = Some(PendingResult { task: task.clone(), text: redacted.clone(), report: report.clone() });
            }
            EventKind::AnalysisReady { needs_review, .. } => {
                self.needs_review = needs_review.clone();
            }
            EventKind::CostRecorded { role, usage, cost_usd, latency_ms, .. } => {
                self.totals.usage = self.totals.usage + *usage;
                self.totals.cost_usd += cost_usd;
                self.totals.latency_ms += latency_ms;
                *self.totals.calls.entry(*role).or_default() += 1;
            }
            EventKind::SessionPaused { reason, at, detail, candidates } => {
                self.paused = Some(PauseInfo { reason: *reason, at: *at, detail: detail.clone(), candidates: candidates.clone() });
            }
            EventKind::SessionResumed { action, at, note } => {
                self.paused = None;
                self.retry_counts.remove(at);
                if let Some(note) = note {
                    self.feedback = Some(note.clone());
                }
                if *action == OverrideAction::Discard {
                    match at {
                        Step::IrtReview | Step::PlanUpdate => self.pending_proposal = None,
                        Step::DecisionReview => self.pending_decision = None,
                        Step::GuidanceReview | Step::Generate => self.guidance_candidate = None,
                        Step::ResultScreen | Step::Analyze => self.pending_result = None,
                        _ => {}
                    }
                    if *at != Step::ResultScreen && *at != Step::Analyze {
                        self.feedback = None;
                    }
                }
            }
            EventKind::SessionDone { summary } => self.summary = Some(summary.clone()),
        }
        self.step = event.then;
        self.last_seq = event.seq;
        Ok(())
    }

    /// Rebuilds the state from a complete log.
    pub fn replay(events: &[Event]) -> Result<EngineState, EngineError> {
        let first = events.first().ok_or(EngineError::EmptyLog)?;
        if !matches!(first.kind, EventKind::SessionStarted { .. }) {
            return Err(EngineError::CorruptLog("log does not begin with SessionStarted".to_string()));
        }
        let mut state = EngineState::blank(&first.session_id);
        for event in events {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub(super) fn new_for(session_id: &str) -> Self {
        Self::blank(session_id)
    }
}

/// Whether the session goal is met, with the resolved values.
pub fn is_terminal(state: &EngineState) -> (bool, Vec<(NodeId, String)>) {
    let summary = state.irt.resolved_objectives().into_iter().map(|(id, v)| (id.clone(), v.to_string())).collect();
    (state.step == Step::Done || is_complete(&state.irt), summary)
}
