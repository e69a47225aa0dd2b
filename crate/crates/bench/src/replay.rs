use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use ircopilot_core::engine::{
    AblationToggles, Engine, EngineConfig, EngineError, Event, EventKind, EventSink, Executor, NullSink, PauseReason,
    SessionSetup, Step,
};
use ircopilot_core::guidance::Guidance;
use ircopilot_core::irt::Irt;
use ircopilot_core::privacy::Redactor;
use ircopilot_core::provider::{ChatProvider, PriceTable};
use ircopilot_core::session::PromptLibrary;

use crate::metrics::AttemptRecord;
use crate::suite::{BenchTask, ScenarioScript};
use crate::taxonomy::{classify_failure, FailureReason};
use crate::BenchError;

/// Answers execution requests from a task's canned outputs. Every command
/// of the guidance is looked up; unknown commands get the default response.
#[derive(Debug, Clone)]
pub struct ScriptedExecutor {
    script: ScenarioScript,
    pub executed: Vec<String>,
}

impl ScriptedExecutor {
    pub fn new(script: ScenarioScript) -> Self {
        ScriptedExecutor { script, executed: Vec::new() }
    }
}

impl Executor for ScriptedExecutor {
    fn execute(&mut self, guidance: &Guidance) -> String {
        let mut parts = Vec::new();
        for cmd in guidance.commands() {
            self.executed.push(cmd.command.clone());
            if let Some(out) = self.script.response(&cmd.command) {
                parts.push(out.to_string());
            }
        }
        if parts.is_empty() {
            self.script.default_response.clone()
        } else {
            parts.join("\n")
        }
    }
}

#[derive(Clone)]
pub struct TrialSettings {
    pub method: String,
    pub toggles: AblationToggles,
    pub config: EngineConfig,
    /// Engine transitions allowed after session start.
    pub step_budget: usize,
    pub prices: PriceTable,
    pub prompts: Arc<PromptLibrary>,
    pub redactor: Arc<Redactor>,
}

impl Default for TrialSettings {
    fn default() -> Self {
        TrialSettings {
            method: "ircopilot".to_string(),
            toggles: AblationToggles::default(),
            config: EngineConfig::default(),
            step_budget: 400,
            prices: PriceTable::builtin(),
            prompts: Arc::new(PromptLibrary::default()),
            redactor: Arc::new(Redactor::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReplayOutcome {
    Done,
    Paused { reason: PauseReason },
    StepBudgetExceeded { budget: usize },
    ProviderFailed { detail: String },
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub record: AttemptRecord,
    pub outcome: ReplayOutcome,
    pub events: Vec<Event>,
}

/// Sub-task ids answered by the resolved objectives of `irt`.
pub fn grade(task: &BenchTask, irt: &Irt) -> BTreeSet<String> {
    let values: Vec<&str> = irt.resolved_objectives().into_iter().map(|(_, v)| v).collect();
    task.sub_tasks.iter().filter(|s| values.iter().any(|v| s.accepts(v))).map(|s| s.id.clone()).collect()
}

fn totals(events: &[Event]) -> (f64, f64, Option<String>) {
    let mut ms = 0u64;
    let mut cost = 0.0;
    let mut label = None;
    for e in events {
        if let EventKind::CostRecorded { latency_ms, cost_usd, failure_label, .. } = &e.kind {
            ms += latency_ms;
            cost += cost_usd;
            if label.is_none() {
                label.clone_from(failure_label);
            }
        }
    }
    (ms as f64 / 1000.0, cost, label)
}

/// Runs one trial of `task` to termination or the step budget and grades
/// the final tree. Provider failures and budget overruns become failed
/// attempts; configuration errors are returned.
pub fn replay(
    task: &BenchTask,
    trial: u32,
    provider: Arc<dyn ChatProvider>,
    settings: &TrialSettings,
    sink: Option<Box<dyn EventSink>>,
) -> Result<TrialRun, BenchError> {
    let mut setup = SessionSetup::new(format!("{}-{}-{trial}", task.id, settings.method), task.goal(), task.os_tag);
    setup.system_info = task.system_info.clone();
    setup.toggles = settings.toggles;
    setup.config = settings.config.clone();
    let sink = sink.unwrap_or_else(|| Box::new(NullSink));
    let started = Engine::start(setup, provider, &settings.prices, settings.prompts.clone(), settings.redactor.clone(), sink);
    let (events, irt, outcome) = match started {
        Ok(mut engine) => {
            let mut executor = ScriptedExecutor::new(task.scenario.clone());
            let outcome = match engine.drive(&mut executor, settings.step_budget) {
                Ok(Step::Done) => ReplayOutcome::Done,
                Ok(Step::AwaitUser) => {
                    let reason = engine.state().paused.as_ref().map(|p| p.reason).unwrap_or(PauseReason::NoPendingTasks);
                    ReplayOutcome::Paused { reason }
                }
                Ok(_) => ReplayOutcome::StepBudgetExceeded { budget: settings.step_budget },
                Err(EngineError::Provider(e)) => ReplayOutcome::ProviderFailed { detail: e.to_string() },
                Err(other) => return Err(other.into()),
            };
            (engine.events().to_vec(), engine.state().irt.clone(), outcome)
        }
        Err(EngineError::Provider(e)) => (Vec::new(), Irt::new(task.os_tag, false), ReplayOutcome::ProviderFailed { detail: e.to_string() }),
        Err(other) => return Err(other.into()),
    };

    let completed = grade(task, &irt);
    let success = completed.len() == task.sub_tasks.len();
    let (time, cost, label) = totals(&events);
    let failure_reason = if success {
        None
    } else {
        Some(match label {
            Some(l) => classify_failure(&l)?,
            None if outcome == ReplayOutcome::Done => FailureReason::FalseResultInterpretation,
            None => FailureReason::FalseIrStrategy,
        })
    };
    let note = match &outcome {
        ReplayOutcome::Done => None,
        ReplayOutcome::Paused { reason } => Some(format!("paused: {reason:?}")),
        ReplayOutcome::StepBudgetExceeded { budget } => Some(format!("step budget of {budget} exceeded")),
        ReplayOutcome::ProviderFailed { detail } => Some(format!("provider failed: {detail}")),
    };
    let record = AttemptRecord {
        task_id: task.id.clone(),
        trial,
        method: settings.method.clone(),
        completed_sub_tasks: completed,
        total_sub_tasks: task.sub_tasks.len(),
        success,
        reasoning_time_s: time,
        cost_usd: cost,
        failure_reason,
        note,
    };
    record.check()?;
    Ok(TrialRun { record, outcome, events })
}
