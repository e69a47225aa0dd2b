use std::sync::Arc;

use chrono::Utc;

use super::events::{Event, EventKind, TranscriptOp};
use super::state::EngineState;
use super::text::{mechanical_tree, parse_scenario, parse_task_selection, scrub_private};
use super::{
    AblationToggles, Decision, DecisionSource, EngineConfig, EngineError, Executor, OverrideAction, PauseReason, Step,
};
use crate::analyst::{analyze, AnalysisError};
use crate::guidance::{extract_commands, parse_guidance, Guidance, Step as GuidanceStep, Strategy};
use crate::irt::{
    adopt_initial, apply_update, is_complete, record_result, render_irt, select_candidates, ConstraintViolation, Irt,
    IrtError, NodeId, OsTag, ResultMark, UpdateProposal,
};
use crate::privacy::Redactor;
use crate::provider::{compute_cost, ChatProvider, Price, PriceTable, ProviderError};
use crate::review::{mechanical_check, parse_reflection, proposal_from_reply, review_request, Reflection, ReviewContext, ReviewTarget, Verdict};
use crate::session::{Author, Message, PromptLibrary, Role, ScenarioKind};

/// Receives every event right after it is applied.
pub trait EventSink: Send {
    fn record(&mut self, event: &Event) -> Result<(), String>;
}

pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _event: &Event) -> Result<(), String> {
        Ok(())
    }
}

impl<F: FnMut(&Event) -> Result<(), String> + Send> EventSink for F {
    fn record(&mut self, event: &Event) -> Result<(), String> {
        self(event)
    }
}

#[derive(Debug, Clone)]
pub struct SessionSetup {
    pub session_id: String,
    pub goal: String,
    pub system_info: String,
    pub os_tag: OsTag,
    pub toggles: AblationToggles,
    pub config: EngineConfig,
}

impl SessionSetup {
    pub fn new(session_id: impl Into<String>, goal: impl Into<String>, os_tag: OsTag) -> Self {
        SessionSetup {
            session_id: session_id.into(),
            goal: goal.into(),
            system_info: String::new(),
            os_tag,
            toggles: AblationToggles::default(),
            config: EngineConfig::default(),
        }
    }
}

/// One incident session. Strictly sequential; all effects are events.
pub struct Engine {
    state: EngineState,
    log: Vec<Event>,
    provider: Arc<dyn ChatProvider>,
    price: Price,
    prompts: Arc<PromptLibrary>,
    redactor: Arc<Redactor>,
    sink: Box<dyn EventSink>,
}

fn violations_of(err: IrtError) -> Vec<ConstraintViolation> {
    match err {
        IrtError::ConstraintViolationsPresent(v) => v,
        other => vec![ConstraintViolation {
            kind: crate::irt::ViolationKind::MalformedId,
            node: None,
            detail: other.to_string(),
        }],
    }
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Engine {
    /// Starts a session: classification and the first tree when the planner
    /// runs, otherwise an engine-built tree from the goal.
    pub fn start(
        setup: SessionSetup,
        provider: Arc<dyn ChatProvider>,
        prices: &PriceTable,
        prompts: Arc<PromptLibrary>,
        redactor: Arc<Redactor>,
        sink: Box<dyn EventSink>,
    ) -> Result<Engine, EngineError> {
        if setup.goal.trim().is_empty() {
            return Err(EngineError::EmptyGoal);
        }
        setup.toggles.validate()?;
        let price = prices.price(provider.model())?;
        let mut engine = Engine {
            state: EngineState::new_for(&setup.session_id),
            log: Vec::new(),
            provider,
            price,
            prompts,
            redactor,
            sink,
        };
        let planner = setup.toggles.planner_enabled;
        let initial_irt = (!planner).then(|| mechanical_tree(&setup.goal, setup.os_tag));
        engine.emit(
            EventKind::SessionStarted {
                goal: setup.goal.trim().to_string(),
                system_info: setup.system_info.trim().to_string(),
                os_tag: setup.os_tag,
                toggles: setup.toggles,
                model: engine.provider.model().to_string(),
                config: setup.config,
                initial_irt,
            },
            if planner { Step::PlanUpdate } else { Step::TaskSelect },
        )?;
        if planner {
            engine.classify()?;
            engine.advance(None)?;
        }
        Ok(engine)
    }

    /// Continues a persisted session.
    pub fn resume(
        events: Vec<Event>,
        provider: Arc<dyn ChatProvider>,
        prices: &PriceTable,
        prompts: Arc<PromptLibrary>,
        redactor: Arc<Redactor>,
        sink: Box<dyn EventSink>,
    ) -> Result<Engine, EngineError> {
        let state = EngineState::replay(&events)?;
        let price = prices.price(provider.model())?;
        Ok(Engine { state, log: events, provider, price, prompts, redactor, sink })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn step(&self) -> Step {
        self.state.step
    }

    fn emit(&mut self, kind: EventKind, then: Step) -> Result<(), EngineError> {
        let event = Event {
            seq: self.state.last_seq + 1,
            ts: Utc::now(),
            session_id: self.state.session_id.clone(),
            step: self.state.step,
            phase: self.state.step.phase(),
            then,
            kind,
        };
        self.state.apply(&event)?;
        let recorded = self.sink.record(&event);
        self.log.push(event);
        recorded.map_err(EngineError::Storage)
    }

    fn emit_here(&mut self, kind: EventKind) -> Result<(), EngineError> {
        let step = self.state.step;
        self.emit(kind, step)
    }

    fn scenario(&self) -> ScenarioKind {
        self.state.scenario.unwrap_or(ScenarioKind::ClearObjectives)
    }

    fn system_prompt(&self, role: Role) -> Result<String, EngineError> {
        Ok(self.prompts.build_system_prompt(role, self.state.os_tag, ScenarioKind::Any)?)
    }

    /// The role's system prompt as a prefix when its transcript has none yet.
    fn system_prefix(&self, role: Role) -> Result<Vec<Message>, EngineError> {
        if self.state.transcript(role).system_messages().next().is_some() {
            return Ok(Vec::new());
        }
        Ok(vec![Message::system(self.system_prompt(role)?)])
    }

    fn trimmed(&self, role: Role) -> Vec<Message> {
        let t = self.state.transcript(role);
        match t.trim_context(self.state.config.context_budget) {
            Ok(trimmed) => trimmed.messages().to_vec(),
            Err(_) => t.messages().to_vec(),
        }
    }

    /// Sends `context + user` and records the exchange and its cost.
    fn chat(&mut self, role: Role, mut context: Vec<Message>, user: String, prefix: Vec<Message>) -> Result<String, EngineError> {
        let user_msg = Message::user(user);
        context.push(user_msg.clone());
        let reply = self.provider.chat(role, &context, &self.state.config.params)?;
        let cost = compute_cost(reply.usage, self.price);
        self.emit_here(EventKind::CostRecorded {
            role,
            model: self.provider.model().to_string(),
            usage: reply.usage,
            cost_usd: cost,
            latency_ms: reply.latency_ms,
            failure_label: reply.failure_label.clone(),
        })?;
        if reply.text.trim().is_empty() {
            return Err(ProviderError::MalformedProviderReply(format!("{role} returned an empty reply")).into());
        }
        let mut messages = prefix;
        messages.push(user_msg);
        messages.push(Message::new(Author::Assistant, reply.text.clone()));
        self.emit_here(EventKind::Transcript { role, op: TranscriptOp::Append { messages } })?;
        Ok(reply.text)
    }

    /// A call that sees the role's system prompt plus the history.
    fn chat_session(&mut self, role: Role, user: String) -> Result<String, EngineError> {
        let prefix = self.system_prefix(role)?;
        let mut context = prefix.clone();
        context.extend(self.trimmed(role));
        self.chat(role, context, user, prefix)
    }

    /// A call that sees only the role's system prompt.
    fn chat_isolated(&mut self, role: Role, user: String) -> Result<String, EngineError> {
        let prefix = self.system_prefix(role)?;
        let mut context = prefix.clone();
        context.extend(self.state.transcript(role).system_messages().cloned());
        self.chat(role, context, user, prefix)
    }

    fn classify(&mut self) -> Result<(), EngineError> {
        let sys = self.prompts.build_system_prompt(Role::Planner, self.state.os_tag, ScenarioKind::Any)?;
        let info = if self.state.system_info.is_empty() { "not provided".to_string() } else { self.state.system_info.clone() };
        let mut user = format!("Responder goal:\n{}\n\nSystem information:\n{info}", self.state.goal);
        let attempts = self.state.config.max_retries + 1;
        for _ in 0..attempts {
            let prefix = if self.state.transcript(Role::Planner).is_empty() { vec![Message::system(sys.clone())] } else { Vec::new() };
            let mut context = prefix.clone();
            context.extend(self.trimmed(Role::Planner));
            let reply = self.chat(Role::Planner, context, user, prefix)?;
            if let Some(scenario) = parse_scenario(&reply) {
                let prompt = self.prompts.build_system_prompt(Role::Planner, self.state.os_tag, scenario)?;
                self.emit_here(EventKind::Transcript {
                    role: Role::Planner,
                    op: TranscriptOp::Append { messages: vec![Message::system(prompt)] },
                })?;
                return self.emit_here(EventKind::ScenarioClassified { scenario });
            }
            user = "Answer with exactly one line: \"Scenario: 1\" or \"Scenario: 2\".".to_string();
        }
        Err(EngineError::ClassificationFailure { attempts })
    }

    /// Executes one step transition. `input` is the executor output at
    /// `AwaitExecution`, or a responder note at `AwaitUser`.
    pub fn advance(&mut self, input: Option<&str>) -> Result<(), EngineError> {
        let step = self.state.step;
        match (step, input) {
            (Step::Done, _) => Err(EngineError::SessionFinished),
            (Step::AwaitExecution, Some(text)) => self.receive_result(text),
            (Step::AwaitUser, Some(note)) if self.state.paused.is_some() => {
                self.resolve_override(OverrideAction::Retry, Some(note.to_string()))
            }
            (Step::AwaitExecution | Step::AwaitUser, _) | (_, Some(_)) => Err(EngineError::InvalidStepInput { step }),
            (Step::PlanUpdate, None) => self.plan_update(),
            (Step::IrtReview, None) => self.irt_review(),
            (Step::TaskSelect, None) => self.task_select(),
            (Step::DecisionReview, None) => self.decision_review(),
            (Step::Generate, None) => self.generate(),
            (Step::GuidanceReview, None) => self.guidance_review(),
            (Step::ResultScreen, None) => self.result_screen(),
            (Step::Analyze, None) => self.analyze_result(),
        }
    }

    /// Advances until the session is done, paused, or `limit` transitions
    /// have run. Execution requests are served by `executor`.
    pub fn drive(&mut self, executor: &mut dyn Executor, limit: usize) -> Result<Step, EngineError> {
        for _ in 0..limit {
            match self.state.step {
                Step::Done | Step::AwaitUser => break,
                Step::AwaitExecution => {
                    let guidance = self.state.pending_guidance.clone().ok_or(EngineError::InvalidStepInput { step: Step::AwaitExecution })?;
                    let output = executor.execute(&guidance);
                    self.advance(Some(&output))?;
                }
                _ => self.advance(None)?,
            }
        }
        Ok(self.state.step)
    }

    /// Delivers a private message to the planner session only.
    pub fn direct_planner_message(&mut self, text: &str) -> Result<(), EngineError> {
        if text.trim().is_empty() {
            return Ok(());
        }
        if self.state.step == Step::Done {
            return Err(EngineError::SessionFinished);
        }
        self.emit_here(EventKind::PlannerMessageQueued { text: text.trim().to_string(), private: true })
    }

    fn accept_tree(&self, proposal: &UpdateProposal) -> Result<Irt, Vec<ConstraintViolation>> {
        let accepted = if self.state.irt.revision == 0 {
            adopt_initial(&proposal.new_tree, self.scenario().has_procedures())
        } else {
            apply_update(&self.state.irt, proposal)
        };
        accepted.map_err(violations_of)
    }

    fn planner_request(&self) -> String {
        let s = &self.state;
        let mut out = if s.irt.revision == 0 {
            let info = if s.system_info.is_empty() { "not provided" } else { &s.system_info };
            format!("Responder goal:\n{}\n\nSystem information:\n{info}\n", s.goal)
        } else {
            format!("Current IRT:\n{}\n", render_irt(&s.irt))
        };
        if let Some(result) = &s.pending_result {
            let title = s.irt.find(&result.task).map(|n| n.title.as_str()).unwrap_or("");
            out.push_str(&format!("\nResult of sub-task {} {title}:\n{}\n", result.task, result.text.trim()));
            if let Some(why) = &s.needs_review {
                out.push_str(&format!("The analyst could not interpret this result ({why}). Review it yourself.\n"));
            }
        }
        if let Some(feedback) = &s.feedback {
            out.push_str(&format!("\nReviewer feedback:\n{feedback}\n"));
        }
        if !s.planner_queue.is_empty() {
            out.push_str("\nPrivate messages from the responder (use them, never repeat them):\n");
            for m in &s.planner_queue {
                out.push_str(&format!("- {m}\n"));
            }
        }
        out.push_str(if s.irt.revision == 0 {
            "\nBuild the initial IRT, then select the first task."
        } else {
            "\nUpdate the IRT with the latest findings, then select the next task."
        });
        out
    }

    fn plan_update(&mut self) -> Result<(), EngineError> {
        if !self.state.toggles.planner_enabled {
            return self.task_select();
        }
        if self.state.scenario.is_none() {
            return self.classify();
        }
        let label = format!("pre-proposal-{}", self.state.irt.revision);
        self.emit_here(EventKind::Transcript { role: Role::Planner, op: TranscriptOp::Snapshot { label: label.clone() } })?;
        let request = self.planner_request();
        let consumed = self.state.planner_queue.len();
        let reply = self.chat_session(Role::Planner, request)?;
        let (proposal, parse_error) = match proposal_from_reply(&reply, self.state.os_tag, Role::Planner) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e)),
        };
        let hint = parse_task_selection(&reply, &[]);
        let reflector = self.state.toggles.reflector_enabled;
        self.emit(
            EventKind::IrtProposed { produced_by: Some(Role::Planner), reply, proposal: proposal.clone(), parse_error: parse_error.clone(), hint, consumed_private: consumed },
            if reflector { Step::IrtReview } else { Step::PlanUpdate },
        )?;
        if reflector {
            return Ok(());
        }
        let outcome = match (&proposal, parse_error) {
            (Some(p), _) => self.accept_tree(p).map_err(|v| v.iter().map(ToString::to_string).collect::<Vec<_>>()),
            (None, Some(e)) => Err(vec![format!("tree does not parse: {e}")]),
            (None, None) => Err(vec!["no tree in reply".to_string()]),
        };
        match outcome {
            Ok(tree) => self.emit(EventKind::IrtUpdated { produced_by: Some(Role::Planner), irt: tree }, Step::TaskSelect),
            Err(violations) => {
                self.emit_here(EventKind::IrtRejected { violations: violations.clone() })?;
                self.emit_here(EventKind::Transcript { role: Role::Planner, op: TranscriptOp::Restore { label } })?;
                if self.state.retry_count(Step::PlanUpdate) >= self.state.config.max_retries {
                    let candidates = self.pause_candidates_irt();
                    self.pause(PauseReason::RetryBudgetExhausted, Step::PlanUpdate, violations.join("; "), candidates)?;
                }
                Ok(())
            }
        }
    }

    fn pause_candidates_irt(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.state.irt.revision > 0 {
            out.push(render_irt(&self.state.irt));
        }
        if let Some(p) = &self.state.pending_proposal {
            out.push(p.reply.clone());
        }
        out
    }

    fn pause(&mut self, reason: PauseReason, at: Step, detail: String, candidates: Vec<String>) -> Result<(), EngineError> {
        self.emit(EventKind::SessionPaused { reason, at, detail, candidates }, Step::AwaitUser)
    }

    fn review_ctx_task(&self) -> Option<NodeId> {
        self.state.pending_decision.as_ref().map(|d| d.task.clone())
    }

    /// Runs the mechanical check, then the reviewer when needed.
    fn reflect(&mut self, target: ReviewTarget, content: &str, candidates: &[NodeId], task: Option<&NodeId>) -> Result<Reflection, EngineError> {
        let current = (self.state.irt.revision > 0).then(|| self.state.irt.clone());
        let ctx = ReviewContext {
            current: current.as_ref(),
            os_tag: self.state.os_tag,
            expect_procedures: self.scenario().has_procedures(),
            candidates,
            task,
        };
        if content.trim().is_empty() {
            let mut r = Reflection::approve(target);
            r.causes.push("nothing to review".to_string());
            return Ok(r);
        }
        if let Some(found) = mechanical_check(target, content, &ctx) {
            return Ok(found);
        }
        let request = review_request(target, content, &ctx);
        let reply = self.chat_session(Role::Reflector, request)?;
        Ok(parse_reflection(target, &reply))
    }

    /// Records a non-approving reflection and either routes back to the
    /// producing step or pauses when the retry budget is spent.
    fn reject(&mut self, at: Step, reflection: Reflection, back: Step, candidates: Vec<String>) -> Result<(), EngineError> {
        let rollback = reflection.verdict == Verdict::Rollback;
        let detail = reflection.causes.join("; ");
        let exhausted = self.state.retry_count(at) + 1 >= self.state.config.max_retries;
        self.emit(EventKind::ReflectionIssued { reflection }, if exhausted { at } else { back })?;
        if rollback && at == Step::IrtReview {
            let label = format!("pre-proposal-{}", self.state.irt.revision);
            if self.state.transcript(Role::Planner).snapshots().contains_key(&label) {
                self.emit_here(EventKind::Transcript { role: Role::Planner, op: TranscriptOp::Restore { label } })?;
            }
        }
        if exhausted {
            self.pause(PauseReason::RetryBudgetExhausted, at, detail, candidates)?;
        }
        Ok(())
    }

    fn irt_review(&mut self) -> Result<(), EngineError> {
        let Some(pending) = self.state.pending_proposal.clone() else {
            return self.emit(EventKind::IrtRejected { violations: vec!["no proposal to review".to_string()] }, Step::PlanUpdate);
        };
        let mut reflection = self.reflect(ReviewTarget::IrtProposal, &pending.reply, &[], None)?;
        if reflection.verdict == Verdict::Approve {
            let accepted = match &pending.proposal {
                Some(p) => self.accept_tree(p).map_err(|v| v.iter().map(ToString::to_string).collect::<Vec<_>>()),
                None => Err(vec![pending.parse_error.clone().unwrap_or_default()]),
            };
            match accepted {
                Ok(tree) => {
                    self.emit_here(EventKind::ReflectionIssued { reflection })?;
                    return self.emit(EventKind::IrtUpdated { produced_by: pending.produced_by, irt: tree }, Step::TaskSelect);
                }
                Err(causes) => {
                    reflection = Reflection { verdict: Verdict::Rollback, causes, mechanical: true, ..reflection }.normalized();
                }
            }
        }
        let candidates = self.pause_candidates_irt();
        self.reject(Step::IrtReview, reflection, Step::PlanUpdate, candidates)
    }

    fn finish(&mut self) -> Result<(), EngineError> {
        let summary = self.state.irt.resolved_objectives().into_iter().map(|(id, v)| (id.clone(), v.to_string())).collect();
        self.emit(EventKind::SessionDone { summary }, Step::Done)
    }

    fn title_of(&self, id: &NodeId) -> String {
        self.state.irt.find(id).map(|n| n.title.clone()).unwrap_or_default()
    }

    fn task_select(&mut self) -> Result<(), EngineError> {
        if is_complete(&self.state.irt) {
            return self.finish();
        }
        let candidates = select_candidates(&self.state.irt, self.state.config.candidate_limit);
        if candidates.is_empty() {
            let snapshot = render_irt(&self.state.irt);
            return self.pause(PauseReason::NoPendingTasks, Step::TaskSelect, "no pending sub-task remains while objectives are open".to_string(), vec![snapshot]);
        }
        let rank = |task: &NodeId| candidates.iter().position(|c| c == task).map_or(0, |p| p as u32 + 1);
        let hint = self.state.decision_hint.clone().filter(|h| self.state.feedback.is_none() && candidates.contains(&h.task));
        let (mut decision, mut source) = if let Some(h) = hint {
            (Decision { priority_rank: rank(&h.task), ..h }, DecisionSource::Hint)
        } else if !self.state.toggles.planner_enabled {
            (Decision { task: candidates[0].clone(), concise_solution: String::new(), priority_rank: 1 }, DecisionSource::Mechanical)
        } else {
            let mut request = String::from("Pending sub-tasks:\n");
            for c in &candidates {
                request.push_str(&format!("- {c} {}\n", self.title_of(c)));
            }
            if let Some(feedback) = &self.state.feedback {
                request.push_str(&format!("\nReviewer feedback:\n{feedback}\n"));
            }
            request.push_str("\nSelect exactly one pending sub-task. Reply with \"Task selection: <id> <title>\" followed by a concise solution.");
            let reply = self.chat_session(Role::Planner, request)?;
            let decision = parse_task_selection(&reply, &candidates)
                .unwrap_or(Decision { task: NodeId::root(1), concise_solution: reply.trim().to_string(), priority_rank: 0 });
            (decision, DecisionSource::Planner)
        };
        if !self.state.toggles.reflector_enabled && !candidates.contains(&decision.task) {
            decision = Decision { task: candidates[0].clone(), concise_solution: decision.concise_solution, priority_rank: 1 };
            source = DecisionSource::Mechanical;
        }
        let attempts = self.state.task_attempts.get(&decision.task).copied().unwrap_or(0);
        if attempts > self.state.config.max_retries {
            return self.pause(
                PauseReason::TaskStalled,
                Step::TaskSelect,
                format!("sub-task {} was executed {attempts} times without being closed", decision.task),
                vec![decision.task.to_string()],
            );
        }
        let then = if self.state.toggles.reflector_enabled { Step::DecisionReview } else { Step::Generate };
        self.emit(EventKind::DecisionMade { decision, source }, then)
    }

    fn decision_review(&mut self) -> Result<(), EngineError> {
        let Some(decision) = self.state.pending_decision.clone() else {
            return self.task_select();
        };
        let candidates = select_candidates(&self.state.irt, self.state.config.candidate_limit);
        let content = format!("Task selection: {} {}\n{}", decision.task, self.title_of(&decision.task), decision.concise_solution).trim().to_string();
        let reflection = self.reflect(ReviewTarget::PlannerDecision, &content, &candidates, Some(&decision.task))?;
        if reflection.verdict == Verdict::Approve {
            return self.emit(EventKind::ReflectionIssued { reflection }, Step::Generate);
        }
        self.reject(Step::DecisionReview, reflection, Step::TaskSelect, vec![content])
    }

    /// Guidance built from the planner's advice when no generator runs.
    fn planner_guidance(&self, decision: &Decision) -> Guidance {
        let advice = scrub_private(&decision.concise_solution, &self.state.private_history);
        let os = self.state.os_tag;
        if let Ok(g) = parse_guidance(&advice, decision.task.clone(), os) {
            return g;
        }
        fallback_guidance(&advice, decision.task.clone(), os, &self.title_of(&decision.task))
    }

    fn generate(&mut self) -> Result<(), EngineError> {
        let Some(decision) = self.state.pending_decision.clone() else {
            return self.task_select();
        };
        let reflector = self.state.toggles.reflector_enabled;
        let then = if reflector { Step::GuidanceReview } else { Step::Generate };
        if !self.state.toggles.generator_enabled {
            let guidance = self.planner_guidance(&decision);
            self.emit(EventKind::GuidanceProposed { source: Role::Planner, raw: guidance.to_markup() }, then)?;
            if !reflector {
                return self.guidance_ready(Role::Planner, guidance);
            }
            return Ok(());
        }
        let label = format!("task:{}", decision.task);
        if !self.state.transcript(Role::Generator).snapshots().contains_key(&label) {
            self.emit_here(EventKind::Transcript { role: Role::Generator, op: TranscriptOp::Snapshot { label: label.clone() } })?;
        }
        let mut request = format!("Sub-task: {} {}\n", decision.task, self.title_of(&decision.task));
        let advice = scrub_private(&decision.concise_solution, &self.state.private_history);
        if !advice.trim().is_empty() {
            request.push_str(&format!("Planner advice: {}\n", flatten(&advice)));
        }
        if let Some(feedback) = &self.state.feedback {
            request.push_str(&format!("\nReviewer feedback:\n{}\n", scrub_private(feedback, &self.state.private_history)));
        }
        request.push_str("\nGive the guidance for this sub-task only.");
        let prefix = self.system_prefix(Role::Generator)?;
        let mut context = prefix.clone();
        let t = self.state.transcript(Role::Generator);
        context.extend(t.system_messages().cloned());
        context.extend(t.since(&label).map(|m| m.iter().filter(|m| m.author != Author::System).cloned().collect::<Vec<_>>()).unwrap_or_default());
        let reply = self.chat(Role::Generator, context, request, prefix)?;
        self.emit(EventKind::GuidanceProposed { source: Role::Generator, raw: reply.clone() }, then)?;
        if !reflector {
            let guidance = parse_guidance(&reply, decision.task.clone(), self.state.os_tag)
                .unwrap_or_else(|_| fallback_guidance(&reply, decision.task.clone(), self.state.os_tag, &self.title_of(&decision.task)));
            return self.guidance_ready(Role::Generator, guidance);
        }
        Ok(())
    }

    fn guidance_ready(&mut self, source: Role, guidance: Guidance) -> Result<(), EngineError> {
        let task = guidance.task.clone();
        let commands = guidance.commands().map(|c| c.command.clone()).collect();
        self.emit_here(EventKind::GuidanceReady { source, guidance })?;
        self.emit(EventKind::ExecutionRequested { task, commands }, Step::AwaitExecution)
    }

    fn guidance_source(&self) -> Role {
        if self.state.toggles.generator_enabled { Role::Generator } else { Role::Planner }
    }

    fn producing_step_for_guidance(&self) -> Step {
        if self.state.toggles.generator_enabled { Step::Generate } else { Step::TaskSelect }
    }

    fn guidance_review(&mut self) -> Result<(), EngineError> {
        let (Some(raw), Some(task)) = (self.state.guidance_candidate.clone(), self.review_ctx_task()) else {
            return self.task_select();
        };
        let reflection = self.reflect(ReviewTarget::GuidanceOutput, &raw, &[], Some(&task))?;
        if reflection.verdict == Verdict::Approve {
            if let Ok(guidance) = parse_guidance(&raw, task, self.state.os_tag) {
                self.emit_here(EventKind::ReflectionIssued { reflection })?;
                return self.guidance_ready(self.guidance_source(), guidance);
            }
        }
        let back = self.producing_step_for_guidance();
        self.reject(Step::GuidanceReview, reflection, back, vec![raw])
    }

    /// Where an accepted result goes next.
    fn result_route(&self) -> Step {
        if self.state.toggles.analyst_enabled {
            Step::Analyze
        } else if self.state.toggles.planner_enabled {
            Step::PlanUpdate
        } else {
            Step::TaskSelect
        }
    }

    /// With neither analyst nor planner the outcome is written onto the task
    /// node directly.
    fn record_mechanically(&mut self, then: Step) -> Result<(), EngineError> {
        let Some(result) = self.state.pending_result.clone() else { return Ok(()) };
        let recorded = record_result(&self.state.irt, &result.task, &result.text, ResultMark::Completed)?;
        let next = apply_update(&self.state.irt, &UpdateProposal::new(None, recorded, "result recorded without analysis"))?;
        let done = is_complete(&next);
        self.emit(EventKind::IrtUpdated { produced_by: None, irt: next }, then)?;
        if done {
            self.finish()?;
        }
        Ok(())
    }

    fn after_result_accepted(&mut self) -> Result<(), EngineError> {
        if self.result_route() == Step::TaskSelect {
            return self.record_mechanically(Step::TaskSelect);
        }
        Ok(())
    }

    fn receive_result(&mut self, text: &str) -> Result<(), EngineError> {
        let task = self
            .state
            .pending_guidance
            .as_ref()
            .map(|g| g.task.clone())
            .or_else(|| self.review_ctx_task())
            .ok_or(EngineError::InvalidStepInput { step: Step::AwaitExecution })?;
        let (redacted, report) = self.redactor.redact(text);
        let reflector = self.state.toggles.reflector_enabled;
        let then = if reflector { Step::ResultScreen } else { self.result_route() };
        self.emit(EventKind::ResultReceived { task, redacted, report }, then)?;
        if !reflector {
            self.after_result_accepted()?;
        }
        Ok(())
    }

    fn result_screen(&mut self) -> Result<(), EngineError> {
        let Some(result) = self.state.pending_result.clone() else {
            return self.task_select();
        };
        let reflection = self.reflect(ReviewTarget::ExecutionResult, &result.text, &[], Some(&result.task))?;
        if reflection.verdict == Verdict::Approve {
            let route = self.result_route();
            self.emit(EventKind::ReflectionIssued { reflection }, route)?;
            return self.after_result_accepted();
        }
        let back = self.producing_step_for_guidance();
        self.reject(Step::ResultScreen, reflection, back, vec![result.text])
    }

    fn analyze_result(&mut self) -> Result<(), EngineError> {
        let Some(result) = self.state.pending_result.clone() else {
            return self.task_select();
        };
        let irt = self.state.irt.clone();
        let config = self.state.config.analysis;
        let outcome = analyze(&result.text, &irt, &result.task, &config, |_, request| self.chat_isolated(Role::Analyst, request.to_string()));
        let planner = self.state.toggles.planner_enabled;
        let why = match outcome {
            Ok(outcome) => match apply_update(&irt, &outcome.proposed_update) {
                Ok(next) => {
                    let done = is_complete(&next);
                    self.emit_here(EventKind::AnalysisReady { task: result.task.clone(), outcome: Some(outcome), needs_review: None })?;
                    let then = if done { Step::Analyze } else if planner { Step::PlanUpdate } else { Step::TaskSelect };
                    self.emit(EventKind::IrtUpdated { produced_by: Some(Role::Analyst), irt: next }, then)?;
                    if done {
                        self.finish()?;
                    }
                    return Ok(());
                }
                Err(e) => e.to_string(),
            },
            Err(AnalysisError::Provider(e)) => return Err(e),
            Err(other) => other.to_string(),
        };
        if planner {
            self.emit(EventKind::AnalysisReady { task: result.task, outcome: None, needs_review: Some(why) }, Step::PlanUpdate)
        } else {
            self.emit_here(EventKind::AnalysisReady { task: result.task, outcome: None, needs_review: Some(why.clone()) })?;
            self.pause(PauseReason::NoViableBranch, Step::Analyze, why, vec![result.text])
        }
    }

    /// Responder decision on a paused session.
    pub fn resolve_override(&mut self, action: OverrideAction, note: Option<String>) -> Result<(), EngineError> {
        let pause = self.state.paused.clone().ok_or(EngineError::NotPaused)?;
        let at = pause.at;
        let resumed = |note: Option<String>| EventKind::SessionResumed { action, at, note };
        match action {
            OverrideAction::Approve => match at {
                Step::IrtReview | Step::PlanUpdate => {
                    let proposal = self
                        .state
                        .pending_proposal
                        .as_ref()
                        .and_then(|p| p.proposal.clone())
                        .ok_or_else(|| EngineError::InvalidOverride("the rejected reply holds no parseable tree".to_string()))?;
                    let tree = self.accept_tree(&proposal).map_err(|v| {
                        EngineError::InvalidOverride(format!(
                            "the tree violates constraints: {}",
                            v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
                        ))
                    })?;
                    self.emit_here(resumed(note))?;
                    self.emit(EventKind::IrtUpdated { produced_by: proposal.produced_by, irt: tree }, Step::TaskSelect)
                }
                Step::DecisionReview => {
                    let candidates = select_candidates(&self.state.irt, self.state.config.candidate_limit);
                    match &self.state.pending_decision {
                        Some(d) if candidates.contains(&d.task) => self.emit(resumed(note), Step::Generate),
                        _ => Err(EngineError::InvalidOverride("the decision is not a pending sub-task".to_string())),
                    }
                }
                Step::GuidanceReview => {
                    let raw = self.state.guidance_candidate.clone().unwrap_or_default();
                    let task = self.review_ctx_task().ok_or_else(|| EngineError::InvalidOverride("no decision in force".to_string()))?;
                    let guidance = parse_guidance(&raw, task, self.state.os_tag)
                        .map_err(|e| EngineError::InvalidOverride(format!("guidance cannot be used: {e}")))?;
                    self.emit_here(resumed(note))?;
                    self.guidance_ready(self.guidance_source(), guidance)
                }
                Step::ResultScreen => {
                    let route = self.result_route();
                    self.emit(resumed(note), route)?;
                    self.after_result_accepted()
                }
                Step::Analyze => {
                    self.emit_here(resumed(note))?;
                    self.record_mechanically(Step::TaskSelect)
                }
                _ => Err(EngineError::InvalidOverride(format!("nothing to approve at {at}"))),
            },
            OverrideAction::Retry => {
                let then = match at {
                    Step::IrtReview | Step::PlanUpdate => Step::PlanUpdate,
                    Step::DecisionReview => Step::TaskSelect,
                    Step::GuidanceReview | Step::ResultScreen | Step::Analyze => self.producing_step_for_guidance(),
                    Step::TaskSelect if self.state.toggles.planner_enabled && pause.reason == PauseReason::NoPendingTasks => Step::PlanUpdate,
                    _ => Step::TaskSelect,
                };
                self.emit(resumed(note), then)
            }
            OverrideAction::Discard => match at {
                Step::IrtReview | Step::PlanUpdate => {
                    let then = if self.state.irt.revision == 0 { Step::PlanUpdate } else { Step::TaskSelect };
                    self.emit(resumed(note), then)
                }
                Step::TaskSelect if pause.reason == PauseReason::TaskStalled => {
                    self.emit_here(resumed(note))?;
                    let task: NodeId = pause.candidates.first().and_then(|c| c.parse().ok()).ok_or_else(|| EngineError::InvalidOverride("no stalled task recorded".to_string()))?;
                    let recorded = record_result(&self.state.irt, &task, "skipped by the responder", ResultMark::Completed)?;
                    let next = apply_update(&self.state.irt, &UpdateProposal::new(None, recorded, "skipped by the responder"))?;
                    let done = is_complete(&next);
                    self.emit(EventKind::IrtUpdated { produced_by: None, irt: next }, Step::TaskSelect)?;
                    if done {
                        self.finish()?;
                    }
                    Ok(())
                }
                Step::ResultScreen | Step::Analyze => {
                    let then = self.producing_step_for_guidance();
                    self.emit(resumed(note), then)
                }
                _ => self.emit(resumed(note), Step::TaskSelect),
            },
        }
    }
}

/// One prose step carrying whatever commands the text holds.
fn fallback_guidance(text: &str, task: NodeId, os_tag: OsTag, title: &str) -> Guidance {
    let commands = extract_commands(text, os_tag).unwrap_or_default();
    let mut instruction = flatten(&text.replace('$', ""));
    if instruction.is_empty() {
        instruction = format!("Investigate sub-task {task} {title}").trim().to_string();
    }
    Guidance {
        task,
        os_tag,
        strategies: vec![Strategy { description: "Suggested approach".to_string(), steps: vec![GuidanceStep { instruction, commands }] }],
        raw_text: text.to_string(),
    }
}
