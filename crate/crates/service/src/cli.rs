use std::io::{BufRead, Write};
use std::sync::Arc;
use std::thread;

use ircopilot_bench::{replay, BenchReport, BenchTask, Suite, TrialRun, TrialSettings};
use ircopilot_core::engine::{EventSink, Executor, OverrideAction, SessionSetup, Step};
use ircopilot_core::provider::MockProvider;

use crate::providers::ProviderSpec;
use crate::render;
use crate::runtime::{Input, SessionHandle};
use crate::store::{SessionManifest, SessionStatus, Store};
use crate::{Result, ServiceError};

/// Line that ends a pasted result block.
pub const END_MARKER: &str = "END";

fn parse_override(line: &str) -> Option<(OverrideAction, Option<String>)> {
    let line = line.trim();
    let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let action = match word {
        "/approve" => OverrideAction::Approve,
        "/retry" => OverrideAction::Retry,
        "/discard" => OverrideAction::Discard,
        _ => return None,
    };
    let note = rest.trim();
    Some((action, (!note.is_empty()).then(|| note.to_string())))
}

fn io_err(e: std::io::Error) -> ServiceError {
    ServiceError::storage("terminal", e)
}

/// Drives a session from a terminal: prints guidance cards and pause
/// notices, reads pasted results and override commands. Returns the step
/// the session is left in when input ends.
pub fn run_interactive(handle: &SessionHandle, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<Step> {
    let mut shown_revision = None;
    loop {
        let step = handle.wait_idle()?;
        let view = handle.view();
        let state = view.state.as_ref().ok_or(ServiceError::WorkerGone)?;
        if shown_revision != Some(state.irt.revision) {
            writeln!(out, "{}\n", render::irt_text(state)).map_err(io_err)?;
            shown_revision = Some(state.irt.revision);
        }
        match step {
            Step::Done => {
                write!(out, "== Session done ==\n{}", render::summary(state)).map_err(io_err)?;
                return Ok(step);
            }
            Step::AwaitExecution => {
                if let Some(card) = render::pending_card(state) {
                    write!(out, "{card}").map_err(io_err)?;
                }
                writeln!(out, "Paste the output, then a line with {END_MARKER}. `/planner <text>` sends a private note.")
                    .map_err(io_err)?;
                let mut block = Vec::new();
                let mut ended = false;
                loop {
                    let mut line = String::new();
                    if input.read_line(&mut line).map_err(io_err)? == 0 {
                        break;
                    }
                    let trimmed = line.trim_end_matches(['\n', '\r']);
                    if trimmed.trim() == END_MARKER {
                        ended = true;
                        break;
                    }
                    if let Some(note) = trimmed.strip_prefix("/planner ") {
                        if let Err(e) = handle.submit(Input::PlannerMessage(note.to_string()), true) {
                            writeln!(out, "! {e}").map_err(io_err)?;
                        }
                        continue;
                    }
                    block.push(trimmed.to_string());
                }
                if !ended && block.is_empty() {
                    return Ok(step);
                }
                if let Err(e) = handle.submit(Input::Result(block.join("\n")), true) {
                    writeln!(out, "! {e}").map_err(io_err)?;
                }
            }
            Step::AwaitUser => {
                if let Some(info) = &state.paused {
                    write!(out, "{}", render::pause_notice(info)).map_err(io_err)?;
                }
                writeln!(out, "Resolve with /approve, /retry [note] or /discard [note].").map_err(io_err)?;
                let mut line = String::new();
                if input.read_line(&mut line).map_err(io_err)? == 0 {
                    return Ok(step);
                }
                match parse_override(&line) {
                    Some((action, note)) => {
                        if let Err(e) = handle.submit(Input::Override { action, note }, true) {
                            writeln!(out, "! {e}").map_err(io_err)?;
                        }
                    }
                    None => writeln!(out, "! unrecognised command").map_err(io_err)?,
                }
            }
            other => {
                if let Some(err) = &view.last_error {
                    writeln!(out, "! engine stopped at {other}: {err}").map_err(io_err)?;
                }
                return Ok(other);
            }
        }
    }
}

/// Drives a session with `executor` answering every execution request.
pub fn run_scripted(handle: &SessionHandle, executor: &mut dyn Executor) -> Result<Step> {
    loop {
        let step = handle.wait_idle()?;
        if step != Step::AwaitExecution {
            return Ok(step);
        }
        let guidance = handle.with_view(|v| v.state.as_ref().and_then(|s| s.pending_guidance.clone()));
        let Some(guidance) = guidance else { return Ok(step) };
        let output = executor.execute(&guidance);
        handle.submit(Input::Result(output), true)?;
    }
}

/// Session setup taken from a benchmark task document.
pub fn setup_for_task(session_id: &str, task: &BenchTask) -> SessionSetup {
    let mut setup = SessionSetup::new(session_id, task.goal(), task.os_tag);
    setup.system_info = task.system_info.clone();
    setup
}

/// Where benchmark trials get their provider.
#[derive(Debug, Clone)]
pub enum BenchProvider {
    /// `mock/<task>[.<trial>].json` fixtures of the suite.
    SuiteFixtures,
    Live(ProviderSpec),
}

fn trial_sink(
    store: Option<&Store>,
    task: &BenchTask,
    trial: u32,
    settings: &TrialSettings,
    provider: &str,
    model: &str,
) -> Result<Option<Box<dyn EventSink>>> {
    let Some(store) = store else { return Ok(None) };
    let manifest = SessionManifest {
        session_id: format!("{}-{}-{trial}", task.id, settings.method),
        created_at: chrono::Utc::now(),
        provider: provider.to_string(),
        model: model.to_string(),
        os_tag: task.os_tag,
        toggles: settings.toggles,
        status: SessionStatus::Active,
    };
    let mut log = store.create(&manifest)?;
    Ok(Some(Box::new(move |e: &ircopilot_core::engine::Event| log.persist_event(e).map(|_| ()).map_err(|e| e.to_string()))))
}

/// Runs `trials` trials of every suite task, tasks in parallel, and
/// aggregates them. With a store, each trial's events are persisted as a
/// session named `<task>-<method>-<trial>`.
pub fn bench_run(
    suite: &Suite,
    provider: &BenchProvider,
    trials: u32,
    settings: &TrialSettings,
    store: Option<&Store>,
) -> Result<(BenchReport, Vec<TrialRun>)> {
    if trials == 0 {
        return Err(ServiceError::InvalidInput("at least one trial is required".into()));
    }
    let per_task: Vec<Result<Vec<TrialRun>>> = thread::scope(|scope| {
        let workers: Vec<_> = suite
            .tasks
            .iter()
            .map(|task| {
                scope.spawn(move || {
                    let mut runs = Vec::new();
                    for trial in 0..trials {
                        let (chat, label) = match provider {
                            BenchProvider::SuiteFixtures => {
                                let path = suite.mock_fixture(&task.id, trial).ok_or_else(|| {
                                    ServiceError::InvalidInput(format!("no mock fixture for task {} trial {trial}", task.id))
                                })?;
                                let chat: Arc<dyn ircopilot_core::provider::ChatProvider> = Arc::new(MockProvider::load(&path)?);
                                (chat, "mock")
                            }
                            BenchProvider::Live(spec) => (spec.build()?, spec.label()),
                        };
                        let sink = trial_sink(store, task, trial, settings, label, chat.model())?;
                        runs.push(replay(task, trial, chat, settings, sink)?);
                    }
                    Ok(runs)
                })
            })
            .collect();
        workers.into_iter().map(|w| w.join().expect("bench worker panicked")).collect()
    });
    let mut runs = Vec::new();
    for r in per_task {
        runs.extend(r?);
    }
    let records: Vec<_> = runs.iter().map(|r| r.record.clone()).collect();
    Ok((BenchReport::build(suite, &settings.method, &records)?, runs))
}
