use std::sync::{mpsc, Arc, RwLock};
use std::thread;

use chrono::Utc;
use tokio::sync::broadcast;

use ircopilot_core::engine::{Engine, EngineError, EngineState, Event, OverrideAction, SessionSetup, Step};
use ircopilot_core::privacy::Redactor;
use ircopilot_core::provider::{ChatProvider, PriceTable};
use ircopilot_core::session::PromptLibrary;

use crate::providers::ProviderSpec;
use crate::store::{SessionLog, SessionManifest, SessionStatus, Store};
use crate::{Result, ServiceError};

/// Shared, read-only configuration for every session of a process.
pub struct Services {
    pub prices: PriceTable,
    pub prompts: Arc<PromptLibrary>,
    pub redactor: Arc<Redactor>,
    /// Transitions a worker runs on its own before it waits for input.
    pub auto_step_limit: usize,
}

impl Default for Services {
    fn default() -> Self {
        Services {
            prices: PriceTable::builtin(),
            prompts: Arc::new(PromptLibrary::default()),
            redactor: Arc::new(Redactor::default()),
            auto_step_limit: 200,
        }
    }
}

/// Responder inputs, queued to the session worker.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Result(String),
    PlannerMessage(String),
    Override { action: OverrideAction, note: Option<String> },
}

#[derive(Debug, Clone)]
pub struct SessionView {
    pub state: Option<EngineState>,
    pub events: Vec<Event>,
    pub busy: bool,
    pub last_error: Option<String>,
    /// Set after a storage failure; the worker refuses further input.
    pub failed: bool,
}

impl SessionView {
    fn empty() -> Self {
        SessionView { state: None, events: Vec::new(), busy: true, last_error: None, failed: false }
    }

    pub fn step(&self) -> Option<Step> {
        self.state.as_ref().map(|s| s.step)
    }
}

enum Request {
    Input { input: Input, wait: bool, reply: mpsc::SyncSender<Result<Step>> },
    Sync(mpsc::SyncSender<Step>),
}

/// Client side of one session worker. Clones share the worker.
#[derive(Clone)]
pub struct SessionHandle {
    id: String,
    tx: mpsc::Sender<Request>,
    bus: broadcast::Sender<Event>,
    view: Arc<RwLock<SessionView>>,
}

fn waiting(step: Step) -> bool {
    matches!(step, Step::AwaitExecution | Step::AwaitUser | Step::Done)
}

struct Worker {
    engine: Engine,
    view: Arc<RwLock<SessionView>>,
    limit: usize,
}

impl Worker {
    fn set_busy(&self, busy: bool) {
        self.view.write().expect("view lock").busy = busy;
    }

    fn record_error(&self, err: &EngineError) {
        let mut view = self.view.write().expect("view lock");
        view.last_error = Some(err.to_string());
        if matches!(err, EngineError::Storage(_)) {
            view.failed = true;
        }
    }

    /// Runs automatic transitions until the engine needs the responder.
    fn settle(&mut self) {
        self.set_busy(true);
        for _ in 0..self.limit {
            if waiting(self.engine.step()) || self.view.read().expect("view lock").failed {
                break;
            }
            if let Err(e) = self.engine.advance(None) {
                self.record_error(&e);
                break;
            }
        }
        self.set_busy(false);
    }

    fn apply(&mut self, input: Input) -> Result<Step> {
        if self.view.read().expect("view lock").failed {
            return Err(ServiceError::WorkerGone);
        }
        let outcome = match input {
            Input::Result(text) => self.engine.advance(Some(&text)),
            Input::PlannerMessage(text) => self.engine.direct_planner_message(&text),
            Input::Override { action, note } => self.engine.resolve_override(action, note),
        };
        if let Err(e) = &outcome {
            if matches!(e, EngineError::Storage(_) | EngineError::Provider(_)) {
                self.record_error(e);
            }
        } else {
            self.view.write().expect("view lock").last_error = None;
        }
        outcome.map(|_| self.engine.step()).map_err(Into::into)
    }

    fn run(mut self, rx: mpsc::Receiver<Request>) {
        self.settle();
        while let Ok(request) = rx.recv() {
            match request {
                Request::Sync(reply) => {
                    let _ = reply.send(self.engine.step());
                }
                Request::Input { input, wait, reply } => {
                    if !waiting(self.engine.step()) {
                        self.settle();
                    }
                    let result = self.apply(input);
                    if wait || result.is_err() {
                        if result.is_ok() {
                            self.settle();
                        }
                        let _ = reply.send(result.map(|_| self.engine.step()));
                    } else {
                        let _ = reply.send(result);
                        self.settle();
                    }
                }
            }
        }
    }
}

fn sink_for(
    mut log: SessionLog,
    view: Arc<RwLock<SessionView>>,
    bus: broadcast::Sender<Event>,
) -> impl FnMut(&Event) -> Result<(), String> + Send {
    move |event: &Event| {
        log.persist_event(event).map_err(|e| e.to_string())?;
        {
            let mut v = view.write().expect("view lock");
            match v.state.as_mut() {
                Some(state) => state.apply(event).map_err(|e| e.to_string())?,
                None => v.state = Some(EngineState::replay(std::slice::from_ref(event)).map_err(|e| e.to_string())?),
            }
            v.events.push(event.clone());
        }
        let _ = bus.send(event.clone());
        Ok(())
    }
}

impl SessionHandle {
    /// Creates the session on disk and starts its worker. Blocks until the
    /// engine has started (classification and the first plan included).
    pub fn start(store: &Store, setup: SessionSetup, spec: &ProviderSpec, services: Arc<Services>) -> Result<SessionHandle> {
        let provider = spec.build()?;
        services.prices.price(provider.model()).map_err(EngineError::from)?;
        setup.toggles.validate()?;
        if setup.goal.trim().is_empty() {
            return Err(EngineError::EmptyGoal.into());
        }
        let manifest = SessionManifest {
            session_id: setup.session_id.clone(),
            created_at: Utc::now(),
            provider: spec.label().to_string(),
            model: provider.model().to_string(),
            os_tag: setup.os_tag,
            toggles: setup.toggles,
            status: SessionStatus::Active,
        };
        let log = store.create(&manifest)?;
        Self::spawn(setup.session_id.clone(), log, SessionView::empty(), services, move |sink, services| {
            Engine::start(setup, provider, &services.prices, services.prompts.clone(), services.redactor.clone(), sink)
        })
    }

    /// Reopens a persisted session with a fresh provider.
    pub fn resume(store: &Store, id: &str, spec: &ProviderSpec, services: Arc<Services>) -> Result<SessionHandle> {
        let events = store.load_events(id)?;
        let provider: Arc<dyn ChatProvider> = spec.build()?;
        let log = store.open_log(id)?;
        let view = SessionView { state: Some(EngineState::replay(&events)?), events: events.clone(), ..SessionView::empty() };
        Self::spawn(id.to_string(), log, view, services, move |sink, services| {
            Engine::resume(events, provider, &services.prices, services.prompts.clone(), services.redactor.clone(), sink)
        })
    }

    fn spawn<F>(id: String, log: SessionLog, initial: SessionView, services: Arc<Services>, make: F) -> Result<SessionHandle>
    where
        F: FnOnce(Box<dyn ircopilot_core::engine::EventSink>, &Services) -> Result<Engine, EngineError> + Send + 'static,
    {
        let view = Arc::new(RwLock::new(initial));
        let (bus, _) = broadcast::channel(1024);
        let (tx, rx) = mpsc::channel::<Request>();
        let (ready_tx, ready_rx) = mpsc::sync_channel::<Result<()>>(1);
        let sink = sink_for(log, view.clone(), bus.clone());
        let worker_view = view.clone();
        thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || {
                let engine = match make(Box::new(sink), &services) {
                    Ok(e) => e,
                    Err(e) => {
                        {
                            let mut v = worker_view.write().expect("view lock");
                            v.last_error = Some(e.to_string());
                            v.busy = false;
                            v.failed = true;
                        }
                        let _ = ready_tx.send(Err(e.into()));
                        return;
                    }
                };
                let _ = ready_tx.send(Ok(()));
                Worker { engine, view: worker_view, limit: services.auto_step_limit }.run(rx);
            })
            .map_err(|e| ServiceError::storage("session worker", e))?;
        ready_rx.recv().map_err(|_| ServiceError::WorkerGone)??;
        Ok(SessionHandle { id, tx, bus, view })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn view(&self) -> SessionView {
        self.view.read().expect("view lock").clone()
    }

    pub fn with_view<T>(&self, f: impl FnOnce(&SessionView) -> T) -> T {
        f(&self.view.read().expect("view lock"))
    }

    /// Events so far plus a receiver for later ones, with no gap between.
    pub fn subscribe(&self) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let rx = self.bus.subscribe();
        let events = self.view.read().expect("view lock").events.clone();
        (events, rx)
    }

    /// Queues `input`. With `wait` the reply comes once the engine needs
    /// the responder again; otherwise as soon as the input is accepted.
    pub fn submit(&self, input: Input, wait: bool) -> Result<Step> {
        let (reply, rx) = mpsc::sync_channel(1);
        self.tx.send(Request::Input { input, wait, reply }).map_err(|_| ServiceError::WorkerGone)?;
        rx.recv().map_err(|_| ServiceError::WorkerGone)?
    }

    /// Blocks until every queued input has been processed and the engine
    /// is waiting.
    pub fn wait_idle(&self) -> Result<Step> {
        let (reply, rx) = mpsc::sync_channel(1);
        self.tx.send(Request::Sync(reply)).map_err(|_| ServiceError::WorkerGone)?;
        rx.recv().map_err(|_| ServiceError::WorkerGone)
    }
}
