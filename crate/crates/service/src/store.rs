use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use ircopilot_core::engine::{AblationToggles, EngineError, EngineState, Event, EventKind, Step};
use ircopilot_core::irt::{Irt, OsTag};
use ircopilot_core::privacy::{AuditEntry, AuditLog};
use ircopilot_core::session::Role;

use crate::{Result, ServiceError};

const MANIFEST: &str = "manifest.json";
const EVENTS: &str = "events.jsonl";
const AUDIT: &str = "audit.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Active,
    Paused,
    Done,
}

impl SessionStatus {
    pub fn of(step: Step) -> Self {
        match step {
            Step::Done => SessionStatus::Done,
            Step::AwaitUser => SessionStatus::Paused,
            _ => SessionStatus::Active,
        }
    }

    pub fn can_become(self, next: SessionStatus) -> bool {
        use SessionStatus::*;
        matches!((self, next), (Active, Paused) | (Paused, Active) | (Active, Done)) || self == next
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub provider: String,
    pub model: String,
    pub os_tag: OsTag,
    pub toggles: AblationToggles,
    pub status: SessionStatus,
}

/// Session directories under one data root:
/// `<id>/events.jsonl`, `<id>/irt/<rev>.json`, `<id>/transcripts/<role>.jsonl`
/// and `<id>/audit.jsonl`.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.')
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("store documents serialize");
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| ServiceError::storage(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ServiceError::storage(path, e))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| ServiceError::storage(&root, e))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(ServiceError::InvalidInput(format!("session id `{id}` must be alphanumeric with - _ .")));
        }
        Ok(self.root.join(id))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.session_dir(id).map(|d| d.join(MANIFEST).is_file()).unwrap_or(false)
    }

    fn existing_dir(&self, id: &str) -> Result<PathBuf> {
        let dir = self.session_dir(id)?;
        if !dir.join(MANIFEST).is_file() {
            return Err(ServiceError::UnknownSession(id.to_string()));
        }
        Ok(dir)
    }

    /// Creates the session directory and returns its writer.
    pub fn create(&self, manifest: &SessionManifest) -> Result<SessionLog> {
        let dir = self.session_dir(&manifest.session_id)?;
        if dir.join(MANIFEST).exists() {
            return Err(ServiceError::SessionExists(manifest.session_id.clone()));
        }
        for sub in ["irt", "transcripts"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| ServiceError::storage(&d, e))?;
        }
        write_json(&dir.join(MANIFEST), manifest)?;
        self.open_log(&manifest.session_id)
    }

    /// Writer positioned after the last persisted event.
    pub fn open_log(&self, id: &str) -> Result<SessionLog> {
        let dir = self.existing_dir(id)?;
        let last_seq = self.load_events(id)?.last().map_or(0, |e| e.seq);
        let path = dir.join(EVENTS);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| ServiceError::storage(&path, e))?;
        let status = self.manifest(id)?.status;
        Ok(SessionLog {
            store: self.clone(),
            session_id: id.to_string(),
            dir: dir.clone(),
            file,
            last_seq,
            status,
            audit: AuditLog::new(dir.join(AUDIT)),
        })
    }

    pub fn manifest(&self, id: &str) -> Result<SessionManifest> {
        let path = self.existing_dir(id)?.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| ServiceError::storage(&path, e))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::CorruptLog(format!("{}: {e}", path.display())))
    }

    pub fn set_status(&self, id: &str, status: SessionStatus) -> Result<SessionManifest> {
        let mut manifest = self.manifest(id)?;
        if !manifest.status.can_become(status) {
            return Err(ServiceError::StatusTransition { from: manifest.status, to: status });
        }
        if manifest.status != status {
            manifest.status = status;
            write_json(&self.existing_dir(id)?.join(MANIFEST), &manifest)?;
        }
        Ok(manifest)
    }

    pub fn list(&self) -> Result<Vec<SessionManifest>> {
        let entries = fs::read_dir(&self.root).map_err(|e| ServiceError::storage(&self.root, e))?;
        let mut out = Vec::new();
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if self.exists(&name) {
                out.push(self.manifest(&name)?);
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.session_id.cmp(&b.session_id)));
        Ok(out)
    }

    pub fn load_events(&self, id: &str) -> Result<Vec<Event>> {
        let path = self.existing_dir(id)?.join(EVENTS);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(ServiceError::storage(&path, e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| ServiceError::CorruptLog(format!("line {}: {e}", i + 1))))
            .collect()
    }

    /// Folds the persisted log into the session state.
    pub fn replay_session(&self, id: &str) -> Result<EngineState> {
        let events = self.load_events(id)?;
        EngineState::replay(&events).map_err(|e| match e {
            EngineError::CorruptLog(detail) => ServiceError::CorruptLog(detail),
            other => other.into(),
        })
    }

    pub fn irt_revision(&self, id: &str, revision: u64) -> Result<Irt> {
        let path = self.existing_dir(id)?.join("irt").join(format!("{revision}.json"));
        let text = fs::read_to_string(&path).map_err(|e| ServiceError::storage(&path, e))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::CorruptLog(format!("{}: {e}", path.display())))
    }

    /// Transcript operations of one role, one JSON document per line.
    pub fn transcript_lines(&self, id: &str, role: Role) -> Result<Vec<serde_json::Value>> {
        let path = self.existing_dir(id)?.join("transcripts").join(format!("{}.jsonl", role.as_str()));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(ServiceError::storage(&path, e)),
        };
        text.lines()
            .map(|l| serde_json::from_str(l).map_err(|e| ServiceError::CorruptLog(format!("{}: {e}", path.display()))))
            .collect()
    }

    pub fn audit(&self, id: &str) -> Result<Vec<AuditEntry>> {
        let dir = self.existing_dir(id)?;
        AuditLog::new(dir.join(AUDIT)).read().map_err(|e| ServiceError::CorruptLog(e.to_string()))
    }

    /// Appends one event through a fresh writer.
    pub fn persist_event(&self, event: &Event) -> Result<u64> {
        if !self.exists(&event.session_id) {
            return Err(ServiceError::UnknownSession(event.session_id.clone()));
        }
        self.open_log(&event.session_id)?.persist_event(event)
    }
}

/// Single writer for one session's files.
#[derive(Debug)]
pub struct SessionLog {
    store: Store,
    session_id: String,
    dir: PathBuf,
    file: File,
    last_seq: u64,
    status: SessionStatus,
    audit: AuditLog,
}

impl SessionLog {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Durable append, followed by the derived files the event affects.
    pub fn persist_event(&mut self, event: &Event) -> Result<u64> {
        if event.session_id != self.session_id {
            return Err(ServiceError::UnknownSession(event.session_id.clone()));
        }
        if event.seq != self.last_seq + 1 {
            return Err(ServiceError::CorruptLog(format!("expected seq {}, got {}", self.last_seq + 1, event.seq)));
        }
        let path = self.dir.join(EVENTS);
        let line = serde_json::to_string(event).expect("events serialize");
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| ServiceError::storage(&path, e))?;
        self.last_seq = event.seq;

        match &event.kind {
            EventKind::IrtUpdated { irt, .. } => {
                write_json(&self.dir.join("irt").join(format!("{}.json", irt.revision)), irt)?;
            }
            EventKind::SessionStarted { initial_irt: Some(irt), .. } => {
                write_json(&self.dir.join("irt").join(format!("{}.json", irt.revision)), irt)?;
            }
            EventKind::Transcript { role, op } => {
                let path = self.dir.join("transcripts").join(format!("{}.jsonl", role.as_str()));
                let line = serde_json::json!({ "seq": event.seq, "entry": op });
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .and_then(|mut f| writeln!(f, "{line}"))
                    .map_err(|e| ServiceError::storage(&path, e))?;
            }
            EventKind::ResultReceived { report, .. } => {
                self.audit
                    .append(&AuditEntry::new(&self.session_id, report, event.ts))
                    .map_err(|e| ServiceError::storage(self.dir.join(AUDIT), std::io::Error::other(e.to_string())))?;
            }
            _ => {}
        }
        let status = SessionStatus::of(event.then);
        if self.status != status {
            self.store.set_status(&self.session_id, status)?;
            self.status = status;
        }
        Ok(event.seq)
    }
}
