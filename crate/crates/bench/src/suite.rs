use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ircopilot_core::irt::OsTag;

use crate::difficulty::{score_difficulty, Difficulty};
use crate::taxonomy::{category_phase, Phase};
use crate::BenchError;

pub const MANIFEST: &str = "suite.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grading {
    ExactMatch,
    ContainsNormalized,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub id: String,
    pub description: String,
    pub phase: Phase,
    pub category: String,
    #[serde(default)]
    pub expected_answer: Option<String>,
    /// Defaults to exact matching for flag-shaped answers and normalized
    /// containment otherwise.
    #[serde(default)]
    pub grading: Option<Grading>,
}

pub(crate) fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn flag_shaped(answer: &str) -> bool {
    let a = answer.trim();
    a.ends_with('}') && a.find('{').is_some_and(|i| i > 0 && a[..i].chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl SubTask {
    pub fn grading(&self) -> Grading {
        self.grading.unwrap_or_else(|| match &self.expected_answer {
            Some(a) if flag_shaped(a) => Grading::ExactMatch,
            _ => Grading::ContainsNormalized,
        })
    }

    /// Whether `value` answers this sub-task. Manual sub-tasks never grade
    /// automatically.
    pub fn accepts(&self, value: &str) -> bool {
        let Some(expected) = &self.expected_answer else { return false };
        match self.grading() {
            Grading::ExactMatch => value.trim() == expected.trim(),
            Grading::ContainsNormalized => {
                let want = normalize(expected);
                !want.is_empty() && normalize(value).contains(&want)
            }
            Grading::Manual => false,
        }
    }
}

/// Canned executor outputs for one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub command_responses: BTreeMap<String, String>,
    pub default_response: String,
    #[serde(default)]
    pub files: Option<Vec<String>>,
}

pub fn normalize_command(cmd: &str) -> String {
    cmd.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ScenarioScript {
    fn normalized(mut self) -> Self {
        self.command_responses = self.command_responses.into_iter().map(|(k, v)| (normalize_command(&k), v)).collect();
        self
    }

    pub fn response(&self, command: &str) -> Option<&str> {
        self.command_responses.get(&normalize_command(command)).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTask {
    pub id: String,
    pub platform: String,
    pub title: String,
    pub os_tag: OsTag,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub raw_scores: Option<Vec<u8>>,
    /// What the responder tells the copilot at session start.
    #[serde(default)]
    pub brief: String,
    #[serde(default)]
    pub system_info: String,
    pub sub_tasks: Vec<SubTask>,
    pub scenario: ScenarioScript,
}

impl BenchTask {
    pub fn goal(&self) -> String {
        if !self.brief.trim().is_empty() {
            return self.brief.trim().to_string();
        }
        self.sub_tasks.iter().map(|s| s.description.as_str()).collect::<Vec<_>>().join("; ")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let id = self.id.as_str();
        if id.trim().is_empty() {
            return Err(BenchError::schema("?", "id", "task id is empty"));
        }
        if self.sub_tasks.is_empty() {
            return Err(BenchError::schema(id, "sub_tasks", "a task needs at least one sub-task"));
        }
        let mut seen = BTreeSet::new();
        for (i, sub) in self.sub_tasks.iter().enumerate() {
            let field = |name: &str| format!("sub_tasks[{i}].{name}");
            if !seen.insert(sub.id.as_str()) {
                return Err(BenchError::schema(id, field("id"), format!("duplicate sub-task id `{}`", sub.id)));
            }
            match category_phase(&sub.category) {
                None => return Err(BenchError::schema(id, field("category"), format!("`{}` is not a known category", sub.category))),
                Some(p) if p != sub.phase => {
                    return Err(BenchError::schema(id, field("phase"), format!("`{}` belongs to {p:?}, not {:?}", sub.category, sub.phase)))
                }
                _ => {}
            }
            if sub.grading() != Grading::Manual && sub.expected_answer.as_deref().is_none_or(|a| a.trim().is_empty()) {
                return Err(BenchError::schema(id, field("expected_answer"), "automatic grading needs an expected answer"));
            }
        }
        if let Some(raw) = &self.raw_scores {
            let scored = score_difficulty(raw).map_err(|e| BenchError::schema(id, "raw_scores", e.to_string()))?;
            if scored.level != Some(self.difficulty) {
                let got = scored.level.map_or("no majority".to_string(), |l| format!("{l:?}"));
                return Err(BenchError::schema(id, "difficulty", format!("{:?} does not match raw scores {raw:?} ({got})", self.difficulty)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct Manifest {
    name: String,
    tasks: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub name: String,
    pub root: PathBuf,
    pub tasks: Vec<BenchTask>,
}

impl Suite {
    pub fn sub_task_count(&self) -> usize {
        self.tasks.iter().map(|t| t.sub_tasks.len()).sum()
    }

    pub fn task(&self, id: &str) -> Option<&BenchTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Mock provider script for a trial: `mock/<task>.<trial>.json` when
    /// present, else `mock/<task>.json`.
    pub fn mock_fixture(&self, task: &str, trial: u32) -> Option<PathBuf> {
        let dir = self.root.join("mock");
        [dir.join(format!("{task}.{trial}.json")), dir.join(format!("{task}.json"))].into_iter().find(|p| p.is_file())
    }
}

fn read(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

pub fn load_task(path: &Path) -> Result<BenchTask, BenchError> {
    let mut task: BenchTask =
        serde_json::from_str(&read(path)?).map_err(|source| BenchError::Json { path: path.to_path_buf(), source })?;
    task.scenario = task.scenario.normalized();
    task.validate()?;
    Ok(task)
}

/// Loads `suite.json` and every task document it lists.
pub fn load_suite(dir: &Path) -> Result<Suite, BenchError> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read(&manifest_path)?)
        .map_err(|source| BenchError::Json { path: manifest_path.clone(), source })?;
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    let mut ids = BTreeSet::new();
    for rel in &manifest.tasks {
        let task = load_task(&dir.join(rel))?;
        if !ids.insert(task.id.clone()) {
            return Err(BenchError::schema(&task.id, "id", "task id appears twice in the suite"));
        }
        tasks.push(task);
    }
    Ok(Suite { name: manifest.name, root: dir.to_path_buf(), tasks })
}

/// The sample suite shipped with the crate.
pub fn sample_suite_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("suites").join("sample")
}
