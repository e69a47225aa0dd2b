use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Role, SessionError};
use crate::irt::OsTag;

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

const PLACEHOLDERS: [&str; 5] = ["os_tag", "irt_text", "task", "context", "examples"];

const PLANNER_RULES: &str = include_str!("../../prompts/planner/rules.txt");
const REFLECTOR_EXAMPLES: &str = include_str!("../../prompts/reflector/examples.txt");

const BUILTIN: [(Role, ScenarioKind, &str); 6] = [
    (Role::Planner, ScenarioKind::Any, include_str!("../../prompts/planner/any.txt")),
    (Role::Planner, ScenarioKind::ClearObjectives, include_str!("../../prompts/planner/clear_objectives.txt")),
    (Role::Planner, ScenarioKind::UnclearObjectives, include_str!("../../prompts/planner/unclear_objectives.txt")),
    (Role::Generator, ScenarioKind::Any, include_str!("../../prompts/generator/any.txt")),
    (Role::Reflector, ScenarioKind::Any, include_str!("../../prompts/reflector/any.txt")),
    (Role::Analyst, ScenarioKind::Any, include_str!("../../prompts/analyst/any.txt")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ClearObjectives,
    UnclearObjectives,
    Any,
}

impl ScenarioKind {
    pub fn file_stem(&self) -> &'static str {
        match self {
            ScenarioKind::ClearObjectives => "clear_objectives",
            ScenarioKind::UnclearObjectives => "unclear_objectives",
            ScenarioKind::Any => "any",
        }
    }

    pub fn has_procedures(&self) -> bool {
        matches!(self, ScenarioKind::UnclearObjectives)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// Role templates keyed by `(role, scenario kind)`, with the planner rule
/// block and the reviewer example block kept as separate pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    templates: BTreeMap<(Role, ScenarioKind), String>,
    planner_rules: String,
    examples: String,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        PromptLibrary {
            templates: BUILTIN.iter().map(|(r, k, body)| ((*r, *k), body.to_string())).collect(),
            planner_rules: PLANNER_RULES.to_string(),
            examples: REFLECTOR_EXAMPLES.to_string(),
        }
    }
}

impl PromptLibrary {
    /// Built-in templates overlaid with any `<dir>/<role>/<kind>.txt` files.
    pub fn with_overrides(dir: &Path) -> Result<Self, SessionError> {
        let mut lib = PromptLibrary::default();
        let read = |path: &Path| std::fs::read_to_string(path).map_err(|e| SessionError::TemplateIo(format!("{}: {e}", path.display())));
        for role in Role::ALL {
            for kind in [ScenarioKind::ClearObjectives, ScenarioKind::UnclearObjectives, ScenarioKind::Any] {
                let path = dir.join(role.as_str()).join(format!("{}.txt", kind.file_stem()));
                if path.is_file() {
                    lib.templates.insert((role, kind), read(&path)?);
                }
            }
        }
        let rules = dir.join("planner").join("rules.txt");
        if rules.is_file() {
            lib.planner_rules = read(&rules)?;
        }
        let examples = dir.join("reflector").join("examples.txt");
        if examples.is_file() {
            lib.examples = read(&examples)?;
        }
        lib.check()?;
        Ok(lib)
    }

    fn check(&self) -> Result<(), SessionError> {
        for ((role, kind), body) in &self.templates {
            for caps in PLACEHOLDER.captures_iter(body) {
                if !PLACEHOLDERS.contains(&&caps[1]) {
                    return Err(SessionError::MissingPlaceholder {
                        name: format!("{role}/{kind}"),
                        placeholder: caps[1].to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn template(&self, role: Role, kind: ScenarioKind) -> Result<&str, SessionError> {
        self.templates
            .get(&(role, kind))
            .or_else(|| self.templates.get(&(role, ScenarioKind::Any)))
            .map(String::as_str)
            .ok_or(SessionError::MissingTemplate { role, kind })
    }

    /// Fills a template from `vars`. Every placeholder the body references
    /// must be present.
    pub fn render(&self, role: Role, kind: ScenarioKind, vars: &BTreeMap<&str, String>) -> Result<String, SessionError> {
        let body = self.template(role, kind)?;
        let mut missing = None;
        let filled = PLACEHOLDER.replace_all(body, |caps: &regex::Captures| match vars.get(&caps[1]) {
            Some(v) => v.clone(),
            None => {
                missing.get_or_insert_with(|| caps[1].to_string());
                String::new()
            }
        });
        if let Some(placeholder) = missing {
            return Err(SessionError::MissingPlaceholder { name: format!("{role}/{kind}"), placeholder });
        }
        let mut text = filled.into_owned();
        if role == Role::Planner {
            text = format!("{}{}", self.planner_rules.trim_end(), text);
        }
        Ok(text.trim().to_string())
    }

    pub fn build_system_prompt(&self, role: Role, os_tag: OsTag, kind: ScenarioKind) -> Result<String, SessionError> {
        let mut vars = BTreeMap::new();
        vars.insert("os_tag", os_tag.to_string());
        vars.insert("examples", self.examples.trim().to_string());
        self.render(role, kind, &vars)
    }

    pub fn planner_rules(&self) -> &str {
        &self.planner_rules
    }
}
