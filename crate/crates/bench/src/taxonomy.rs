use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Detection,
    Response,
    Recovery,
}

/// The closed sub-task category list, grouped by phase.
pub const CATEGORIES: [(Phase, &str); 27] = [
    (Phase::Detection, "System Information Gathering"),
    (Phase::Detection, "Open Port Identification"),
    (Phase::Detection, "Service Enumeration"),
    (Phase::Detection, "Directory Inspection"),
    (Phase::Detection, "Account Security Review"),
    (Phase::Detection, "File Integrity Check"),
    (Phase::Detection, "Other Detections"),
    (Phase::Response, "Historical Command and Behavior Analysis"),
    (Phase::Response, "Permission Review and Management"),
    (Phase::Response, "File Analysis"),
    (Phase::Response, "Malicious File Handling"),
    (Phase::Response, "Startup Item Analysis"),
    (Phase::Response, "Scheduled Task Analysis"),
    (Phase::Response, "Anomaly Behavior Response"),
    (Phase::Response, "Memory and Process Analysis"),
    (Phase::Response, "Malicious Process Handling"),
    (Phase::Response, "System Log Analysis"),
    (Phase::Response, "Application Log Analysis"),
    (Phase::Response, "Network Traffic Analysis"),
    (Phase::Response, "Risky IP Management"),
    (Phase::Response, "Database Analysis"),
    (Phase::Response, "Other Responses"),
    (Phase::Recovery, "System Recovery"),
    (Phase::Recovery, "Data Recovery"),
    (Phase::Recovery, "Service Recovery"),
    (Phase::Recovery, "Vulnerability Patching"),
    (Phase::Recovery, "Other Recoveries"),
];

/// Phase of a category name, matched case-insensitively.
pub fn category_phase(name: &str) -> Option<Phase> {
    let key = normalize(name);
    CATEGORIES.iter().find(|(_, c)| normalize(c) == key).map(|(p, _)| *p)
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureReason {
    FalseIrStrategy,
    FalseCommandGeneration,
    KeyInformationIgnored,
    FalseGuidanceGeneration,
    FalseResultInterpretation,
    SessionContextLost,
}

impl FailureReason {
    pub const ALL: [FailureReason; 6] = [
        FailureReason::FalseIrStrategy,
        FailureReason::FalseCommandGeneration,
        FailureReason::KeyInformationIgnored,
        FailureReason::FalseGuidanceGeneration,
        FailureReason::FalseResultInterpretation,
        FailureReason::SessionContextLost,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            FailureReason::FalseIrStrategy => "False IR Strategy",
            FailureReason::FalseCommandGeneration => "False Command Generation",
            FailureReason::KeyInformationIgnored => "Key Information Ignored",
            FailureReason::FalseGuidanceGeneration => "False Guidance Generation",
            FailureReason::FalseResultInterpretation => "False Result Interpretation",
            FailureReason::SessionContextLost => "Session Context Lost",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FailureReason {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        classify_failure(s)
    }
}

/// Maps a free-text failure label onto the closed taxonomy. Accepts the
/// table spelling, its "Commands" plural, the "Response" synonym for
/// strategy, CamelCase identifiers, and trailing qualifiers in parentheses.
pub fn classify_failure(label: &str) -> Result<FailureReason, BenchError> {
    let head = label.split('(').next().unwrap_or(label);
    let mut spaced = String::new();
    for (i, ch) in head.trim().chars().enumerate() {
        if i > 0 && ch.is_uppercase() && spaced.chars().last().is_some_and(|c| c.is_lowercase()) {
            spaced.push(' ');
        }
        spaced.push(ch);
    }
    let words: Vec<String> = spaced
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    let key = words.join(" ");
    let reason = match key.as_str() {
        "false ir strategy" | "false response strategy" | "false incident response strategy" | "falseir strategy" => {
            FailureReason::FalseIrStrategy
        }
        "false command generation" | "false commands generation" => FailureReason::FalseCommandGeneration,
        "key information ignored" => FailureReason::KeyInformationIgnored,
        "false guidance generation" => FailureReason::FalseGuidanceGeneration,
        "false result interpretation" => FailureReason::FalseResultInterpretation,
        "session context lost" => FailureReason::SessionContextLost,
        _ => return Err(BenchError::UnknownFailureLabel(label.to_string())),
    };
    Ok(reason)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_shape() {
        let count = |p| CATEGORIES.iter().filter(|(q, _)| *q == p).count();
        assert_eq!((count(Phase::Detection), count(Phase::Response), count(Phase::Recovery)), (7, 15, 5));
        assert_eq!(category_phase("scheduled task analysis"), Some(Phase::Response));
        assert_eq!(category_phase("Webshell Hunting"), None);
    }

    #[test]
    fn case_headings_classify() {
        assert_eq!(classify_failure("False IR Strategy (LLMs)").unwrap(), FailureReason::FalseIrStrategy);
        assert_eq!(classify_failure("False Commands Generation (LLMs)").unwrap(), FailureReason::FalseCommandGeneration);
        assert_eq!(classify_failure("False Response Strategy").unwrap(), FailureReason::FalseIrStrategy);
        assert_eq!(classify_failure("Session context lost").unwrap(), FailureReason::SessionContextLost);
        assert_eq!(classify_failure("KeyInformationIgnored").unwrap(), FailureReason::KeyInformationIgnored);
        assert!(matches!(classify_failure("cosmic rays"), Err(BenchError::UnknownFailureLabel(_))));
    }

    #[test]
    fn labels_round_trip() {
        for r in FailureReason::ALL {
            assert_eq!(classify_failure(r.label()).unwrap(), r);
            assert_eq!(classify_failure(&format!("{r:?}")).unwrap(), r);
        }
    }
}
