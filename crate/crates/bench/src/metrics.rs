use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::taxonomy::FailureReason;
use crate::BenchError;

/// Rounds half away from zero at `decimals`, tolerating binary
/// representation error (so 12.65 rounds to 12.7).
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let f = 10f64.powi(decimals as i32);
    let y = x.abs() * f;
    let nudged = y + y * 1e-12 + 1e-12;
    x.signum() * (nudged + 0.5).floor() / f
}

pub fn fmt_time(secs: f64) -> String {
    format!("{:.1}", round_half_up(secs, 1))
}

pub fn fmt_cost(usd: f64) -> String {
    format!("{:.2}", round_half_up(usd, 2))
}

/// Percentage in hundredths of a percent, rounded half up in integers.
pub fn percent_hundredths(count: u64, total: u64) -> Option<u64> {
    (total > 0).then(|| (20_000 * count + total) / (2 * total))
}

pub fn fmt_percent(count: u64, total: u64) -> String {
    match percent_hundredths(count, total) {
        Some(h) => format!("{}.{:02}%", h / 100, h % 100),
        None => "-".to_string(),
    }
}

/// `"76 (58.46%)"`.
pub fn fmt_rate(count: u64, total: u64) -> String {
    format!("{count} ({})", fmt_percent(count, total))
}

/// One trial of one task by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub task_id: String,
    pub trial: u32,
    pub method: String,
    pub completed_sub_tasks: BTreeSet<String>,
    pub total_sub_tasks: usize,
    pub success: bool,
    pub reasoning_time_s: f64,
    pub cost_usd: f64,
    pub failure_reason: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AttemptRecord {
    pub fn check(&self) -> Result<(), BenchError> {
        let all = self.completed_sub_tasks.len() == self.total_sub_tasks;
        if self.success && !all {
            return Err(BenchError::InconsistentRecord(format!("{} trial {} succeeds with open sub-tasks", self.task_id, self.trial)));
        }
        if self.failure_reason.is_some() == all {
            return Err(BenchError::InconsistentRecord(format!(
                "{} trial {}: a failure reason is required exactly when a sub-task failed",
                self.task_id, self.trial
            )));
        }
        Ok(())
    }
}

/// A mean with an explicit marker for empty denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Value(f64),
    Undefined,
}

impl Measure {
    pub fn value(&self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(*v),
            Measure::Undefined => None,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Value(v) => f.write_str(&fmt_time(*v)),
            Measure::Undefined => f.write_str("undefined"),
        }
    }
}

/// Efficiency figures of one method on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub task_id: String,
    pub method: String,
    pub trials: usize,
    /// Distinct sub-tasks completed in any trial.
    pub n: usize,
    pub mean_time_s: f64,
    pub time_per_sub_task_s: Measure,
    pub mean_cost_usd: f64,
    pub successes: usize,
}

/// Time per completed sub-task; undefined when nothing was completed.
pub fn per_sub_task(mean_time: f64, n: usize) -> Measure {
    if n == 0 {
        Measure::Undefined
    } else {
        Measure::Value(mean_time / n as f64)
    }
}

pub fn metrics(records: &[AttemptRecord]) -> Result<MethodMetrics, BenchError> {
    let first = records.first().ok_or(BenchError::EmptyRecords)?;
    if let Some(other) = records.iter().find(|r| r.task_id != first.task_id || r.method != first.method) {
        return Err(BenchError::MixedTask { expected: first.task_id.clone(), found: other.task_id.clone() });
    }
    let k = records.len() as f64;
    let mean_time_s = records.iter().map(|r| r.reasoning_time_s).sum::<f64>() / k;
    let mean_cost_usd = records.iter().map(|r| r.cost_usd).sum::<f64>() / k;
    let n = records.iter().flat_map(|r| r.completed_sub_tasks.iter()).collect::<BTreeSet<_>>().len();
    Ok(MethodMetrics {
        task_id: first.task_id.clone(),
        method: first.method.clone(),
        trials: records.len(),
        n,
        mean_time_s,
        time_per_sub_task_s: per_sub_task(mean_time_s, n),
        mean_cost_usd,
        successes: records.iter().filter(|r| r.success).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub success: bool,
    pub display: String,
}

/// Solved when any trial succeeded; shown as `"s/k (✓|✗)"`.
pub fn judge_success(trials: &[AttemptRecord]) -> Result<Judgement, BenchError> {
    let first = trials.first().ok_or(BenchError::EmptyRecords)?;
    if let Some(other) = trials.iter().find(|r| r.task_id != first.task_id) {
        return Err(BenchError::MixedTask { expected: first.task_id.clone(), found: other.task_id.clone() });
    }
    Ok(judge_counts(trials.iter().filter(|r| r.success).count(), trials.len()))
}

pub fn judge_counts(successes: usize, trials: usize) -> Judgement {
    let success = successes > 0;
    Judgement { success, display: format!("{successes}/{trials} ({})", if success { "✓" } else { "✗" }) }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(task: &str, trial: u32, success: bool, t: f64, c: f64, done: &[&str]) -> AttemptRecord {
        AttemptRecord {
            task_id: task.into(),
            trial,
            method: "m".into(),
            completed_sub_tasks: done.iter().map(|s| s.to_string()).collect(),
            total_sub_tasks: if success { done.len() } else { done.len() + 1 },
            success,
            reasoning_time_s: t,
            cost_usd: c,
            failure_reason: (!success).then_some(FailureReason::FalseIrStrategy),
            note: None,
        }
    }

    #[test]
    fn rates_render_like_the_tables() {
        assert_eq!(fmt_rate(76, 130), "76 (58.46%)");
        assert_eq!(fmt_rate(113, 130), "113 (86.92%)");
        assert_eq!(fmt_rate(0, 36), "0 (0.00%)");
        assert_eq!(fmt_rate(1, 12), "1 (8.33%)");
        assert_eq!(fmt_percent(1, 0), "-");
    }

    #[test]
    fn half_up_survives_binary_error() {
        assert_eq!(fmt_time(75.9 / 6.0), "12.7");
        assert_eq!(fmt_time(278.0 / 22.0), "12.6");
        assert_eq!(fmt_time(68.1 / 9.0), "7.6");
        assert_eq!(fmt_cost(0.225), "0.23");
        assert_eq!(round_half_up(2.5, 0), 3.0);
        assert_eq!(round_half_up(-2.5, 0), -3.0);
    }

    #[test]
    fn means_and_undefined() {
        let costs = [0.20, 0.25, 0.30, 0.20, 0.20];
        let records: Vec<_> = costs.iter().enumerate().map(|(k, &c)| record("t", k as u32, false, 10.0, c, &[])).collect();
        let m = metrics(&records).unwrap();
        assert_eq!(fmt_cost(m.mean_cost_usd), "0.23");
        assert_eq!(m.n, 0);
        assert_eq!(m.time_per_sub_task_s, Measure::Undefined);
        assert!(matches!(metrics(&[]), Err(BenchError::EmptyRecords)));
    }

    #[test]
    fn n_counts_distinct_sub_tasks() {
        let records = vec![record("t", 0, false, 10.0, 0.1, &["1", "2"]), record("t", 1, false, 30.0, 0.1, &["2", "3"])];
        let m = metrics(&records).unwrap();
        assert_eq!(m.n, 3);
        assert_eq!(m.time_per_sub_task_s, Measure::Value(20.0 / 3.0));
    }

    #[test]
    fn judge_displays() {
        let mk = |flags: &[bool]| flags.iter().enumerate().map(|(k, &s)| record("t", k as u32, s, 0.0, 0.0, &[])).collect::<Vec<_>>();
        assert_eq!(judge_success(&mk(&[false, false, true, false, false])).unwrap().display, "1/5 (✓)");
        assert_eq!(judge_success(&mk(&[false; 5])).unwrap(), Judgement { success: false, display: "0/5 (✗)".into() });
        assert_eq!(judge_success(&mk(&[true; 4])).unwrap().display, "4/4 (✓)");
        let mut mixed = mk(&[true, false]);
        mixed[1].task_id = "other".into();
        assert!(matches!(judge_success(&mixed), Err(BenchError::MixedTask { .. })));
    }

    #[test]
    fn record_consistency() {
        assert!(record("t", 0, true, 0.0, 0.0, &["1"]).check().is_ok());
        assert!(record("t", 0, false, 0.0, 0.0, &["1"]).check().is_ok());
        let mut bad = record("t", 0, true, 0.0, 0.0, &["1"]);
        bad.total_sub_tasks = 2;
        assert!(bad.check().is_err());
    }
}
