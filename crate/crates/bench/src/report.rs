use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::difficulty::Difficulty;
use crate::metrics::{fmt_cost, fmt_percent, fmt_rate, judge_success, metrics, AttemptRecord, Judgement, MethodMetrics};
use crate::suite::Suite;
use crate::taxonomy::FailureReason;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub title: String,
    pub difficulty: Difficulty,
    pub sub_tasks: usize,
    pub metrics: MethodMetrics,
    pub judgement: Judgement,
    pub failures: BTreeMap<FailureReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRow {
    pub difficulty: Difficulty,
    pub completed: u64,
    pub total: u64,
}

/// One rendered line of a completion table; `difficulty` is None on the
/// total line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRate {
    pub difficulty: Option<Difficulty>,
    pub count: u64,
    pub total: u64,
    pub percent: String,
}

impl CompletionRate {
    pub fn display(&self) -> String {
        fmt_rate(self.count, self.total)
    }
}

/// Per-difficulty rates followed by the total line.
pub fn completion_rates(rows: &[CompletionRow]) -> Vec<CompletionRate> {
    let rate = |difficulty, count, total| CompletionRate { difficulty, count, total, percent: fmt_percent(count, total) };
    let mut out: Vec<_> = rows.iter().map(|r| rate(Some(r.difficulty), r.completed, r.total)).collect();
    let count = rows.iter().map(|r| r.completed).sum();
    let total = rows.iter().map(|r| r.total).sum();
    out.push(rate(None, count, total));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: String,
    pub method: String,
    pub tasks: Vec<TaskReport>,
    pub completion: Vec<CompletionRow>,
    pub records: Vec<AttemptRecord>,
}

impl BenchReport {
    /// Aggregates per-task records. Every suite task needs at least one.
    pub fn build(suite: &Suite, method: &str, records: &[AttemptRecord]) -> Result<BenchReport, BenchError> {
        let mut tasks = Vec::new();
        let mut completion: BTreeMap<Difficulty, (u64, u64)> = BTreeMap::new();
        for task in &suite.tasks {
            let own: Vec<AttemptRecord> = records.iter().filter(|r| r.task_id == task.id && r.method == method).cloned().collect();
            let m = metrics(&own)?;
            let mut failures = BTreeMap::new();
            for r in &own {
                if let Some(f) = r.failure_reason {
                    *failures.entry(f).or_default() += 1;
                }
            }
            let entry = completion.entry(task.difficulty).or_default();
            entry.0 += m.n as u64;
            entry.1 += task.sub_tasks.len() as u64;
            tasks.push(TaskReport {
                task_id: task.id.clone(),
                title: task.title.clone(),
                difficulty: task.difficulty,
                sub_tasks: task.sub_tasks.len(),
                judgement: judge_success(&own)?,
                metrics: m,
                failures,
            });
        }
        let completion = completion.into_iter().map(|(difficulty, (completed, total))| CompletionRow { difficulty, completed, total }).collect();
        Ok(BenchReport {
            suite: suite.name.clone(),
            method: method.to_string(),
            tasks,
            completion,
            records: records.iter().filter(|r| r.method == method).cloned().collect(),
        })
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "suite {} / method {}", self.suite, self.method);
        let header = ["Task", "Difficulty", "n", "t (s)", "s (s)", "c (USD)", "Completions"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for t in &self.tasks {
            rows.push(vec![
                t.title.clone(),
                t.difficulty.label().to_string(),
                format!("{}/{}", t.metrics.n, t.sub_tasks),
                crate::metrics::fmt_time(t.metrics.mean_time_s),
                t.metrics.time_per_sub_task_s.to_string(),
                fmt_cost(t.metrics.mean_cost_usd),
                t.judgement.display.clone(),
            ]);
        }
        render_table(&mut out, &rows);
        let _ = writeln!(out);
        let mut rows: Vec<Vec<String>> = vec![vec!["Difficulty".into(), "Sub-tasks completed".into()]];
        for rate in completion_rates(&self.completion) {
            let label = rate.difficulty.map_or("Total", |d| d.label());
            rows.push(vec![format!("{label} ({})", rate.total), rate.display()]);
        }
        render_table(&mut out, &rows);
        let failures: BTreeMap<FailureReason, usize> = self.tasks.iter().flat_map(|t| t.failures.iter()).fold(BTreeMap::new(), |mut acc, (f, n)| {
            *acc.entry(*f).or_default() += n;
            acc
        });
        if !failures.is_empty() {
            let _ = writeln!(out);
            let mut rows: Vec<Vec<String>> = vec![vec!["Failure reason".into(), "Trials".into()]];
            rows.extend(failures.iter().map(|(f, n)| vec![f.label().to_string(), n.to_string()]));
            render_table(&mut out, &rows);
        }
        out
    }
}

fn render_table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row.iter().enumerate().map(|(c, cell)| format!("{cell:<w$}", w = widths[c])).collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        }
    }
}
