use std::path::Path;
use std::sync::Arc;

use ircopilot_bench::{
    load_suite, replay, sample_suite_dir, BenchReport, FailureReason, ReplayOutcome, Suite, TrialSettings,
};
use ircopilot_core::provider::MockProvider;

fn suite() -> Suite {
    load_suite(&sample_suite_dir()).expect("sample suite loads")
}

fn mock(path: &Path) -> Arc<MockProvider> {
    Arc::new(MockProvider::load(path).expect("fixture"))
}

fn run(suite: &Suite, task: &str, fixture: &Path, settings: &TrialSettings) -> ircopilot_bench::TrialRun {
    replay(suite.task(task).unwrap(), 0, mock(fixture), settings, None).unwrap()
}

#[test]
fn sample_suite_shape() {
    let s = suite();
    assert_eq!(s.tasks.len(), 2);
    assert_eq!(s.sub_task_count(), 13);
    assert!(s.mock_fixture("zgsf-linux-1", 3).is_some());
    assert!(s.mock_fixture("missing", 0).is_none());
}

#[test]
fn case_one_replays_to_success() {
    let s = suite();
    let fixture = s.mock_fixture("zgsf-linux-1", 0).unwrap();
    let provider = mock(&fixture);
    let run = replay(s.task("zgsf-linux-1").unwrap(), 0, provider.clone(), &TrialSettings::default(), None).unwrap();
    assert_eq!(run.outcome, ReplayOutcome::Done);
    assert!(run.record.success, "{:?}", run.record);
    assert_eq!(run.record.completed_sub_tasks.len(), 7);
    assert_eq!(run.record.failure_reason, None);
    // 5 planner, 16 reflector, 4 generator and 12 analyst calls
    let expected_s = (5.0 * 4.2) + (16.0 * 1.5) + (4.0 * 3.1) + (12.0 * 2.6);
    assert!((run.record.reasoning_time_s - expected_s).abs() < 1e-9);
    assert!(run.record.cost_usd > 0.0);
    for role in ircopilot_core::session::Role::ALL {
        assert_eq!(provider.remaining(role), 0, "{role:?} has unused replies");
    }
}

#[test]
fn replays_are_deterministic() {
    let s = suite();
    let fixture = s.mock_fixture("zgsf-linux-1", 0).unwrap();
    let a = run(&s, "zgsf-linux-1", &fixture, &TrialSettings::default());
    let b = run(&s, "zgsf-linux-1", &fixture, &TrialSettings::default());
    assert_eq!(a.record, b.record);
    assert_eq!(
        ircopilot_core::engine::strip_timestamps(&a.events),
        ircopilot_core::engine::strip_timestamps(&b.events)
    );
}

#[test]
fn missed_flag_is_a_labelled_failure() {
    let s = suite();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/zgsf-linux-1.missing-flag.json");
    let run = run(&s, "zgsf-linux-1", &fixture, &TrialSettings::default());
    assert!(matches!(run.outcome, ReplayOutcome::ProviderFailed { .. }), "{:?}", run.outcome);
    assert!(!run.record.success);
    assert_eq!(run.record.completed_sub_tasks.len(), 5);
    assert!(!run.record.completed_sub_tasks.contains("4"));
    assert_eq!(run.record.failure_reason, Some(FailureReason::FalseResultInterpretation));
}

#[test]
fn case_four_ignores_key_information() {
    let s = suite();
    let fixture = s.mock_fixture("zgsf-linux-2", 0).unwrap();
    let run = run(&s, "zgsf-linux-2", &fixture, &TrialSettings::default());
    assert!(!run.record.success);
    let done: Vec<_> = run.record.completed_sub_tasks.iter().map(String::as_str).collect();
    assert_eq!(done, ["1", "3", "6"]);
    assert_eq!(run.record.failure_reason, Some(FailureReason::KeyInformationIgnored));
}

#[test]
fn step_budget_is_enforced() {
    let s = suite();
    let fixture = s.mock_fixture("zgsf-linux-1", 0).unwrap();
    let settings = TrialSettings { step_budget: 3, ..TrialSettings::default() };
    let run = run(&s, "zgsf-linux-1", &fixture, &settings);
    assert_eq!(run.outcome, ReplayOutcome::StepBudgetExceeded { budget: 3 });
    assert!(!run.record.success);
    assert_eq!(run.record.failure_reason, Some(FailureReason::FalseIrStrategy));
}

#[test]
fn report_over_sample_runs() {
    let s = suite();
    let mut records = Vec::new();
    for task in &s.tasks {
        for trial in 0..2 {
            let fixture = s.mock_fixture(&task.id, trial).unwrap();
            records.push(replay(task, trial, mock(&fixture), &TrialSettings::default(), None).unwrap().record);
        }
    }
    let report = BenchReport::build(&s, "ircopilot", &records).unwrap();
    assert_eq!(report.tasks[0].judgement.display, "2/2 (✓)");
    assert_eq!(report.tasks[1].judgement.display, "0/2 (✗)");
    assert_eq!(report.tasks[1].metrics.n, 3);
    let total: u64 = report.completion.iter().map(|r| r.completed).sum();
    assert_eq!(total, 10);
    let text = report.render_text();
    assert!(text.contains("Linux 1"));
    assert!(text.contains("10 (76.92%)"), "{text}");
    assert!(text.contains("Key Information Ignored"));
    let json = serde_json::to_string(&report).unwrap();
    let back: BenchReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
