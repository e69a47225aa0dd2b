use std::fmt::Write;

use ircopilot_core::engine::{EngineState, PauseInfo};
use ircopilot_core::guidance::{lint_commands, Guidance, LintFinding};
use ircopilot_core::irt::render_irt;

pub fn guidance_card(guidance: &Guidance, lint: &[LintFinding]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== Guidance for {} ({}) ==", guidance.task, guidance.os_tag);
    for (i, strategy) in guidance.strategies.iter().enumerate() {
        let _ = writeln!(out, "Strategy {}: {}", i + 1, strategy.description);
        for (j, step) in strategy.steps.iter().enumerate() {
            let _ = writeln!(out, "  {}. {}", j + 1, step.instruction);
            for cmd in &step.commands {
                let _ = writeln!(out, "     $ {}", cmd.command);
                for finding in lint.iter().filter(|f| f.command == cmd.command) {
                    let _ = writeln!(out, "       ! {:?}: {}", finding.kind, finding.detail);
                }
            }
        }
    }
    out
}

/// Guidance card for the pending guidance with fresh lint badges.
pub fn pending_card(state: &EngineState) -> Option<String> {
    let g = state.pending_guidance.as_ref()?;
    let cmds: Vec<_> = g.commands().cloned().collect();
    Some(guidance_card(g, &lint_commands(&cmds)))
}

pub fn pause_notice(info: &PauseInfo) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== Paused at {}: {:?} ==", info.at, info.reason);
    let _ = writeln!(out, "{}", info.detail);
    for (i, c) in info.candidates.iter().enumerate() {
        let _ = writeln!(out, "-- candidate {} --\n{}", i + 1, c.trim_end());
    }
    out
}

pub fn summary(state: &EngineState) -> String {
    let mut out = String::new();
    let t = &state.totals;
    let _ = writeln!(out, "session {} [{}] step {}", state.session_id, state.model, state.step);
    let _ = writeln!(out, "irt revision {}", state.irt.revision);
    let _ = writeln!(
        out,
        "tokens in {} / out {}; cost ${:.4}; reasoning time {:.1}s",
        t.usage.input_tokens,
        t.usage.output_tokens,
        t.cost_usd,
        t.latency_ms as f64 / 1000.0
    );
    for (role, calls) in &t.calls {
        let _ = writeln!(out, "  {role}: {calls} call(s)");
    }
    let resolved = state.irt.resolved_objectives();
    if !resolved.is_empty() {
        let _ = writeln!(out, "resolved:");
        for (id, value) in resolved {
            let _ = writeln!(out, "  {id}: {value}");
        }
    }
    out
}

pub fn irt_text(state: &EngineState) -> String {
    render_irt(&state.irt)
}
