use std::fmt;

use serde::{Deserialize, Serialize};

use super::log::StepRecord;
use crate::protocol::MainDecision;
use crate::telemetry::{decision_mode, ActionMode};
use crate::text::truncate_chars;

const FEEDBACK_CHARS: usize = 160;

fn one_line(decision: &MainDecision) -> String {
    match decision {
        MainDecision::ActionScript(s) => s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("; "),
        other => other.block_content(),
    }
}

/// Prompt view of the history: the last `window` steps in full, older ones as one summary line.
pub fn render_history(steps: &[StepRecord], window: usize) -> String {
    let split = steps.len().saturating_sub(window);
    let (older, recent) = steps.split_at(split);
    let mut lines = Vec::new();
    if !older.is_empty() {
        let actions = older.iter().filter(|s| s.executed_action()).count();
        let consults: usize = older.iter().map(|s| s.branch_events.len()).sum();
        lines.push(format!(
            "Steps 1-{}: {} actions executed, {} skill consultations (details omitted).",
            older.len(),
            actions,
            consults
        ));
    }
    for s in recent {
        let mut line = format!("Step {}: {}", s.index + 1, one_line(&s.decision));
        for e in &s.branch_events {
            line.push_str(&format!(" [consulted {}]", e.skill_name));
        }
        if !s.feedback.is_empty() {
            line.push_str(&format!("\n  feedback: {}", truncate_chars(&s.feedback, FEEDBACK_CHARS)));
        }
        lines.push(line);
    }
    lines.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    ExactRepetition,
    RepeatedMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopWarning {
    pub kind: LoopKind,
    pub window: usize,
    pub mode: ActionMode,
}

impl fmt::Display for LoopWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LoopKind::ExactRepetition => write!(
                f,
                "Loop warning (exact repetition): the last {} actions were identical. Change strategy instead of repeating them.",
                self.window
            ),
            LoopKind::RepeatedMode => write!(
                f,
                "Loop warning (repeated mode): the last {} actions were all {} actions. Check that they are making progress.",
                self.window, self.mode
            ),
        }
    }
}

/// Inspect the last `window` action scripts of the history.
///
/// Exact repetition wins over a shared mode. Skill calls and control tokens are ignored.
pub fn detect_loop(history: &[StepRecord], window: usize) -> Option<LoopWarning> {
    assert!(window >= 2, "loop window must be at least 2");
    let scripts: Vec<&str> = history
        .iter()
        .filter_map(|s| match &s.decision {
            MainDecision::ActionScript(a) => Some(a.as_str()),
            _ => None,
        })
        .collect();
    if scripts.len() < window {
        return None;
    }
    let tail = &scripts[scripts.len() - window..];
    let mode = decision_mode(&MainDecision::ActionScript(tail[0].to_string())).unwrap_or(ActionMode::Other);
    if tail.iter().all(|s| *s == tail[0]) {
        return Some(LoopWarning { kind: LoopKind::ExactRepetition, window, mode });
    }
    let same_mode = tail
        .iter()
        .all(|s| decision_mode(&MainDecision::ActionScript(s.to_string())) == Some(mode));
    same_mode.then_some(LoopWarning { kind: LoopKind::RepeatedMode, window, mode })
}
