//! Usage and behaviour statistics over trajectory logs.

mod classify;
mod compare;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use classify::{classify_action_mode, decision_mode, ActionMode};
pub use compare::{
    compare_conditions, render_table, rows_from_csv, rows_to_csv, usage_rows, ComparisonReport, ComparisonRow, ConditionStats, Deltas,
    BASELINE, CSV_HEADER,
};

use crate::package::ViewType;
use crate::runtime::TrajectoryLog;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TelemetryError {
    #[error("no logs given")]
    EmptyLogs,
    #[error("step budget must be at least 1")]
    ZeroBudget,
    #[error("comparison needs at least two conditions, got {0}")]
    TooFewConditions(usize),
    #[error("comparison needs a `no_skill` baseline")]
    MissingBaseline,
    #[error("CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub cases: usize,
    pub invoked_pct: f64,
    pub calls_per_case: f64,
    pub mean_steps: f64,
    /// `mean_steps − baseline mean_steps`, when a baseline was given.
    pub step_delta: Option<f64>,
    pub view_counts: BTreeMap<ViewType, u64>,
    /// Consultations that ended without guidance; not part of `calls_per_case`.
    pub failed_calls: u64,
}

impl UsageStats {
    pub fn views(&self, v: ViewType) -> u64 {
        self.view_counts.get(&v).copied().unwrap_or(0)
    }
}

fn mean_steps(logs: &[TrajectoryLog]) -> f64 {
    logs.iter().map(|l| l.steps.len() as f64).sum::<f64>() / logs.len() as f64
}

pub fn compute_usage_stats(
    logs: &[TrajectoryLog],
    baseline: Option<&[TrajectoryLog]>,
) -> Result<UsageStats, TelemetryError> {
    if logs.is_empty() {
        return Err(TelemetryError::EmptyLogs);
    }
    let n = logs.len() as f64;
    let invoked = logs.iter().filter(|l| l.branch_events().next().is_some()).count();
    let calls: usize = logs.iter().map(|l| l.branch_events().count()).sum();
    let failed = logs.iter().flat_map(|l| &l.steps).map(|s| s.failed_branches.len() as u64).sum();
    let mut view_counts: BTreeMap<ViewType, u64> = ViewType::ALL.into_iter().map(|v| (v, 0)).collect();
    for g in logs.iter().flat_map(|l| l.branch_events()).flat_map(|e| &e.granted_views) {
        *view_counts.entry(g.view).or_insert(0) += 1;
    }
    let mean = mean_steps(logs);
    let step_delta = match baseline {
        Some([]) => return Err(TelemetryError::EmptyLogs),
        Some(b) => Some(mean - mean_steps(b)),
        None => None,
    };
    Ok(UsageStats {
        cases: logs.len(),
        invoked_pct: 100.0 * invoked as f64 / n,
        calls_per_case: calls as f64 / n,
        mean_steps: mean,
        step_delta,
        view_counts,
        failed_calls: failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub action_mode_distribution: BTreeMap<ActionMode, f64>,
    pub primitives_per_task: f64,
    pub exact_repeat_pct: f64,
    pub repeated_mode_pct: f64,
    pub longest_same_mode_run_norm: f64,
}

/// Behaviour over every step decision (actions, WAIT, DONE, FAIL).
///
/// Repeats compare each decision with the previous one in the same log. The longest run only
/// counts streaks of two or more, so a log without any repetition contributes 0.
pub fn compute_behavior_stats(logs: &[TrajectoryLog], step_budget: u32) -> Result<BehaviorStats, TelemetryError> {
    if step_budget == 0 {
        return Err(TelemetryError::ZeroBudget);
    }
    let mut counts: BTreeMap<ActionMode, u64> = BTreeMap::new();
    let (mut total, mut exact, mut same_mode) = (0u64, 0u64, 0u64);
    let mut run_sum = 0.0;
    for log in logs {
        let seq: Vec<(String, ActionMode)> = log
            .steps
            .iter()
            .filter_map(|s| decision_mode(&s.decision).map(|m| (s.decision.block_content(), m)))
            .collect();
        let (mut longest, mut run) = (0usize, 0usize);
        for (i, (text, mode)) in seq.iter().enumerate() {
            *counts.entry(*mode).or_insert(0) += 1;
            total += 1;
            if i > 0 && seq[i - 1].0 == *text {
                exact += 1;
            }
            if i > 0 && seq[i - 1].1 == *mode {
                same_mode += 1;
                run += 1;
            } else {
                run = 1;
            }
            if run >= 2 {
                longest = longest.max(run);
            }
        }
        run_sum += (longest as f64 / step_budget as f64).min(1.0);
    }
    let pct = |k: u64| if total == 0 { 0.0 } else { 100.0 * k as f64 / total as f64 };
    Ok(BehaviorStats {
        action_mode_distribution: counts.into_iter().map(|(m, c)| (m, c as f64 / total as f64)).collect(),
        primitives_per_task: if logs.is_empty() { 0.0 } else { total as f64 / logs.len() as f64 },
        exact_repeat_pct: pct(exact),
        repeated_mode_pct: pct(same_mode),
        longest_same_mode_run_norm: if logs.is_empty() { 0.0 } else { run_sum / logs.len() as f64 },
    })
}

/// Group logs by their header condition and compute both stat blocks per group.
///
/// Usage step deltas use the `no_skill` group when present; the behaviour budget is each
/// group's configured step budget.
pub fn stats_by_condition(logs: &[TrajectoryLog]) -> Result<BTreeMap<String, ConditionStats>, TelemetryError> {
    if logs.is_empty() {
        return Err(TelemetryError::EmptyLogs);
    }
    let mut groups: BTreeMap<String, Vec<TrajectoryLog>> = BTreeMap::new();
    for l in logs {
        groups.entry(l.header.condition.to_string()).or_default().push(l.clone());
    }
    let baseline = groups.get(BASELINE).cloned();
    groups
        .into_iter()
        .map(|(name, group)| {
            let budget = group.iter().map(|l| l.header.config.step_budget).max().unwrap_or(1);
            let usage = compute_usage_stats(&group, baseline.as_deref())?;
            let behavior = compute_behavior_stats(&group, budget)?;
            Ok((name, ConditionStats { usage, behavior }))
        })
        .collect()
}
