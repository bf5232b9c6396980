use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BehaviorStats, TelemetryError, UsageStats};
use crate::package::ViewType;

pub const BASELINE: &str = "no_skill";

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStats {
    pub usage: UsageStats,
    pub behavior: BehaviorStats,
}

/// One condition, in usage-table column order followed by the behaviour columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: String,
    pub invoked_pct: f64,
    pub calls_per_case: f64,
    pub steps: f64,
    /// Empty when no `no_skill` baseline was available.
    pub step_delta: Option<f64>,
    pub views_full: u64,
    pub views_focus: u64,
    pub views_before: u64,
    pub views_after: u64,
    pub exact_repeat_pct: f64,
    pub repeated_mode_pct: f64,
    pub longest_same_mode_run_norm: f64,
}

/// Differences against the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub invoked_pct: f64,
    pub calls_per_case: f64,
    pub steps: f64,
    pub exact_repeat_pct: f64,
    pub repeated_mode_pct: f64,
    pub longest_same_mode_run_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub deltas: BTreeMap<String, Deltas>,
}

pub const CSV_HEADER: [&str; 12] = [
    "condition",
    "invoked_pct",
    "calls_per_case",
    "steps",
    "step_delta",
    "views_full",
    "views_focus",
    "views_before",
    "views_after",
    "exact_repeat_pct",
    "repeated_mode_pct",
    "longest_same_mode_run_norm",
];

fn row(name: &str, s: &ConditionStats, baseline_steps: Option<f64>) -> ComparisonRow {
    let (u, b) = (&s.usage, &s.behavior);
    ComparisonRow {
        condition: name.to_string(),
        invoked_pct: u.invoked_pct,
        calls_per_case: u.calls_per_case,
        steps: u.mean_steps,
        step_delta: baseline_steps.map(|base| u.mean_steps - base),
        views_full: u.views(ViewType::FullFrame),
        views_focus: u.views(ViewType::FocusCrop),
        views_before: u.views(ViewType::Before),
        views_after: u.views(ViewType::After),
        exact_repeat_pct: b.exact_repeat_pct,
        repeated_mode_pct: b.repeated_mode_pct,
        longest_same_mode_run_norm: b.longest_same_mode_run_norm,
    }
}

/// One row per condition, `no_skill` first when present; step deltas only with that baseline.
pub fn usage_rows(stats: &BTreeMap<String, ConditionStats>) -> Vec<ComparisonRow> {
    let base = stats.get(BASELINE).map(|b| b.usage.mean_steps);
    let order = stats.contains_key(BASELINE).then_some(BASELINE).into_iter();
    order
        .chain(stats.keys().map(String::as_str).filter(|k| *k != BASELINE))
        .map(|name| row(name, &stats[name], base))
        .collect()
}

/// Rows for every condition with deltas against `no_skill`. Rows keep the baseline first.
pub fn compare_conditions(stats: &BTreeMap<String, ConditionStats>) -> Result<ComparisonReport, TelemetryError> {
    if stats.len() < 2 {
        return Err(TelemetryError::TooFewConditions(stats.len()));
    }
    let base = stats.get(BASELINE).ok_or(TelemetryError::MissingBaseline)?;
    let rows = usage_rows(stats);
    let deltas = rows
        .iter()
        .map(|r| {
            let s = &stats[&r.condition];
            let (u, b) = (&s.usage, &s.behavior);
            (
                r.condition.clone(),
                Deltas {
                    invoked_pct: u.invoked_pct - base.usage.invoked_pct,
                    calls_per_case: u.calls_per_case - base.usage.calls_per_case,
                    steps: u.mean_steps - base.usage.mean_steps,
                    exact_repeat_pct: b.exact_repeat_pct - base.behavior.exact_repeat_pct,
                    repeated_mode_pct: b.repeated_mode_pct - base.behavior.repeated_mode_pct,
                    longest_same_mode_run_norm: b.longest_same_mode_run_norm - base.behavior.longest_same_mode_run_norm,
                },
            )
        })
        .collect();
    Ok(ComparisonReport { rows, deltas })
}

impl ComparisonReport {
    /// CSV with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    pub fn to_table(&self) -> String {
        render_table(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV is UTF-8")
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ComparisonRow>, TelemetryError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> =
        r.headers().map_err(|e| TelemetryError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(TelemetryError::Csv(format!("unexpected header {header:?}")));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(|e| TelemetryError::Csv(e.to_string()))
}

/// Human-readable table in the same column order as the CSV.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let head = [
        "Condition", "Invoked (%)", "Calls/case", "Steps", "Step Δ", "Full", "Focus", "Before", "After", "Exact rep %",
        "Mode rep %", "Longest run",
    ];
    let mut cells: Vec<Vec<String>> = vec![head.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        cells.push(vec![
            r.condition.clone(),
            format!("{:.1}", r.invoked_pct),
            format!("{:.2}", r.calls_per_case),
            format!("{:.2}", r.steps),
            r.step_delta.map_or_else(|| "n/a".to_string(), |d| format!("{d:+.2}")),
            r.views_full.to_string(),
            r.views_focus.to_string(),
            r.views_before.to_string(),
            r.views_after.to_string(),
            format!("{:.1}", r.exact_repeat_pct),
            format!("{:.1}", r.repeated_mode_pct),
            format!("{:.3}", r.longest_same_mode_run_norm),
        ]);
    }
    let widths: Vec<usize> =
        (0..head.len()).map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    cells
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, s)| {
                    let pad = widths[c] - s.chars().count();
                    if c == 0 { format!("{s}{}", " ".repeat(pad)) } else { format!("{}{s}", " ".repeat(pad)) }
                })
                .collect::<Vec<_>>()
                .join("  ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
