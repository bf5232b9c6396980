//! Synthetic trajectory logs and brute-force statistic oracles shared by test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use serde_json::Value;

use mmskills::library::{Candidate, CandidateSet};
use mmskills::package::ViewType;
use mmskills::protocol::{
    Applicability, BranchGuidance, CompletionScope, EvidenceGoal, MainDecision, ViewRequest, ViewSelection,
};
use mmskills::runtime::{
    BranchEvent, GrantedView, LogHeader, LogSummary, ObservationRef, RuntimeConfig, SkillCondition, StepRecord,
    Terminal, TrajectoryLog, LOG_FORMAT,
};
use mmskills::telemetry::classify_action_mode;

pub mod packages;
pub mod stage1;

pub const SCRIPTS: [&str; 8] = [
    "pyautogui.click(10, 20)",
    "pyautogui.click(30, 40)",
    "pyautogui.doubleClick(10, 20)",
    "pyautogui.write('abc')",
    "pyautogui.press('enter')",
    "pyautogui.scroll(-3)",
    "pyautogui.dragTo(5, 5)",
    "print('noop')",
];

pub fn guidance() -> BranchGuidance {
    BranchGuidance {
        skill_applicability: Applicability::Effective,
        subgoal: "reach the next state".into(),
        plan: "click the control".into(),
        do_not_do: "do not retype".into(),
        fallback_if_no_progress: "scroll".into(),
        expected_state: "the dialog is open".into(),
        completion_scope: CompletionScope::LocalOnly,
    }
}

/// A completed consultation granting exactly `views` (each on its own state).
pub fn event(skill: &str, views: &[(&str, ViewType)]) -> BranchEvent {
    let mut requests: Vec<ViewRequest> = Vec::new();
    for (state, view) in views {
        match requests.iter_mut().find(|r| r.state_id == *state) {
            Some(r) => r.views.push(*view),
            None => requests.push(ViewRequest {
                state_id: state.to_string(),
                views: vec![*view],
                evidence_goal: EvidenceGoal::LocateControl,
                reason: "need to see it".into(),
            }),
        }
    }
    let selection = if requests.is_empty() {
        ViewSelection::text_only("the text is enough")
    } else {
        ViewSelection { visual_reference_needed: true, why_not_text_only: "layout matters".into(), requests }
    };
    BranchEvent {
        skill_name: skill.into(),
        granted_views: views
            .iter()
            .map(|(s, v)| GrantedView { state_id: s.to_string(), view: *v, path: format!("views/{s}__{v}.png") })
            .collect(),
        selection,
        guidance: guidance(),
        stage1_attempts: 1,
        stage2_attempts: 1,
        fallback_used: false,
    }
}

pub fn step(index: u32, decision: MainDecision, events: Vec<BranchEvent>) -> StepRecord {
    StepRecord {
        index,
        observation_ref: ObservationRef { sha256: "0".repeat(64), width: 320, height: 200, path: None },
        decision,
        feedback: String::new(),
        branch_events: events,
        failed_branches: vec![],
        violations: vec![],
        loop_warning: None,
        exchanges: vec![],
        timestamp: "0.000".into(),
    }
}

pub fn log_from(condition: SkillCondition, steps: Vec<StepRecord>) -> TrajectoryLog {
    let terminal = match steps.last().map(|s| &s.decision) {
        Some(MainDecision::Done) => Terminal::Done,
        Some(MainDecision::Fail) => Terminal::Fail,
        _ => Terminal::BudgetExhausted,
    };
    let mut consult_counts = BTreeMap::new();
    for e in steps.iter().flat_map(|s| &s.branch_events) {
        *consult_counts.entry(e.skill_name.clone()).or_insert(0) += 1;
    }
    TrajectoryLog {
        header: LogHeader {
            format: LOG_FORMAT.into(),
            instruction: "synthetic task".into(),
            environment: "synthetic".into(),
            condition,
            config: RuntimeConfig::with_condition(condition),
            candidates: CandidateSet {
                instruction: "synthetic task".into(),
                candidates: vec![Candidate { skill_name: "skill_a".into(), relevance_score: 1.0 }],
            },
            library_domain: None,
            started_at: "0.000".into(),
        },
        summary: Some(LogSummary {
            terminal,
            steps: steps.len() as u32,
            actions_executed: steps.iter().filter(|s| s.executed_action()).count() as u32,
            consult_counts,
            task_completed: terminal == Terminal::Done,
            error: None,
            aborted_step: None,
            finished_at: "0.000".into(),
        }),
        steps,
    }
}

pub fn random_decision(rng: &mut impl Rng) -> MainDecision {
    match rng.random_range(0..12) {
        0 => MainDecision::Wait,
        1 => MainDecision::Done,
        2 => MainDecision::Fail,
        _ => MainDecision::ActionScript(SCRIPTS[rng.random_range(0..SCRIPTS.len())].into()),
    }
}

pub fn random_log(rng: &mut impl Rng, condition: SkillCondition) -> TrajectoryLog {
    let n = rng.random_range(1..=20);
    let steps = (0..n)
        .map(|i| {
            let events = if condition == SkillCondition::NoSkill {
                vec![]
            } else {
                let n_events = if rng.random_bool(0.6) { 0 } else { rng.random_range(1..=2) };
                (0..n_events)
                    .map(|_| {
                        let k = rng.random_range(0..=4usize);
                        let views: Vec<(String, ViewType)> = (0..k)
                            .map(|j| (format!("s{j}"), ViewType::ALL[rng.random_range(0..4)]))
                            .collect();
                        let refs: Vec<(&str, ViewType)> = views.iter().map(|(s, v)| (s.as_str(), *v)).collect();
                        event(if rng.random_bool(0.5) { "skill_a" } else { "skill_b" }, &refs)
                    })
                    .collect()
            };
            step(i as u32 + 1, random_decision(rng), events)
        })
        .collect();
    log_from(condition, steps)
}

pub fn random_log_set(rng: &mut impl Rng) -> Vec<TrajectoryLog> {
    let n = rng.random_range(1..=12);
    let cond = [SkillCondition::NoSkill, SkillCondition::TextOnly, SkillCondition::MmSkills][rng.random_range(0..3)];
    (0..n).map(|_| random_log(rng, cond)).collect()
}

/// Usage recount straight from the serialized JSONL, without the typed log API.
#[derive(Debug, PartialEq)]
pub struct UsageOracle {
    pub cases: usize,
    pub with_calls: usize,
    pub calls: usize,
    pub steps: usize,
    pub views: BTreeMap<String, u64>,
}

pub fn usage_oracle(logs: &[TrajectoryLog]) -> UsageOracle {
    let mut o = UsageOracle { cases: 0, with_calls: 0, calls: 0, steps: 0, views: BTreeMap::new() };
    for v in ViewType::ALL {
        o.views.insert(v.as_str().to_string(), 0);
    }
    for log in logs {
        o.cases += 1;
        let mut calls_here = 0;
        for line in log.to_jsonl().lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            if v["type"] != "step" {
                continue;
            }
            o.steps += 1;
            if let Some(events) = v.get("branch_events").and_then(Value::as_array) {
                calls_here += events.len();
                for e in events {
                    for g in e["granted_views"].as_array().unwrap() {
                        *o.views.get_mut(g["view"].as_str().unwrap()).unwrap() += 1;
                    }
                }
            }
        }
        o.calls += calls_here;
        if calls_here > 0 {
            o.with_calls += 1;
        }
    }
    o
}

/// Behaviour recount by explicit window scans over the decision texts.
#[derive(Debug, PartialEq)]
pub struct BehaviorOracle {
    pub total: usize,
    pub mode_counts: BTreeMap<String, usize>,
    pub exact: usize,
    pub same_mode: usize,
    pub longest_norm_mean: f64,
}

fn decision_text(v: &Value) -> Option<String> {
    match v["kind"].as_str().unwrap() {
        "skill_call" => None,
        "action_script" => Some(v["value"].as_str().unwrap().to_string()),
        "wait" => Some("WAIT".into()),
        "done" => Some("DONE".into()),
        "fail" => Some("FAIL".into()),
        other => panic!("unknown decision kind {other}"),
    }
}

pub fn behavior_oracle(logs: &[TrajectoryLog], budget: u32) -> BehaviorOracle {
    let mut o = BehaviorOracle { total: 0, mode_counts: BTreeMap::new(), exact: 0, same_mode: 0, longest_norm_mean: 0.0 };
    let mut norm_sum = 0.0;
    for log in logs {
        let seq: Vec<String> = log
            .to_jsonl()
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap())
            .filter(|v| v["type"] == "step")
            .filter_map(|v| decision_text(&v["decision"]))
            .collect();
        let modes: Vec<String> = seq.iter().map(|s| classify_action_mode(s).as_str().to_string()).collect();
        for m in &modes {
            *o.mode_counts.entry(m.clone()).or_insert(0) += 1;
        }
        o.total += seq.len();
        o.exact += (1..seq.len()).filter(|&i| seq[i] == seq[i - 1]).count();
        o.same_mode += (1..modes.len()).filter(|&i| modes[i] == modes[i - 1]).count();
        // every window [i, j) of length >= 2 whose modes are all equal
        let mut longest = 0;
        for i in 0..modes.len() {
            for j in i + 2..=modes.len() {
                if modes[i..j].iter().all(|m| *m == modes[i]) {
                    longest = longest.max(j - i);
                }
            }
        }
        norm_sum += (longest as f64 / budget as f64).min(1.0);
    }
    o.longest_norm_mean = if logs.is_empty() { 0.0 } else { norm_sum / logs.len() as f64 };
    o
}

/// 100 cases whose granted views total 79 full, 241 focus, 8 before and 24 after.
pub fn table4_fixture() -> Vec<TrajectoryLog> {
    use ViewType::*;
    let mut events: Vec<BranchEvent> = Vec::new();
    events.extend((0..79).map(|_| event("skill_a", &[("s0", FullFrame), ("s0", FocusCrop)])));
    events.extend((0..81).map(|_| event("skill_b", &[("s0", FocusCrop), ("s1", FocusCrop)])));
    events.extend((0..8).map(|_| event("skill_a", &[("s1", Before), ("s1", After)])));
    events.extend((0..16).map(|_| event("skill_b", &[("s2", After)])));
    let mut logs = Vec::new();
    for pair in events.chunks(2) {
        let steps = vec![
            step(1, MainDecision::ActionScript(SCRIPTS[0].into()), vec![pair[0].clone()]),
            step(2, MainDecision::ActionScript(SCRIPTS[3].into()), pair[1..].to_vec()),
            step(3, MainDecision::Done, vec![]),
        ];
        logs.push(log_from(SkillCondition::MmSkills, steps));
    }
    while logs.len() < 100 {
        let steps = vec![
            step(1, MainDecision::ActionScript(SCRIPTS[0].into()), vec![]),
            step(2, MainDecision::ActionScript(SCRIPTS[1].into()), vec![]),
            step(3, MainDecision::Done, vec![]),
        ];
        logs.push(log_from(SkillCondition::MmSkills, steps));
    }
    logs
}

/// A no-skill baseline: `n` cases of `steps` clicks then DONE.
pub fn baseline_logs(n: usize, clicks: usize) -> Vec<TrajectoryLog> {
    (0..n)
        .map(|_| {
            let mut steps: Vec<StepRecord> = (0..clicks)
                .map(|i| step(i as u32 + 1, MainDecision::ActionScript(SCRIPTS[i % 2].into()), vec![]))
                .collect();
            steps.push(step(clicks as u32 + 1, MainDecision::Done, vec![]));
            log_from(SkillCondition::NoSkill, steps)
        })
        .collect()
}

/// Compare every usage and behaviour field with the oracles; counts exact, means within 1e-9.
pub fn check_against_oracles(logs: &[TrajectoryLog], budget: u32) -> Result<(), String> {
    use mmskills::telemetry::{compute_behavior_stats, compute_usage_stats, ActionMode};
    let close = |what: &str, a: f64, b: f64| {
        if (a - b).abs() <= 1e-9 {
            Ok(())
        } else {
            Err(format!("{what}: {a} != {b}"))
        }
    };
    let u = compute_usage_stats(logs, None).map_err(|e| e.to_string())?;
    let uo = usage_oracle(logs);
    if u.cases != uo.cases {
        return Err(format!("cases {} != {}", u.cases, uo.cases));
    }
    close("invoked_pct", u.invoked_pct, 100.0 * uo.with_calls as f64 / uo.cases as f64)?;
    close("calls_per_case", u.calls_per_case, uo.calls as f64 / uo.cases as f64)?;
    close("mean_steps", u.mean_steps, uo.steps as f64 / uo.cases as f64)?;
    for v in ViewType::ALL {
        if u.views(v) != uo.views[v.as_str()] {
            return Err(format!("{v} views {} != {}", u.views(v), uo.views[v.as_str()]));
        }
    }

    let b = compute_behavior_stats(logs, budget).map_err(|e| e.to_string())?;
    let bo = behavior_oracle(logs, budget);
    let pct = |k: usize| if bo.total == 0 { 0.0 } else { 100.0 * k as f64 / bo.total as f64 };
    close("exact_repeat_pct", b.exact_repeat_pct, pct(bo.exact))?;
    close("repeated_mode_pct", b.repeated_mode_pct, pct(bo.same_mode))?;
    close("longest_same_mode_run_norm", b.longest_same_mode_run_norm, bo.longest_norm_mean)?;
    close("primitives_per_task", b.primitives_per_task, bo.total as f64 / logs.len() as f64)?;
    for m in ActionMode::ALL {
        let want = bo.mode_counts.get(m.as_str()).copied().unwrap_or(0) as f64 / bo.total.max(1) as f64;
        let got = b.action_mode_distribution.get(&m).copied().unwrap_or(0.0);
        close(&format!("share of {m}"), got, want)?;
    }
    if bo.total > 0 {
        close("share sum", b.action_mode_distribution.values().sum::<f64>(), 1.0)?;
    }
    Ok(())
}

/// Every file under `root`, keyed by relative path.
pub fn tree_bytes(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
