//! Hand-tabulated goal/view table and a Stage-1 reply fuzzer with its own acceptance oracle.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::json;

use mmskills::package::{SkillDescriptor, SkillPackage, StateCard, ViewType, FORMAT_VERSION};
use mmskills::protocol::ViewBudget;

/// Every accepted (goal, view set), written out by hand from the goal rules; all other
/// combinations of the four goals and fifteen non-empty view sets are rejected.
pub const ACCEPTED: [(&str, &[&str]); 12] = [
    ("locate_control", &["full_frame"]),
    ("locate_control", &["focus_crop"]),
    ("recognize_before", &["before"]),
    ("recognize_before", &["full_frame", "before"]),
    ("verify_after", &["after"]),
    ("verify_after", &["full_frame", "after"]),
    ("compare_transition", &["before"]),
    ("compare_transition", &["after"]),
    ("compare_transition", &["before", "after"]),
    ("compare_transition", &["full_frame", "before"]),
    ("compare_transition", &["full_frame", "after"]),
    ("compare_transition", &["full_frame", "before", "after"]),
];

pub const GOALS: [&str; 4] = ["locate_control", "recognize_before", "verify_after", "compare_transition"];
const VIEW_NAMES: [&str; 4] = ["full_frame", "focus_crop", "before", "after"];

pub fn goal_accepts(goal: &str, views: &BTreeSet<&str>) -> bool {
    ACCEPTED.iter().any(|(g, vs)| *g == goal && vs.iter().copied().collect::<BTreeSet<_>>() == *views)
}

/// The fifteen non-empty subsets of the four view names.
pub fn view_subsets() -> Vec<Vec<ViewType>> {
    (1u8..16)
        .map(|mask| ViewType::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, v)| *v).collect())
        .collect()
}

fn card(id: &str, views: &[ViewType]) -> StateCard {
    StateCard {
        state_id: id.into(),
        when_to_use: "when".into(),
        when_not_to_use: String::new(),
        visible_cues: vec![],
        verification_cue: "check".into(),
        available_views: views.iter().copied().collect(),
    }
}

/// Three cards with different view availability.
pub fn fuzz_skill() -> SkillPackage {
    use ViewType::*;
    SkillPackage {
        version: FORMAT_VERSION.into(),
        descriptor: SkillDescriptor {
            skill_name: "fuzz".into(),
            short_description: "fuzz target".into(),
            domain_tag: "test".into(),
            source_task_ids: vec![],
        },
        procedure: "1. act".into(),
        state_cards: vec![
            card("s1", &ViewType::ALL),
            card("s2", &[FullFrame, FocusCrop]),
            card("s3", &[FullFrame, Before, After]),
        ],
        keyframes: vec![],
    }
}

pub struct FuzzCase {
    pub reply: String,
    /// `Some(accept)` when the reply is well-formed and the oracle decided; `None` when corrupted.
    pub expect_ok: Option<bool>,
}

fn oracle(needed: bool, requests: &[(String, Vec<String>, String)], skill: &SkillPackage, budget: ViewBudget) -> bool {
    if !needed && !requests.is_empty() {
        return false;
    }
    if requests.len() > budget.max_states {
        return false;
    }
    let mut seen = HashSet::new();
    let mut total = 0;
    for (id, views, goal) in requests {
        let Some(card) = skill.card(id) else { return false };
        if !seen.insert(id.clone()) || views.is_empty() {
            return false;
        }
        let set: BTreeSet<&str> = views.iter().map(String::as_str).collect();
        if set.len() != views.len() || !goal_accepts(goal, &set) {
            return false;
        }
        if !set.iter().all(|v| card.available_views.iter().any(|a| a.as_str() == *v)) {
            return false;
        }
        total += views.len();
    }
    total <= budget.max_views
}

fn wrap(payload: &str) -> String {
    format!("```\nLOAD_STATE_VIEWS({payload})\n```")
}

/// One random reply: a structured payload (mostly near the valid region) or a corrupted one.
pub fn fuzz_case(rng: &mut impl Rng, skill: &SkillPackage, budget: ViewBudget) -> FuzzCase {
    let needed = rng.random_bool(0.85);
    let n = rng.random_range(0..=3);
    let mut requests = Vec::new();
    for _ in 0..n {
        let id = ["s1", "s2", "s3", "s1", "s3", "ghost"].choose(rng).unwrap().to_string();
        let k = rng.random_range(0..=3);
        let mut views: Vec<String> = (0..k).map(|_| VIEW_NAMES.choose(rng).unwrap().to_string()).collect();
        if rng.random_bool(0.5) {
            views.dedup();
            let mut seen = HashSet::new();
            views.retain(|v| seen.insert(v.clone()));
        }
        let goal = GOALS.choose(rng).unwrap().to_string();
        requests.push((id, views, goal));
    }
    let mut obj = json!({
        "visual_reference_needed": needed,
        "why_not_text_only": "colours matter",
        "requests": requests.iter().map(|(id, v, g)| json!({"state_id": id, "views": v, "evidence_goal": g, "reason": "r"})).collect::<Vec<_>>(),
    });
    let clean = wrap(&obj.to_string());
    let corruption = rng.random_range(0..20);
    let reply = match corruption {
        0 => obj.to_string(),
        1 => format!("{clean}\n{clean}"),
        2 => format!("```\nLOAD_STATE_VIEWS({}", obj),
        3 => format!("Here you go:\n{clean}"),
        4 => wrap(&obj.to_string()[..obj.to_string().len() / 2]),
        5 => {
            obj.as_object_mut().unwrap().remove("requests");
            wrap(&obj.to_string())
        }
        6 => {
            obj.as_object_mut().unwrap().insert("confidence".into(), json!(0.9));
            wrap(&obj.to_string())
        }
        7 => "```\nDONE\n```".into(),
        8 => "```\nLOAD_SKILL(\"fuzz\")\n```".into(),
        9 => {
            obj["requests"] = json!([{"state_id": "s1", "views": ["thumbnail"], "evidence_goal": "locate_control", "reason": "r"}]);
            wrap(&obj.to_string())
        }
        10 => {
            obj["visual_reference_needed"] = json!("yes");
            wrap(&obj.to_string())
        }
        11 => "```\n```".into(),
        12 => {
            obj["requests"] = json!([{"state_id": "s1", "views": ["after"], "evidence_goal": "guess", "reason": "r"}]);
            wrap(&obj.to_string())
        }
        _ => {
            return FuzzCase { expect_ok: Some(oracle(needed, &requests, skill, budget)), reply: clean };
        }
    };
    FuzzCase { reply, expect_ok: None }
}

/// Budget and availability facts an accepted selection must satisfy.
pub fn selection_within_limits(
    sel: &mmskills::protocol::ViewSelection,
    skill: &SkillPackage,
    budget: ViewBudget,
) -> Result<(), String> {
    if sel.requests.len() > budget.max_states {
        return Err(format!("{} states", sel.requests.len()));
    }
    if sel.total_views() > budget.max_views {
        return Err(format!("{} views", sel.total_views()));
    }
    if !sel.visual_reference_needed && !sel.requests.is_empty() {
        return Err("requests without need".into());
    }
    let mut per_state: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &sel.requests {
        *per_state.entry(&r.state_id).or_default() += 1;
        let card = skill.card(&r.state_id).ok_or(format!("unknown {}", r.state_id))?;
        if let Some(v) = r.views.iter().find(|v| !card.available_views.contains(v)) {
            return Err(format!("{v} not available on {}", r.state_id));
        }
    }
    match per_state.values().any(|c| *c > 1) {
        true => Err("state requested twice".into()),
        false => Ok(()),
    }
}

