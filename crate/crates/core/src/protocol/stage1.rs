use std::collections::{BTreeSet, HashSet};

use serde_json::{Map, Value};

use super::fence::{single_block, Strictness};
use super::main_agent::resolution_line;
use super::template::Template;
use super::{
    EvidenceGoal, PromptBundle, PromptSurface, ProtocolError, ViewBudget, ViewRequest, ViewSelection,
    OBSERVATION_LABEL,
};
use crate::package::{SkillPackage, StateCard, ViewType};

const CALL: &str = "LOAD_STATE_VIEWS";

pub struct Stage1Input<'a> {
    pub instruction: &'a str,
    pub skill: &'a SkillPackage,
    pub budget: ViewBudget,
    pub previous_steps: &'a str,
    pub feedback: &'a str,
    pub resolution: (u32, u32),
    pub observation: Option<&'a [u8]>,
}

fn views_list(views: impl IntoIterator<Item = ViewType>) -> String {
    views.into_iter().map(ViewType::as_str).collect::<Vec<_>>().join(", ")
}

/// Text manifest of the state cards: ids and cue summaries, never images.
pub fn render_card_manifest(skill: &SkillPackage) -> String {
    if skill.state_cards.is_empty() {
        return "This skill has 0 state cards, so there are no reference views to load.".to_string();
    }
    let mut out = format!("This skill has {} state cards, in procedure order:\n", skill.state_cards.len());
    for c in &skill.state_cards {
        out.push_str(&format!("- state_id: {}\n", c.state_id));
        out.push_str(&format!("  when_to_use: {}\n", c.when_to_use));
        if !c.when_not_to_use.trim().is_empty() {
            out.push_str(&format!("  when_not_to_use: {}\n", c.when_not_to_use));
        }
        if !c.visible_cues.is_empty() {
            out.push_str(&format!("  visible_cues: {}\n", c.visible_cues.join("; ")));
        }
        out.push_str(&format!("  verification_cue: {}\n", c.verification_cue));
        out.push_str(&format!("  available_views: {}\n", views_list(c.available_views.iter().copied())));
    }
    out.pop();
    out
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)"
    } else {
        s
    }
}

pub fn render_stage1_prompt(input: &Stage1Input<'_>) -> PromptBundle {
    let name = input.skill.name();
    let max_states = input.budget.max_states.to_string();
    let max_views = input.budget.max_views.to_string();
    let system_text = Template::STAGE1_SYSTEM.render(&[
        ("skill_name", name),
        ("max_states", &max_states),
        ("max_views", &max_views),
    ]);
    let user_text = Template::STAGE1_USER.render(&[
        ("instruction", input.instruction),
        ("skill_name", name),
        ("skill_description", &input.skill.descriptor.short_description),
        ("procedure", &input.skill.procedure),
        ("card_manifest", &render_card_manifest(input.skill)),
        ("previous_steps", or_none(input.previous_steps)),
        ("feedback", or_none(input.feedback)),
        ("screen_resolution_prompt", &resolution_line(input.resolution)),
    ]);
    let mut bundle = PromptBundle::new(PromptSurface::Stage1, system_text, user_text);
    if let Some(obs) = input.observation {
        bundle.push_image(OBSERVATION_LABEL, obs.to_vec());
    }
    bundle
}

fn goal_allows(goal: EvidenceGoal, views: &BTreeSet<ViewType>) -> bool {
    use ViewType::*;
    let within = |allowed: &[ViewType]| views.iter().all(|v| allowed.contains(v));
    match goal {
        EvidenceGoal::LocateControl => views.len() == 1 && (views.contains(&FullFrame) || views.contains(&FocusCrop)),
        EvidenceGoal::RecognizeBefore => views.contains(&Before) && within(&[Before, FullFrame]),
        EvidenceGoal::VerifyAfter => views.contains(&After) && within(&[After, FullFrame]),
        EvidenceGoal::CompareTransition => {
            (views.contains(&Before) || views.contains(&After)) && within(&[Before, After, FullFrame])
        }
    }
}

/// Check one request against its evidence goal, the card's available views and the remaining view budget.
pub fn validate_view_request(req: &ViewRequest, card: &StateCard, remaining_budget: usize) -> Result<(), ProtocolError> {
    if req.views.is_empty() {
        return Err(ProtocolError::EmptyViews(req.state_id.clone()));
    }
    let mut set = BTreeSet::new();
    for v in &req.views {
        if !set.insert(*v) {
            return Err(ProtocolError::DuplicateView { state_id: req.state_id.clone(), view: *v });
        }
    }
    if !goal_allows(req.evidence_goal, &set) {
        return Err(ProtocolError::GoalViewMismatch { goal: req.evidence_goal, views: views_list(req.views.iter().copied()) });
    }
    if let Some(v) = req.views.iter().find(|v| !card.available_views.contains(v)) {
        return Err(ProtocolError::ViewNotAvailable { state_id: req.state_id.clone(), view: *v });
    }
    if req.views.len() > remaining_budget {
        return Err(ProtocolError::ViewBudgetExceeded {
            state_id: req.state_id.clone(),
            requested: req.views.len(),
            remaining: remaining_budget,
        });
    }
    Ok(())
}

fn take_key<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, ProtocolError> {
    obj.get(key).ok_or_else(|| ProtocolError::MissingKey(key.to_string()))
}

fn as_str<'a>(v: &'a Value, key: &str) -> Result<&'a str, ProtocolError> {
    v.as_str().ok_or_else(|| ProtocolError::InvalidPayload(format!("`{key}` must be a string")))
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), ProtocolError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ProtocolError::UnknownKey(k.clone())),
        None => Ok(()),
    }
}

fn parse_request(v: &Value) -> Result<ViewRequest, ProtocolError> {
    let obj = v.as_object().ok_or_else(|| ProtocolError::InvalidPayload("each request must be an object".into()))?;
    check_keys(obj, &["state_id", "views", "evidence_goal", "reason"])?;
    let state_id = as_str(take_key(obj, "state_id")?, "state_id")?.to_string();
    let raw_views = take_key(obj, "views")?
        .as_array()
        .ok_or_else(|| ProtocolError::InvalidPayload("`views` must be a list".into()))?;
    let mut views = Vec::with_capacity(raw_views.len());
    for rv in raw_views {
        let s = as_str(rv, "views")?;
        views.push(s.parse::<ViewType>().map_err(|_| ProtocolError::BadEnum { key: "views".into(), value: s.into() })?);
    }
    let goal_str = as_str(take_key(obj, "evidence_goal")?, "evidence_goal")?;
    let evidence_goal = EvidenceGoal::parse(goal_str)
        .ok_or_else(|| ProtocolError::BadEnum { key: "evidence_goal".into(), value: goal_str.into() })?;
    let reason = as_str(take_key(obj, "reason")?, "reason")?.to_string();
    Ok(ViewRequest { state_id, views, evidence_goal, reason })
}

fn reject_main_tokens(content: &str) -> Result<(), ProtocolError> {
    if matches!(content, "WAIT" | "DONE" | "FAIL") {
        return Err(ProtocolError::ForbiddenToken(content.to_string()));
    }
    if content.contains("LOAD_SKILL") {
        return Err(ProtocolError::ForbiddenToken("LOAD_SKILL".into()));
    }
    Ok(())
}

/// Parse and enforce a stage-1 reply against the skill's cards and the budgets.
pub fn parse_stage1_output(text: &str, skill: &SkillPackage, budget: ViewBudget) -> Result<ViewSelection, ProtocolError> {
    let (content, _) = single_block(text, Strictness::Strict)?;
    reject_main_tokens(&content)?;
    let payload = content
        .strip_prefix(CALL)
        .map(str::trim_start)
        .and_then(|s| s.strip_prefix('('))
        .and_then(|s| s.strip_suffix(')'))
        .ok_or(ProtocolError::MissingCall)?;
    let value: Value =
        serde_json::from_str(payload.trim()).map_err(|e| ProtocolError::InvalidPayload(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| ProtocolError::InvalidPayload("payload must be a JSON object".into()))?;
    check_keys(obj, &["visual_reference_needed", "why_not_text_only", "requests"])?;

    let needed = take_key(obj, "visual_reference_needed")?
        .as_bool()
        .ok_or_else(|| ProtocolError::InvalidPayload("`visual_reference_needed` must be a boolean".into()))?;
    let why = as_str(take_key(obj, "why_not_text_only")?, "why_not_text_only")?.to_string();
    let raw_requests = take_key(obj, "requests")?
        .as_array()
        .ok_or_else(|| ProtocolError::InvalidPayload("`requests` must be a list".into()))?;
    let requests = raw_requests.iter().map(parse_request).collect::<Result<Vec<_>, _>>()?;

    if !needed && !requests.is_empty() {
        return Err(ProtocolError::RequestsWithoutNeed(requests.len()));
    }
    if requests.len() > budget.max_states {
        return Err(ProtocolError::StateBudgetExceeded { requested: requests.len(), max: budget.max_states });
    }
    let mut seen = HashSet::new();
    let mut used = 0usize;
    for req in &requests {
        let card = skill.card(&req.state_id).ok_or_else(|| ProtocolError::UnknownStateId(req.state_id.clone()))?;
        if !seen.insert(req.state_id.as_str()) {
            return Err(ProtocolError::DuplicateState(req.state_id.clone()));
        }
        validate_view_request(req, card, budget.max_views.saturating_sub(used))?;
        used += req.views.len();
    }
    Ok(ViewSelection { visual_reference_needed: needed, why_not_text_only: why, requests })
}
