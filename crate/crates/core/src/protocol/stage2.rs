use serde_json::{Map, Value};

use super::fence::{single_block, Strictness};
use super::main_agent::resolution_line;
use super::template::Template;
use super::{
    reference_label, Applicability, BranchGuidance, CompletionScope, PromptBundle, PromptSurface, ProtocolError,
    ViewSelection, OBSERVATION_LABEL,
};
use crate::package::{SkillPackage, ViewType};

pub const NO_VISUAL_REFERENCES_TEXT: &str = "No visual references were loaded for this consultation.";

/// One reference image granted by stage 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedView {
    pub state_id: String,
    pub view: ViewType,
    pub data: Vec<u8>,
}

pub struct Stage2Input<'a> {
    pub instruction: &'a str,
    pub skill: &'a SkillPackage,
    pub selection: &'a ViewSelection,
    pub loaded_views: &'a [LoadedView],
    pub previous_steps: &'a str,
    pub feedback: &'a str,
    pub resolution: (u32, u32),
    pub observation: Option<&'a [u8]>,
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)"
    } else {
        s
    }
}

pub fn render_stage2_prompt(input: &Stage2Input<'_>) -> PromptBundle {
    let selection_record = serde_json::to_string_pretty(input.selection).expect("selection serializes");
    let mut states = Vec::new();
    for req in &input.selection.requests {
        if let Some(card) = input.skill.card(&req.state_id) {
            states.push(format!(
                "- {} (goal: {}; reason: {})\n  when_to_use: {}\n  verification_cue: {}",
                card.state_id, req.evidence_goal, req.reason, card.when_to_use, card.verification_cue
            ));
        }
    }
    let states = if states.is_empty() { "(no states selected)".to_string() } else { states.join("\n") };
    let views = if input.loaded_views.is_empty() {
        NO_VISUAL_REFERENCES_TEXT.to_string()
    } else {
        let mut s = format!(
            "{} reference images follow the live screenshot, labeled as below:\n",
            input.loaded_views.len()
        );
        s.push_str(
            &input
                .loaded_views
                .iter()
                .map(|v| format!("- {}", reference_label(&v.state_id, v.view)))
                .collect::<Vec<_>>()
                .join("\n"),
        );
        s
    };

    let system_text = Template::STAGE2_SYSTEM.render(&[]);
    let user_text = Template::STAGE2_USER.render(&[
        ("instruction", input.instruction),
        ("skill_name", input.skill.name()),
        ("procedure", &input.skill.procedure),
        ("stage1_decision", &selection_record),
        ("selected_states", &states),
        ("selected_state_views", &views),
        ("previous_steps", or_none(input.previous_steps)),
        ("feedback", or_none(input.feedback)),
        ("screen_resolution_prompt", &resolution_line(input.resolution)),
    ]);
    let mut bundle = PromptBundle::new(PromptSurface::Stage2, system_text, user_text);
    if let Some(obs) = input.observation {
        bundle.push_image(OBSERVATION_LABEL, obs.to_vec());
    }
    for v in input.loaded_views {
        bundle.push_image(reference_label(&v.state_id, v.view), v.data.clone());
    }
    bundle
}

const FORBIDDEN_LEADS: [&str; 6] = ["WAIT", "DONE", "FAIL", "LOAD_SKILL_IMAGE", "LOAD_SKILL", "LOAD_STATE_VIEWS"];
const FORBIDDEN_CALLS: [&str; 3] = ["LOAD_SKILL(", "LOAD_SKILL_IMAGE(", "LOAD_STATE_VIEWS("];

fn string_field(obj: &Map<String, Value>, key: &str) -> Result<String, ProtocolError> {
    let v = obj.get(key).ok_or_else(|| ProtocolError::MissingKey(key.to_string()))?;
    let s = v.as_str().ok_or_else(|| ProtocolError::InvalidPayload(format!("`{key}` must be a string")))?;
    if s.trim().is_empty() {
        return Err(ProtocolError::EmptyField(key.to_string()));
    }
    if let Some(call) = FORBIDDEN_CALLS.iter().find(|c| s.contains(**c)) {
        return Err(ProtocolError::ForbiddenToken(call.trim_end_matches('(').to_string()));
    }
    Ok(s.to_string())
}

fn enum_field<T: Copy>(obj: &Map<String, Value>, key: &str, all: &[T], name: fn(T) -> &'static str) -> Result<T, ProtocolError> {
    let s = string_field(obj, key)?;
    all.iter()
        .copied()
        .find(|v| name(*v) == s)
        .ok_or(ProtocolError::BadEnum { key: key.to_string(), value: s })
}

/// Parse the stage-2 planner object. Prose, main-agent tokens and extra keys are errors.
pub fn parse_stage2_output(text: &str) -> Result<BranchGuidance, ProtocolError> {
    let (content, _) = single_block(text, Strictness::Strict)?;
    if !content.starts_with('{') {
        if let Some(tok) = FORBIDDEN_LEADS.iter().find(|t| content.starts_with(**t)) {
            return Err(ProtocolError::ForbiddenToken((*tok).to_string()));
        }
        return Err(ProtocolError::InvalidPayload("expected one JSON object".into()));
    }
    let mut stream = serde_json::Deserializer::from_str(&content).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(ProtocolError::InvalidPayload(e.to_string())),
        None => return Err(ProtocolError::EmptyBlock),
    };
    let trailing = content[stream.byte_offset()..].trim();
    if !trailing.is_empty() {
        let tok = FORBIDDEN_LEADS.iter().find(|t| trailing.starts_with(**t)).copied().unwrap_or("trailing content");
        return Err(ProtocolError::ForbiddenToken(tok.to_string()));
    }
    let obj = value.as_object().ok_or_else(|| ProtocolError::InvalidPayload("expected one JSON object".into()))?;
    if let Some(k) = obj.keys().find(|k| !BranchGuidance::KEYS.contains(&k.as_str())) {
        return Err(ProtocolError::UnknownKey(k.clone()));
    }
    Ok(BranchGuidance {
        skill_applicability: enum_field(obj, "skill_applicability", &Applicability::ALL, Applicability::as_str)?,
        subgoal: string_field(obj, "subgoal")?,
        plan: string_field(obj, "plan")?,
        do_not_do: string_field(obj, "do_not_do")?,
        fallback_if_no_progress: string_field(obj, "fallback_if_no_progress")?,
        expected_state: string_field(obj, "expected_state")?,
        completion_scope: enum_field(obj, "completion_scope", &CompletionScope::ALL, CompletionScope::as_str)?,
    })
}
