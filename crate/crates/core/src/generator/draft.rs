use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::gates::{GateFailure, GeneratorGates};
use super::plan::{task_lines, MergedSpec};
use super::pool::Trajectory;
use super::{parse_json_reply, retry_feedback, GenError};
use crate::adapters::ModelProvider;
use crate::package::{SkillDescriptor, StateCard, ViewType};
use crate::protocol::{PromptBundle, PromptSurface};

const DRAFT_SYSTEM: &str = "You write a reusable GUI skill from text-only demonstrations.
Write a short description, a numbered procedure, and the state cards an agent needs to recognise where it is.
Each card is anchored to one demonstration step whose screenshot will illustrate it, and has a purpose:
recognition (identify the state; views full_frame, focus_crop), transition (compare the change around the step;
may also use before and after) or verification (confirm completion; may also use after).
Reply with exactly one fenced JSON block:
```json
{\"short_description\": \"...\", \"procedure\": \"1. ...\", \"cards\": [{\"state_id\": \"snake_case\", \"purpose\": \"recognition\", \"when_to_use\": \"...\", \"when_not_to_use\": \"...\", \"visible_cues\": [\"...\"], \"verification_cue\": \"...\", \"views\": [\"full_frame\", \"focus_crop\"], \"anchor\": {\"task_id\": \"...\", \"step_index\": 0}}]}
```";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardPurpose {
    Recognition,
    Transition,
    Verification,
}

impl fmt::Display for CardPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CardPurpose::Recognition => "recognition",
            CardPurpose::Transition => "transition",
            CardPurpose::Verification => "verification",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardAnchor {
    pub task_id: String,
    pub step_index: usize,
}

/// A planned state card: text fields, requested views and the step that grounds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchoredCard {
    pub state_id: String,
    pub purpose: CardPurpose,
    pub when_to_use: String,
    #[serde(default)]
    pub when_not_to_use: String,
    #[serde(default)]
    pub visible_cues: Vec<String>,
    pub verification_cue: String,
    #[serde(default)]
    pub views: BTreeSet<ViewType>,
    pub anchor: CardAnchor,
}

impl AnchoredCard {
    /// Requested views plus the always-present full frame.
    pub fn planned_views(&self) -> BTreeSet<ViewType> {
        let mut v = self.views.clone();
        v.insert(ViewType::FullFrame);
        v
    }

    pub fn state_card(&self) -> StateCard {
        StateCard {
            state_id: self.state_id.clone(),
            when_to_use: self.when_to_use.clone(),
            when_not_to_use: self.when_not_to_use.clone(),
            visible_cues: self.visible_cues.clone(),
            verification_cue: self.verification_cue.clone(),
            available_views: self.planned_views(),
        }
    }
}

/// Text-only draft of a package; no image has been read yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftPackage {
    pub descriptor: SkillDescriptor,
    pub procedure: String,
    pub cards: Vec<AnchoredCard>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DraftReply {
    short_description: String,
    procedure: String,
    cards: Vec<AnchoredCard>,
}

fn check_reply(r: &DraftReply) -> Result<(), String> {
    if r.short_description.trim().is_empty() {
        return Err("short_description is empty".into());
    }
    if r.procedure.trim().is_empty() {
        return Err("procedure is empty".into());
    }
    let mut seen = BTreeSet::new();
    for c in &r.cards {
        if c.state_id.trim().is_empty() {
            return Err("a card has an empty state_id".into());
        }
        if !seen.insert(c.state_id.as_str()) {
            return Err(format!("duplicate state_id `{}`", c.state_id));
        }
        if c.when_to_use.trim().is_empty() || c.verification_cue.trim().is_empty() {
            return Err(format!("card `{}` needs when_to_use and verification_cue", c.state_id));
        }
    }
    Ok(())
}

/// Every anchor must name a pool trajectory and one of its steps.
pub fn check_anchors(cards: &[AnchoredCard], pool: &[Trajectory]) -> Result<(), GateFailure> {
    for c in cards {
        let a = &c.anchor;
        let Some(t) = pool.iter().find(|t| t.task_id == a.task_id) else {
            return Err(GateFailure::new(
                "anchors",
                format!("card `{}` is anchored to unknown task `{}`", c.state_id, a.task_id),
            ));
        };
        if a.step_index >= t.steps.len() {
            return Err(GateFailure::new(
                "anchors",
                format!(
                    "card `{}` is anchored to step {} of `{}`, which has {} steps",
                    c.state_id,
                    a.step_index,
                    a.task_id,
                    t.steps.len()
                ),
            ));
        }
    }
    Ok(())
}

fn draft_prompt(spec: &MergedSpec, pool: &[Trajectory]) -> PromptBundle {
    let user = format!(
        "Skill: {}\nWorkflow: {}\nCompletion: {}\nReference demonstrations (instruction, then numbered actions):\n{}",
        spec.name,
        spec.generalized_description,
        spec.completion_condition,
        task_lines(&spec.reference_task_ids, pool)
    );
    PromptBundle::new(PromptSurface::GeneratorDraft, DRAFT_SYSTEM.into(), user)
}

/// Phase 3: draft descriptor, procedure and anchored cards from text alone.
///
/// Returns the draft with any retry warnings. Bad anchors surface as `GenError::Gate`.
pub fn draft_text_package(
    spec: &MergedSpec,
    pool: &[Trajectory],
    model: &dyn ModelProvider,
    _gates: &GeneratorGates,
    domain_tag: &str,
) -> Result<(DraftPackage, Vec<String>), GenError> {
    if let Some(id) = spec.reference_task_ids.iter().find(|id| !pool.iter().any(|t| &t.task_id == *id)) {
        return Err(GenError::Pool(format!("spec `{}` references unknown task `{id}`", spec.name)));
    }
    let mut bundle = draft_prompt(spec, pool);
    let mut warnings = Vec::new();
    let mut reply = None;
    for attempt in 0..2 {
        let raw = model
            .complete(&bundle)
            .map_err(|source| GenError::Provider { phase: "draft_text_package", source })?;
        match parse_json_reply::<DraftReply>(&raw).and_then(|r| check_reply(&r).map(|_| r)) {
            Ok(r) => {
                reply = Some(r);
                break;
            }
            Err(message) if attempt == 0 => {
                warnings.push(format!("{}: draft reply rejected ({message}); retrying", spec.name));
                bundle.user_text.push_str(&retry_feedback(&message));
            }
            Err(message) => return Err(GenError::Schema { phase: "draft_text_package", message, raw }),
        }
    }
    let reply = reply.expect("loop returns or sets the reply");
    check_anchors(&reply.cards, pool).map_err(GenError::Gate)?;
    Ok((
        DraftPackage {
            descriptor: SkillDescriptor {
                skill_name: spec.name.clone(),
                short_description: reply.short_description,
                domain_tag: domain_tag.into(),
                source_task_ids: spec.reference_task_ids.clone(),
            },
            procedure: reply.procedure,
            cards: reply.cards,
        },
        warnings,
    ))
}
