//! Prompt surfaces and output grammars for the main agent and the two branch stages.
//!
//! Every model reply is expected to hold exactly one fenced code block. The
//! main agent answers with an action script, `WAIT`, `DONE`, `FAIL` or a
//! single `LOAD_SKILL("<name>")`; branch stage 1 answers with one
//! `LOAD_STATE_VIEWS({...})` call; branch stage 2 answers with the seven-key
//! planner JSON object.

mod fence;
mod main_agent;
mod stage1;
mod stage2;
mod template;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::package::ViewType;

pub use fence::{extract_blocks, single_block, Extraction, FencedBlock, Strictness};
pub use main_agent::{
    candidate_previews, parse_main_output, parse_main_output_with_diagnostics, render_main_prompts, CandidatePreview,
    MainPromptInput, NO_SKILLS_TEXT,
};
pub use stage1::{
    parse_stage1_output, render_stage1_prompt, render_card_manifest, validate_view_request, Stage1Input,
};
pub use stage2::{parse_stage2_output, render_stage2_prompt, LoadedView, Stage2Input, NO_VISUAL_REFERENCES_TEXT};
pub use template::{fill, Template, TemplateError, TEMPLATE_VERSION};

/// Which prompt surface a bundle was rendered for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSurface {
    Main,
    Stage1,
    Stage2,
    GeneratorPlan,
    GeneratorMerge,
    GeneratorDraft,
    GeneratorGround,
}

impl PromptSurface {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptSurface::Main => "main",
            PromptSurface::Stage1 => "stage1",
            PromptSurface::Stage2 => "stage2",
            PromptSurface::GeneratorPlan => "generator_plan",
            PromptSurface::GeneratorMerge => "generator_merge",
            PromptSurface::GeneratorDraft => "generator_draft",
            PromptSurface::GeneratorGround => "generator_ground",
        }
    }
}

impl fmt::Display for PromptSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptImage {
    pub label: String,
    /// Encoded image bytes (PNG).
    pub data: Vec<u8>,
}

/// Everything sent to a model for one call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub surface: PromptSurface,
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<PromptImage>,
}

/// Label of the live screenshot; always the first image when present.
pub const OBSERVATION_LABEL: &str = "observation";

impl PromptBundle {
    pub fn new(surface: PromptSurface, system_text: String, user_text: String) -> Self {
        PromptBundle { surface, system_text, user_text, images: Vec::new() }
    }

    /// Append an image; duplicate labels are ignored so labels stay unique.
    pub fn push_image(&mut self, label: impl Into<String>, data: Vec<u8>) -> bool {
        let label = label.into();
        if self.images.iter().any(|i| i.label == label) {
            return false;
        }
        self.images.push(PromptImage { label, data });
        true
    }

    pub fn image_labels(&self) -> Vec<&str> {
        self.images.iter().map(|i| i.label.as_str()).collect()
    }

    /// SHA-256 over surface, texts, labels and image bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.surface.as_str().as_bytes());
        h.update([0]);
        h.update(self.system_text.as_bytes());
        h.update([0]);
        h.update(self.user_text.as_bytes());
        for img in &self.images {
            h.update([0]);
            h.update(img.label.as_bytes());
            h.update([0]);
            h.update(&img.data);
        }
        hex::encode(h.finalize())
    }
}

/// Label used for a skill reference image inside branch prompts.
pub fn reference_label(state_id: &str, view: ViewType) -> String {
    format!("ref/{state_id}/{view}")
}

/// Parsed main-agent reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MainDecision {
    ActionScript(String),
    Wait,
    Done,
    Fail,
    SkillCall(String),
}

impl MainDecision {
    /// Text placed inside the code block for this decision.
    pub fn block_content(&self) -> String {
        match self {
            MainDecision::ActionScript(s) => s.clone(),
            MainDecision::Wait => "WAIT".into(),
            MainDecision::Done => "DONE".into(),
            MainDecision::Fail => "FAIL".into(),
            MainDecision::SkillCall(name) => format!("LOAD_SKILL(\"{name}\")"),
        }
    }

    pub fn render_canonical(&self) -> String {
        let tag = if matches!(self, MainDecision::ActionScript(_)) { "python" } else { "" };
        format!("```{tag}\n{}\n```", self.block_content())
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, MainDecision::Done | MainDecision::Fail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceGoal {
    LocateControl,
    RecognizeBefore,
    VerifyAfter,
    CompareTransition,
}

impl EvidenceGoal {
    pub const ALL: [EvidenceGoal; 4] = [
        EvidenceGoal::LocateControl,
        EvidenceGoal::RecognizeBefore,
        EvidenceGoal::VerifyAfter,
        EvidenceGoal::CompareTransition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceGoal::LocateControl => "locate_control",
            EvidenceGoal::RecognizeBefore => "recognize_before",
            EvidenceGoal::VerifyAfter => "verify_after",
            EvidenceGoal::CompareTransition => "compare_transition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for EvidenceGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRequest {
    pub state_id: String,
    pub views: Vec<ViewType>,
    pub evidence_goal: EvidenceGoal,
    pub reason: String,
}

/// Stage-1 outcome: which (state, view) pairs to load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSelection {
    pub visual_reference_needed: bool,
    pub why_not_text_only: String,
    pub requests: Vec<ViewRequest>,
}

impl ViewSelection {
    pub fn text_only(reason: impl Into<String>) -> Self {
        ViewSelection { visual_reference_needed: false, why_not_text_only: reason.into(), requests: Vec::new() }
    }

    pub fn total_views(&self) -> usize {
        self.requests.iter().map(|r| r.views.len()).sum()
    }

    /// Requested (state_id, view) pairs in request order.
    pub fn pairs(&self) -> Vec<(String, ViewType)> {
        self.requests
            .iter()
            .flat_map(|r| r.views.iter().map(move |v| (r.state_id.clone(), *v)))
            .collect()
    }

    pub fn render_canonical(&self) -> String {
        let payload = serde_json::to_string(self).expect("selection serializes");
        format!("```\nLOAD_STATE_VIEWS({payload})\n```")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    Effective,
    Ineffective,
    Uncertain,
}

impl Applicability {
    pub const ALL: [Applicability; 3] = [Applicability::Effective, Applicability::Ineffective, Applicability::Uncertain];

    pub fn as_str(self) -> &'static str {
        match self {
            Applicability::Effective => "effective",
            Applicability::Ineffective => "ineffective",
            Applicability::Uncertain => "uncertain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionScope {
    LocalOnly,
    NeedsVerification,
    MaybeComplete,
}

impl CompletionScope {
    pub const ALL: [CompletionScope; 3] =
        [CompletionScope::LocalOnly, CompletionScope::NeedsVerification, CompletionScope::MaybeComplete];

    pub fn as_str(self) -> &'static str {
        match self {
            CompletionScope::LocalOnly => "local_only",
            CompletionScope::NeedsVerification => "needs_verification",
            CompletionScope::MaybeComplete => "maybe_complete",
        }
    }
}

/// Structured guidance a branch returns to the main agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchGuidance {
    pub skill_applicability: Applicability,
    pub subgoal: String,
    pub plan: String,
    pub do_not_do: String,
    pub fallback_if_no_progress: String,
    pub expected_state: String,
    pub completion_scope: CompletionScope,
}

impl BranchGuidance {
    pub const KEYS: [&'static str; 7] = [
        "skill_applicability",
        "subgoal",
        "plan",
        "do_not_do",
        "fallback_if_no_progress",
        "expected_state",
        "completion_scope",
    ];

    pub fn render_canonical(&self) -> String {
        let payload = serde_json::to_string_pretty(self).expect("guidance serializes");
        format!("```json\n{payload}\n```")
    }

    /// Compact multi-line summary used in main-agent prompts.
    pub fn summary(&self) -> String {
        format!(
            "applicability: {}\nsubgoal: {}\nplan: {}\ndo_not_do: {}\nfallback_if_no_progress: {}\nexpected_state: {}\ncompletion_scope: {}",
            self.skill_applicability.as_str(),
            self.subgoal,
            self.plan,
            self.do_not_do,
            self.fallback_if_no_progress,
            self.expected_state,
            self.completion_scope.as_str()
        )
    }
}

/// Stage-1 request budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewBudget {
    pub max_states: usize,
    pub max_views: usize,
}

impl Default for ViewBudget {
    fn default() -> Self {
        ViewBudget { max_states: 2, max_views: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("no code block found")]
    NoCodeBlock,
    #[error("expected exactly one code block, found {0}")]
    MultipleCodeBlocks(usize),
    #[error("code block is not terminated")]
    UnterminatedBlock,
    #[error("code block is empty")]
    EmptyBlock,
    #[error("text outside the code block is not allowed here")]
    ProseOutsideBlock,
    #[error("do not mix a skill call with other code")]
    MixedSkillCall,
    #[error("do not mix WAIT/DONE/FAIL with other code")]
    MixedControlToken,
    #[error("only one LOAD_SKILL call is allowed, found {0}")]
    MultipleSkillCalls(usize),
    #[error("malformed LOAD_SKILL call: {0}")]
    MalformedSkillCall(String),
    #[error("`{0}` is not allowed on this surface")]
    ForbiddenToken(String),
    #[error("expected one LOAD_STATE_VIEWS(...) call")]
    MissingCall,
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unexpected key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` has invalid value `{value}`")]
    BadEnum { key: String, value: String },
    #[error("key `{0}` must not be empty")]
    EmptyField(String),
    #[error("visual_reference_needed is false but {0} requests were given")]
    RequestsWithoutNeed(usize),
    #[error("unknown state_id `{0}`")]
    UnknownStateId(String),
    #[error("state `{0}` requested more than once")]
    DuplicateState(String),
    #[error("request for `{0}` lists no views")]
    EmptyViews(String),
    #[error("request for `{state_id}` lists view `{view}` twice")]
    DuplicateView { state_id: String, view: ViewType },
    #[error("view `{view}` is not available for state `{state_id}`")]
    ViewNotAvailable { state_id: String, view: ViewType },
    #[error("{requested} states requested, budget is {max}")]
    StateBudgetExceeded { requested: usize, max: usize },
    #[error("request for `{state_id}` needs {requested} views but only {remaining} remain")]
    ViewBudgetExceeded { state_id: String, requested: usize, remaining: usize },
    #[error("evidence goal `{goal}` does not allow views [{views}]")]
    GoalViewMismatch { goal: EvidenceGoal, views: String },
}

/// Non-fatal observations made while parsing lenient surfaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic(pub String);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_labels_stay_unique() {
        let mut b = PromptBundle::new(PromptSurface::Main, "s".into(), "u".into());
        assert!(b.push_image(OBSERVATION_LABEL, vec![1]));
        assert!(!b.push_image(OBSERVATION_LABEL, vec![2]));
        assert_eq!(b.image_labels(), vec![OBSERVATION_LABEL]);
    }

    #[test]
    fn digest_covers_images() {
        let mut a = PromptBundle::new(PromptSurface::Main, "s".into(), "u".into());
        let b = a.clone();
        a.push_image("x", vec![1, 2]);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn decision_serde_shape() {
        let d = MainDecision::SkillCall("Example_Skill_Name".into());
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"kind":"skill_call","value":"Example_Skill_Name"}"#);
        assert_eq!(serde_json::to_string(&MainDecision::Done).unwrap(), r#"{"kind":"done"}"#);
    }
}
