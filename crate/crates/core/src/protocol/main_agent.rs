use std::sync::OnceLock;

use regex::Regex;

use super::fence::{single_block, Strictness};
use super::template::Template;
use super::{BranchGuidance, Diagnostic, MainDecision, PromptBundle, PromptSurface, ProtocolError, OBSERVATION_LABEL};
use crate::package::SkillPackage;
use crate::text::truncate_chars;

/// Text of the skills section when the candidate list is empty.
pub const NO_SKILLS_TEXT: &str = "(none available; act directly from the screenshot)";

const NONE: &str = "(none)";
const MAX_HINTS: usize = 4;
const HINT_CHARS: usize = 100;

/// What the main agent sees of one candidate skill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePreview {
    pub name: String,
    pub short_description: String,
    pub state_hints: Vec<String>,
}

impl CandidatePreview {
    pub fn from_package(pkg: &SkillPackage) -> Self {
        CandidatePreview {
            name: pkg.descriptor.skill_name.clone(),
            short_description: pkg.descriptor.short_description.clone(),
            state_hints: pkg
                .state_cards
                .iter()
                .take(MAX_HINTS)
                .map(|c| format!("{}: {}", c.state_id, truncate_chars(&c.when_to_use, HINT_CHARS)))
                .collect(),
        }
    }
}

pub fn candidate_previews<'a>(pkgs: impl IntoIterator<Item = &'a SkillPackage>) -> Vec<CandidatePreview> {
    pkgs.into_iter().map(CandidatePreview::from_package).collect()
}

pub struct MainPromptInput<'a> {
    pub instruction: &'a str,
    /// `None` renders the no-skill baseline with no skills section at all.
    pub skills: Option<&'a [CandidatePreview]>,
    pub memo: &'a str,
    pub planner_notes: &'a [BranchGuidance],
    pub previous_steps: &'a str,
    pub feedback: &'a str,
    pub resolution: (u32, u32),
    pub observation: Option<&'a [u8]>,
    pub consult_limit: u32,
    pub client_password: &'a str,
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        NONE
    } else {
        s
    }
}

pub(crate) fn resolution_line((w, h): (u32, u32)) -> String {
    format!("The screen is {w}x{h} pixels; use these coordinates.")
}

fn render_skill_list(skills: &[CandidatePreview]) -> String {
    if skills.is_empty() {
        return NO_SKILLS_TEXT.to_string();
    }
    let mut out = String::new();
    for s in skills {
        out.push_str(&format!("- {}: {}\n", s.name, s.short_description));
        if !s.state_hints.is_empty() {
            out.push_str(&format!("  states: {}\n", s.state_hints.join("; ")));
        }
    }
    out.pop();
    out
}

fn render_notes(notes: &[BranchGuidance]) -> String {
    notes
        .iter()
        .enumerate()
        .map(|(i, g)| format!("Note {}:\n{}", i + 1, g.summary()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// System and per-step user prompt for the main agent.
pub fn render_main_prompts(input: &MainPromptInput<'_>) -> PromptBundle {
    let consult_limit = input.consult_limit.to_string();
    let callable = input.skills.is_some_and(|s| !s.is_empty());
    let skill_policy = match input.skills {
        None => String::new(),
        Some(_) if callable => Template::MAIN_SKILL_POLICY.render(&[("consult_limit", &consult_limit)]),
        Some(_) => "\nSkills: none are available for this task, so act directly.\n".to_string(),
    };
    let (option, mixing) = if callable {
        (
            ", or LOAD_SKILL(\"<exact_skill_name>\")",
            "Never combine Python with a skill call and never load more than one skill. ",
        )
    } else {
        ("", "")
    };
    let system_text = Template::MAIN_SYSTEM.render(&[
        ("skill_policy", &skill_policy),
        ("skill_output_option", option),
        ("skill_mixing_rule", mixing),
        ("client_password", input.client_password),
        ("instruction", input.instruction),
    ]);

    let skills_section = match input.skills {
        None => String::new(),
        Some(skills) => Template::MAIN_SKILLS_SECTION.render(&[("available_skills", &render_skill_list(skills))]),
    };
    let notes = render_notes(input.planner_notes);
    let user_text = Template::MAIN_USER.render(&[
        ("instruction", input.instruction),
        ("skills_section", &skills_section),
        ("active_memo", or_none(input.memo)),
        ("planner_notes", or_none(&notes)),
        ("previous_steps", or_none(input.previous_steps)),
        ("feedback", or_none(input.feedback)),
        ("screen_resolution_prompt", &resolution_line(input.resolution)),
    ]);

    let mut bundle = PromptBundle::new(PromptSurface::Main, system_text, user_text);
    if let Some(obs) = input.observation {
        bundle.push_image(OBSERVATION_LABEL, obs.to_vec());
    }
    bundle
}

fn skill_call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^LOAD_SKILL\(\s*"([^"]*)"\s*\)$"#).expect("valid regex"))
}

const CONTROL_TOKENS: [&str; 3] = ["WAIT", "DONE", "FAIL"];
const BRANCH_TOKENS: [&str; 2] = ["LOAD_STATE_VIEWS", "LOAD_SKILL_IMAGE"];

fn is_comment_or_blank(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn classify(content: &str) -> Result<MainDecision, ProtocolError> {
    match content {
        "WAIT" => return Ok(MainDecision::Wait),
        "DONE" => return Ok(MainDecision::Done),
        "FAIL" => return Ok(MainDecision::Fail),
        _ => {}
    }
    if let Some(tok) = BRANCH_TOKENS.iter().find(|t| content.contains(**t)) {
        return Err(ProtocolError::ForbiddenToken((*tok).to_string()));
    }
    if content.starts_with('{') && serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(content).is_ok() {
        return Err(ProtocolError::ForbiddenToken("planner JSON".into()));
    }

    let calls = content.matches("LOAD_SKILL").count();
    if calls > 1 {
        return Err(ProtocolError::MultipleSkillCalls(calls));
    }
    let code_lines: Vec<&str> = content.lines().filter(|l| !is_comment_or_blank(l)).map(str::trim).collect();
    if calls == 1 {
        let call_lines: Vec<&str> = code_lines.iter().copied().filter(|l| l.contains("LOAD_SKILL")).collect();
        if code_lines.len() > call_lines.len() {
            return Err(ProtocolError::MixedSkillCall);
        }
        let line = call_lines[0];
        let caps = skill_call_re().captures(line).ok_or_else(|| ProtocolError::MalformedSkillCall(line.to_string()))?;
        let name = &caps[1];
        if name.trim().is_empty() {
            return Err(ProtocolError::MalformedSkillCall("empty skill name".into()));
        }
        return Ok(MainDecision::SkillCall(name.to_string()));
    }
    if code_lines.len() > 1 && code_lines.iter().any(|l| CONTROL_TOKENS.contains(l)) {
        return Err(ProtocolError::MixedControlToken);
    }
    if let [only] = code_lines.as_slice() {
        if let Some(tok) = CONTROL_TOKENS.iter().find(|t| *t == only) {
            // a bare token with comments around it
            return classify(tok);
        }
    }
    Ok(MainDecision::ActionScript(content.to_string()))
}

/// Parse a main-agent reply, returning diagnostics for tolerated issues.
pub fn parse_main_output_with_diagnostics(text: &str) -> Result<(MainDecision, Vec<Diagnostic>), ProtocolError> {
    let (content, diagnostics) = single_block(text, Strictness::Lenient)?;
    Ok((classify(&content)?, diagnostics))
}

pub fn parse_main_output(text: &str) -> Result<MainDecision, ProtocolError> {
    parse_main_output_with_diagnostics(text).map(|(d, _)| d)
}
