//! Named-placeholder templates. `{name}` is substituted; `{{` and `}}` are literal braces.

use std::collections::BTreeSet;

pub const TEMPLATE_VERSION: &str = "prompts/1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("no value for placeholder `{0}`")]
    Missing(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
    #[error("value `{0}` does not match any placeholder")]
    Unused(String),
}

/// A text asset with named placeholders.
#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! asset {
    ($name:literal) => {
        Template { name: $name, text: include_str!(concat!("../../templates/", $name, ".txt")) }
    };
}

impl Template {
    pub const MAIN_SYSTEM: Template = asset!("main_system");
    pub const MAIN_SKILL_POLICY: Template = asset!("main_skill_policy");
    pub const MAIN_USER: Template = asset!("main_user");
    pub const MAIN_SKILLS_SECTION: Template = asset!("main_skills_section");
    pub const STAGE1_SYSTEM: Template = asset!("stage1_system");
    pub const STAGE1_USER: Template = asset!("stage1_user");
    pub const STAGE2_SYSTEM: Template = asset!("stage2_system");
    pub const STAGE2_USER: Template = asset!("stage2_user");

    pub const ALL: [Template; 8] = [
        Self::MAIN_SYSTEM,
        Self::MAIN_SKILL_POLICY,
        Self::MAIN_USER,
        Self::MAIN_SKILLS_SECTION,
        Self::STAGE1_SYSTEM,
        Self::STAGE1_USER,
        Self::STAGE2_SYSTEM,
        Self::STAGE2_USER,
    ];

    pub fn placeholders(&self) -> BTreeSet<String> {
        scan(self.text).map(|parts| parts.into_iter().filter_map(Part::name).map(str::to_string).collect()).unwrap_or_default()
    }

    /// Fill every placeholder; panics on a mismatch, which is a bug in the caller's variable list.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        fill(self.text, vars).unwrap_or_else(|e| panic!("template `{}`: {e}", self.name))
    }
}

enum Part<'a> {
    Lit(&'a str),
    Brace(char),
    Var(&'a str),
}

impl<'a> Part<'a> {
    fn name(self) -> Option<&'a str> {
        match self {
            Part::Var(n) => Some(n),
            _ => None,
        }
    }
}

fn scan(text: &str) -> Result<Vec<Part<'_>>, TemplateError> {
    let mut parts = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(i) = rest.find(['{', '}']) {
        parts.push(Part::Lit(&rest[..i]));
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("{{") {
            parts.push(Part::Brace('{'));
            rest = after;
            offset += i + 2;
        } else if let Some(after) = tail.strip_prefix("}}") {
            parts.push(Part::Brace('}'));
            rest = after;
            offset += i + 2;
        } else if tail.starts_with('{') {
            let end = tail.find('}').ok_or(TemplateError::Unterminated(offset + i))?;
            let name = &tail[1..end];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(TemplateError::Unterminated(offset + i));
            }
            parts.push(Part::Var(name));
            rest = &tail[end + 1..];
            offset += i + end + 1;
        } else {
            // lone `}` is literal
            parts.push(Part::Brace('}'));
            rest = &tail[1..];
            offset += i + 1;
        }
    }
    parts.push(Part::Lit(rest));
    Ok(parts)
}

/// Substitute `vars` into `text`. Every placeholder needs a value and every value a placeholder.
pub fn fill(text: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let parts = scan(text)?;
    let mut out = String::with_capacity(text.len());
    let mut used = BTreeSet::new();
    for part in parts {
        match part {
            Part::Lit(s) => out.push_str(s),
            Part::Brace(c) => out.push(c),
            Part::Var(name) => {
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::Missing(name.to_string()))?;
                used.insert(name);
                out.push_str(value);
            }
        }
    }
    if let Some((k, _)) = vars.iter().find(|(k, _)| !used.contains(k)) {
        return Err(TemplateError::Unused(k.to_string()));
    }
    Ok(out)
}
