use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::protocol::ViewBudget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillCondition {
    NoSkill,
    TextOnly,
    #[serde(rename = "mmskills")]
    MmSkills,
}

impl SkillCondition {
    pub const ALL: [SkillCondition; 3] = [SkillCondition::NoSkill, SkillCondition::TextOnly, SkillCondition::MmSkills];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillCondition::NoSkill => "no_skill",
            SkillCondition::TextOnly => "text_only",
            SkillCondition::MmSkills => "mmskills",
        }
    }
}

impl fmt::Display for SkillCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillCondition {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown skill condition `{s}` (expected no_skill, text_only or mmskills)")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid runtime config: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

/// Episode settings. Read from a JSON file; missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub step_budget: u32,
    pub consult_limit: u32,
    pub max_states: usize,
    pub max_views: usize,
    pub skill_condition: SkillCondition,
    pub recall_k: usize,
    /// Full steps shown in prompts; older steps collapse to one line.
    pub history_window: usize,
    pub loop_window: usize,
    pub max_branches_per_step: usize,
    pub client_password: String,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            step_budget: 20,
            consult_limit: 2,
            max_states: 2,
            max_views: 4,
            skill_condition: SkillCondition::MmSkills,
            recall_k: 6,
            history_window: 5,
            loop_window: 3,
            max_branches_per_step: 2,
            client_password: "password".into(),
        }
    }
}

impl RuntimeConfig {
    pub fn with_condition(condition: SkillCondition) -> Self {
        RuntimeConfig { skill_condition: condition, ..Default::default() }
    }

    pub fn budget(&self) -> ViewBudget {
        ViewBudget { max_states: self.max_states, max_views: self.max_views }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks: [(&str, bool); 8] = [
            ("step_budget", self.step_budget >= 1),
            ("consult_limit", self.consult_limit >= 1),
            ("max_states", self.max_states >= 1),
            ("max_views", self.max_views >= 1),
            ("recall_k", self.recall_k >= 1),
            ("history_window", self.history_window >= 1),
            ("max_branches_per_step", self.max_branches_per_step >= 1),
            ("loop_window", self.loop_window >= 2),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some(("loop_window", _)) => Err(ConfigError::Invalid("loop_window must be at least 2".into())),
            Some((name, _)) => Err(ConfigError::Invalid(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RuntimeConfig = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text).map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_files() {
        let cfg = RuntimeConfig::from_json(r#"{"step_budget": 7, "skill_condition": "text_only"}"#).unwrap();
        assert_eq!(cfg.step_budget, 7);
        assert_eq!(cfg.skill_condition, SkillCondition::TextOnly);
        assert_eq!(cfg.consult_limit, 2);
        assert_eq!(cfg.budget(), ViewBudget { max_states: 2, max_views: 4 });
        assert!(RuntimeConfig::from_json(r#"{"max_views": 0}"#).is_err());
        assert!(RuntimeConfig::from_json(r#"{"loop_window": 1}"#).is_err());
        assert!(RuntimeConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert_eq!("mmskills".parse::<SkillCondition>().unwrap(), SkillCondition::MmSkills);
        assert_eq!(serde_json::to_string(&SkillCondition::MmSkills).unwrap(), "\"mmskills\"");
    }
}
