use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RuntimeConfig;
use crate::library::CandidateSet;
use crate::package::ViewType;
use crate::protocol::{BranchGuidance, MainDecision, PromptSurface, ViewSelection};

pub const LOG_FORMAT: &str = "trajectory/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Running,
    Done,
    Fail,
    BudgetExhausted,
    ProviderError,
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Terminal::Running => "running",
            Terminal::Done => "done",
            Terminal::Fail => "fail",
            Terminal::BudgetExhausted => "budget_exhausted",
            Terminal::ProviderError => "provider_error",
        })
    }
}

/// Screenshot handle: content hash, size, and where the PNG was stored (if anywhere).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRef {
    pub sha256: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantedView {
    pub state_id: String,
    pub view: ViewType,
    pub path: String,
}

/// A completed branch consultation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchEvent {
    pub skill_name: String,
    pub selection: ViewSelection,
    pub granted_views: Vec<GrantedView>,
    pub guidance: BranchGuidance,
    pub stage1_attempts: u32,
    pub stage2_attempts: u32,
    /// Stage 1 failed twice and the branch continued text-only.
    pub fallback_used: bool,
}

/// A consultation that produced no guidance. It still counts against the consult limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedBranch {
    pub skill_name: String,
    pub reason: String,
}

/// One raw provider reply, in call order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub surface: PromptSurface,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepViolation {
    pub surface: PromptSurface,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u32,
    pub observation_ref: ObservationRef,
    pub decision: MainDecision,
    pub feedback: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branch_events: Vec<BranchEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_branches: Vec<FailedBranch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<StepViolation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_warning: Option<String>,
    pub exchanges: Vec<Exchange>,
    pub timestamp: String,
}

impl StepRecord {
    /// True when the step ran an action script in the environment.
    pub fn executed_action(&self) -> bool {
        matches!(self.decision, MainDecision::ActionScript(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub instruction: String,
    pub environment: String,
    pub condition: super::SkillCondition,
    pub config: RuntimeConfig,
    pub candidates: CandidateSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_domain: Option<String>,
    pub started_at: String,
}

/// The step that was in progress when the provider failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortedStep {
    pub index: u32,
    pub violations: Vec<StepViolation>,
    pub exchanges: Vec<Exchange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSummary {
    pub terminal: Terminal,
    pub steps: u32,
    pub actions_executed: u32,
    pub consult_counts: BTreeMap<String, u32>,
    /// Whether the environment reported its completion condition at the end.
    pub task_completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted_step: Option<AbortedStep>,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Step(StepRecord),
    Summary(LogSummary),
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log has no header line")]
    MissingHeader,
    #[error("log is incomplete: no summary line")]
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub summary: Option<LogSummary>,
}

impl TrajectoryLog {
    pub fn terminal(&self) -> Terminal {
        self.summary.as_ref().map_or(Terminal::Running, |s| s.terminal)
    }

    pub fn is_complete(&self) -> bool {
        self.summary.is_some()
    }

    pub fn decisions(&self) -> Vec<&MainDecision> {
        self.steps.iter().map(|s| &s.decision).collect()
    }

    pub fn branch_events(&self) -> impl Iterator<Item = &BranchEvent> {
        self.steps.iter().flat_map(|s| &s.branch_events)
    }

    /// Every raw reply in call order, including those of an aborted final step.
    pub fn exchanges(&self) -> impl Iterator<Item = &Exchange> {
        let aborted = self.summary.iter().flat_map(|s| s.aborted_step.iter()).flat_map(|a| &a.exchanges);
        self.steps.iter().flat_map(|s| &s.exchanges).chain(aborted)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: LogLine| {
            out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
            out.push('\n');
        };
        push(LogLine::Header(self.header.clone()));
        for s in &self.steps {
            push(LogLine::Step(s.clone()));
        }
        if let Some(s) = &self.summary {
            push(LogLine::Summary(s.clone()));
        }
        out
    }

    /// Parse a log; a missing summary is allowed here (see `is_complete`).
    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: LogLine =
                serde_json::from_str(line).map_err(|e| LogError::Parse { line: i + 1, message: e.to_string() })?;
            let misplaced = |what: &str| LogError::Parse { line: i + 1, message: format!("unexpected {what} line") };
            match parsed {
                LogLine::Header(h) if header.is_none() => header = Some(h),
                LogLine::Header(_) => return Err(misplaced("second header")),
                LogLine::Step(_) | LogLine::Summary(_) if header.is_none() => return Err(LogError::MissingHeader),
                LogLine::Step(_) if summary.is_some() => return Err(misplaced("step after summary")),
                LogLine::Step(s) => steps.push(s),
                LogLine::Summary(_) if summary.is_some() => return Err(misplaced("second summary")),
                LogLine::Summary(s) => summary = Some(s),
            }
        }
        Ok(TrajectoryLog { header: header.ok_or(LogError::MissingHeader)?, steps, summary })
    }

    pub fn write(&self, path: &Path) -> Result<(), LogError> {
        let io = |source| LogError::Io { path: path.display().to_string(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, LogError> {
        let text = fs::read_to_string(path).map_err(|source| LogError::Io { path: path.display().to_string(), source })?;
        Self::from_jsonl(&text)
    }
}
