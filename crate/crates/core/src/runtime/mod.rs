//! The episode loop: direct actions, branch-loaded skill consultation, budgets and logging.

mod branch;
mod config;
mod history;
mod log;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub use branch::{BranchContext, BranchOutcome};
pub use config::{ConfigError, RuntimeConfig, SkillCondition};
pub use history::{detect_loop, render_history, LoopKind, LoopWarning};
pub use log::{
    AbortedStep, BranchEvent, Exchange, FailedBranch, GrantedView, LogError, LogHeader, LogSummary, ObservationRef, StepRecord,
    StepViolation, Terminal, TrajectoryLog, LOG_FORMAT,
};

use branch::{open_branch, retry_feedback, Caller};
use crate::adapters::{EnvError, Environment, ModelProvider, Observation, ProviderError, ReplayProvider};
use crate::library::{pre_recall, CandidateSet, LexicalScorer, LibraryError, SkillLibrary};
use crate::package::as_text_only;
use crate::protocol::{
    candidate_previews, parse_main_output, render_main_prompts, BranchGuidance, CandidatePreview, MainDecision,
    MainPromptInput, PromptSurface,
};
use crate::text::truncate_chars;

const MEMO_PLAN_CHARS: usize = 200;

/// Timestamp source, so tests can produce bit-identical logs.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        format!("{}.{:03}", d.as_secs(), d.subsec_millis())
    }
}

#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl Default for FixedClock {
    fn default() -> Self {
        FixedClock("0.000".into())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("cannot store observation {path}: {source}")]
    Frames { path: String, source: std::io::Error },
}

/// `memo := subgoal + plan digest` of the latest guidance.
pub fn memo_digest(skill: &str, g: &BranchGuidance) -> String {
    format!("[{skill}] subgoal: {}; plan: {}", g.subgoal, truncate_chars(&g.plan.replace('\n', " "), MEMO_PLAN_CHARS))
}

/// Mutable state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub instruction: String,
    pub candidates: CandidateSet,
    pub consult_counts: BTreeMap<String, u32>,
    pub memo: String,
    /// Guidance gathered during the current step only.
    pub planner_notes: Vec<BranchGuidance>,
    pub history: Vec<StepRecord>,
    pub terminal: Terminal,
}

impl EpisodeState {
    pub fn new(instruction: impl Into<String>, candidates: CandidateSet) -> Self {
        EpisodeState {
            instruction: instruction.into(),
            candidates,
            consult_counts: BTreeMap::new(),
            memo: String::new(),
            planner_notes: Vec::new(),
            history: Vec::new(),
            terminal: Terminal::Running,
        }
    }

    pub fn consults(&self, skill: &str) -> u32 {
        self.consult_counts.get(skill).copied().unwrap_or(0)
    }

    pub fn is_exhausted(&self, skill: &str, consult_limit: u32) -> bool {
        self.consults(skill) >= consult_limit
    }

    /// Candidate names still offered to the main agent, best first.
    pub fn available_candidates(&self, consult_limit: u32) -> Vec<&str> {
        self.candidates.names().into_iter().filter(|n| !self.is_exhausted(n, consult_limit)).collect()
    }

    pub fn record_consult(&mut self, skill: &str) {
        *self.consult_counts.entry(skill.to_string()).or_insert(0) += 1;
    }

    /// Guidance joins this step's planner notes, replaces the memo and uses up one consult.
    pub fn apply_guidance(&mut self, skill: &str, g: &BranchGuidance) {
        self.planner_notes.push(g.clone());
        self.memo = memo_digest(skill, g);
        self.record_consult(skill);
    }

    /// Why a skill call may not open a branch right now, if it may not.
    pub fn policy_check(
        &self,
        skill: &str,
        cfg: &RuntimeConfig,
        lib: &SkillLibrary,
        branches_this_step: usize,
    ) -> Result<(), String> {
        if cfg.skill_condition == SkillCondition::NoSkill {
            return Err("skills are disabled for this task; act directly from the screenshot".into());
        }
        if !self.candidates.contains(skill) || lib.get(skill).is_none() {
            return Err(format!("`{skill}` is not one of the listed skills"));
        }
        if self.is_exhausted(skill, cfg.consult_limit) {
            return Err(format!(
                "`{skill}` reached its consult limit of {} and is no longer available",
                cfg.consult_limit
            ));
        }
        if branches_this_step >= cfg.max_branches_per_step {
            return Err(format!(
                "already consulted {branches_this_step} skills this step; choose a grounded action now"
            ));
        }
        Ok(())
    }

    fn previews(&self, lib: &SkillLibrary, cfg: &RuntimeConfig) -> Vec<CandidatePreview> {
        let pkgs = self.available_candidates(cfg.consult_limit).into_iter().filter_map(|n| lib.get(n));
        match cfg.skill_condition {
            SkillCondition::TextOnly => {
                let text: Vec<_> = pkgs.map(as_text_only).collect();
                candidate_previews(&text)
            }
            _ => candidate_previews(pkgs),
        }
    }
}

/// Knobs that do not change the episode's decisions.
pub struct EpisodeOptions<'a> {
    pub clock: &'a dyn Clock,
    /// Store each observation PNG here and reference it from the log.
    pub frames_dir: Option<PathBuf>,
    /// Skip pre-recall and use these candidates (replay).
    pub candidates: Option<CandidateSet>,
}

impl Default for EpisodeOptions<'_> {
    fn default() -> Self {
        static CLOCK: SystemClock = SystemClock;
        EpisodeOptions { clock: &CLOCK, frames_dir: None, candidates: None }
    }
}

fn observation_ref(obs: &Observation, index: u32, frames_dir: Option<&PathBuf>) -> Result<ObservationRef, RunError> {
    let path = match frames_dir {
        Some(dir) => {
            let path = dir.join(format!("step_{index:03}.png"));
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(&path, &obs.png))
                .map_err(|source| RunError::Frames { path: path.display().to_string(), source })?;
            Some(path.display().to_string())
        }
        None => None,
    };
    Ok(ObservationRef { sha256: hex::encode(Sha256::digest(&obs.png)), width: obs.width, height: obs.height, path })
}

pub fn run_episode(
    env: &mut dyn Environment,
    model: &dyn ModelProvider,
    lib: &SkillLibrary,
    cfg: &RuntimeConfig,
    instruction: &str,
) -> Result<TrajectoryLog, RunError> {
    run_episode_with(env, model, lib, cfg, instruction, &EpisodeOptions::default())
}

pub fn run_episode_with(
    env: &mut dyn Environment,
    model: &dyn ModelProvider,
    lib: &SkillLibrary,
    cfg: &RuntimeConfig,
    instruction: &str,
    opts: &EpisodeOptions<'_>,
) -> Result<TrajectoryLog, RunError> {
    cfg.validate()?;
    let candidates = match (&opts.candidates, cfg.skill_condition) {
        (Some(c), _) => c.clone(),
        (None, SkillCondition::NoSkill) => CandidateSet { instruction: instruction.to_string(), candidates: vec![] },
        (None, _) => pre_recall(instruction, lib, cfg.recall_k, &LexicalScorer)?,
    };
    let header = LogHeader {
        format: LOG_FORMAT.into(),
        instruction: instruction.to_string(),
        environment: env.descriptor(),
        condition: cfg.skill_condition,
        config: cfg.clone(),
        candidates: candidates.clone(),
        library_domain: (cfg.skill_condition != SkillCondition::NoSkill).then(|| lib.domain_tag.clone()),
        started_at: opts.clock.now(),
    };
    let mut state = EpisodeState::new(instruction, candidates);
    let mut last_feedback = String::new();
    let mut actions = 0u32;
    let mut error = None;
    let mut aborted_step = None;
    env.reset()?;

    while state.terminal == Terminal::Running {
        if state.history.len() as u32 >= cfg.step_budget {
            state.terminal = Terminal::BudgetExhausted;
            break;
        }
        let index = state.history.len() as u32;
        let obs = env.observe()?;
        let obs_ref = observation_ref(&obs, index, opts.frames_dir.as_ref())?;
        let previous_steps = render_history(&state.history, cfg.history_window);
        let loop_warning = detect_loop(&state.history, cfg.loop_window).map(|w| w.to_string());
        let base_feedback = match &loop_warning {
            Some(w) if last_feedback.is_empty() => w.clone(),
            Some(w) => format!("{last_feedback}\n{w}"),
            None => last_feedback.clone(),
        };

        state.planner_notes.clear();
        let mut exchanges = Vec::new();
        let mut violations = Vec::new();
        let mut branch_events = Vec::new();
        let mut failed_branches = Vec::new();
        let mut feedback = base_feedback.clone();
        let mut rejected = 0;
        let mut caller = Caller { model, exchanges: &mut exchanges, violations: &mut violations };

        let decision = loop {
            let previews = state.previews(lib, cfg);
            let bundle = render_main_prompts(&MainPromptInput {
                instruction,
                skills: (cfg.skill_condition != SkillCondition::NoSkill).then_some(previews.as_slice()),
                memo: &state.memo,
                planner_notes: &state.planner_notes,
                previous_steps: &previous_steps,
                feedback: &feedback,
                resolution: obs.resolution(),
                observation: Some(&obs.png),
                consult_limit: cfg.consult_limit,
                client_password: &cfg.client_password,
            });
            let reply = match caller.call(&bundle) {
                Ok(r) => r,
                Err(e) => break Err(e),
            };
            let reject = |caller: &mut Caller<'_>, message: String| {
                caller.violations.push(StepViolation { surface: PromptSurface::Main, message });
            };
            match parse_main_output(&reply) {
                Err(e) => {
                    caller.violation(PromptSurface::Main, &e);
                    rejected += 1;
                    feedback = retry_feedback(&base_feedback, &e);
                }
                Ok(MainDecision::SkillCall(name)) => {
                    if let Err(msg) = state.policy_check(&name, cfg, lib, branch_events.len() + failed_branches.len()) {
                        reject(&mut caller, msg.clone());
                        rejected += 1;
                        feedback = format!("{base_feedback}\nSkill call refused: {msg}.").trim_start().to_string();
                    } else {
                        let pkg = lib.get(&name).expect("policy check confirmed the skill");
                        let ctx = BranchContext {
                            instruction,
                            observation: &obs.png,
                            resolution: obs.resolution(),
                            previous_steps: &previous_steps,
                            feedback: &base_feedback,
                        };
                        match open_branch(&ctx, pkg, lib, cfg, &mut caller) {
                            Ok(BranchOutcome::Guidance(event)) => {
                                state.apply_guidance(&name, &event.guidance);
                                branch_events.push(event);
                            }
                            Ok(BranchOutcome::Failed(f)) => {
                                state.record_consult(&name);
                                failed_branches.push(f);
                            }
                            Err(e) => break Err(e),
                        }
                        feedback = base_feedback.clone();
                    }
                }
                Ok(d) => break Ok(d),
            }
            if rejected >= 2 {
                break Ok(MainDecision::Wait);
            }
        };

        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                error = Some(provider_error_text(index, &e));
                aborted_step = Some(AbortedStep { index, violations, exchanges });
                state.terminal = Terminal::ProviderError;
                break;
            }
        };
        let step_feedback = match &decision {
            MainDecision::ActionScript(script) => {
                actions += 1;
                env.execute(script).unwrap_or_else(|e| e.to_string())
            }
            MainDecision::Wait => "waited".to_string(),
            MainDecision::Done => {
                state.terminal = Terminal::Done;
                String::new()
            }
            MainDecision::Fail => {
                state.terminal = Terminal::Fail;
                String::new()
            }
            MainDecision::SkillCall(_) => unreachable!("skill calls never leave the decision loop"),
        };
        last_feedback = step_feedback.clone();
        state.history.push(StepRecord {
            index,
            observation_ref: obs_ref,
            decision,
            feedback: step_feedback,
            branch_events,
            failed_branches,
            violations,
            loop_warning,
            exchanges,
            timestamp: opts.clock.now(),
        });
    }

    let summary = LogSummary {
        terminal: state.terminal,
        steps: state.history.len() as u32,
        actions_executed: actions,
        consult_counts: state.consult_counts.clone(),
        task_completed: env.is_terminal(),
        error,
        aborted_step,
        finished_at: opts.clock.now(),
    };
    Ok(TrajectoryLog { header, steps: state.history, summary: Some(summary) })
}

fn provider_error_text(index: u32, e: &ProviderError) -> String {
    format!("provider failed at step {}: {e}", index + 1)
}

/// A provider that answers with the log's raw replies, in order.
///
/// A truncated log still builds; the replayed run fails at the first missing reply.
pub fn replay_provider_from_log(log: &TrajectoryLog) -> ReplayProvider {
    ReplayProvider::new(log.exchanges().map(|e| (e.surface, e.reply.clone())).collect())
}

/// Re-run a logged episode against `env` and `lib` with the log's own replies, config and candidates.
pub fn replay_episode(
    log: &TrajectoryLog,
    env: &mut dyn Environment,
    lib: &SkillLibrary,
    clock: &dyn Clock,
) -> Result<TrajectoryLog, RunError> {
    let provider = replay_provider_from_log(log);
    let opts = EpisodeOptions { clock, frames_dir: None, candidates: Some(log.header.candidates.clone()) };
    run_episode_with(env, &provider, lib, &log.header.config, &log.header.instruction, &opts)
}
