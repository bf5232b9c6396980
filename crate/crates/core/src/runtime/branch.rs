use super::config::{RuntimeConfig, SkillCondition};
use super::log::{BranchEvent, Exchange, FailedBranch, GrantedView, StepViolation};
use crate::adapters::{ModelProvider, ProviderError};
use crate::library::SkillLibrary;
use crate::package::{as_text_only, SkillPackage};
use crate::protocol::{
    parse_stage1_output, parse_stage2_output, render_stage1_prompt, render_stage2_prompt, LoadedView, PromptBundle,
    PromptSurface, ProtocolError, Stage1Input, Stage2Input, ViewSelection,
};

/// What the main loop hands to a branch. Nothing from the branch flows back except the outcome.
pub struct BranchContext<'a> {
    pub instruction: &'a str,
    pub observation: &'a [u8],
    pub resolution: (u32, u32),
    pub previous_steps: &'a str,
    pub feedback: &'a str,
}

pub enum BranchOutcome {
    Guidance(BranchEvent),
    Failed(FailedBranch),
}

/// Calls the model and keeps the exchange and violation records of the enclosing step.
pub(crate) struct Caller<'a> {
    pub model: &'a dyn ModelProvider,
    pub exchanges: &'a mut Vec<Exchange>,
    pub violations: &'a mut Vec<StepViolation>,
}

impl Caller<'_> {
    pub fn call(&mut self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let reply = self.model.complete(bundle)?;
        self.exchanges.push(Exchange { surface: bundle.surface, reply: reply.clone() });
        Ok(reply)
    }

    pub fn violation(&mut self, surface: PromptSurface, err: &ProtocolError) {
        self.violations.push(StepViolation { surface, message: err.to_string() });
    }
}

pub(crate) fn retry_feedback(base: &str, err: &ProtocolError) -> String {
    let note = format!("Your previous reply was rejected: {err}. Reply again following the output format exactly.");
    if base.trim().is_empty() {
        note
    } else {
        format!("{base}\n{note}")
    }
}

/// Two-stage consultation of `skill`. Protocol failures are retried once per stage.
pub(crate) fn open_branch(
    ctx: &BranchContext<'_>,
    skill: &SkillPackage,
    lib: &SkillLibrary,
    cfg: &RuntimeConfig,
    caller: &mut Caller<'_>,
) -> Result<BranchOutcome, ProviderError> {
    let text_only;
    let view_skill = if cfg.skill_condition == SkillCondition::TextOnly {
        text_only = as_text_only(skill);
        &text_only
    } else {
        skill
    };

    let mut stage1_attempts = 0;
    let mut fallback_used = false;
    let selection = if cfg.skill_condition == SkillCondition::TextOnly {
        ViewSelection::text_only("text-only condition: no reference views exist")
    } else {
        let mut feedback = ctx.feedback.to_string();
        loop {
            stage1_attempts += 1;
            let bundle = render_stage1_prompt(&Stage1Input {
                instruction: ctx.instruction,
                skill: view_skill,
                budget: cfg.budget(),
                previous_steps: ctx.previous_steps,
                feedback: &feedback,
                resolution: ctx.resolution,
                observation: Some(ctx.observation),
            });
            let reply = caller.call(&bundle)?;
            match parse_stage1_output(&reply, view_skill, cfg.budget()) {
                Ok(sel) => break sel,
                Err(e) => {
                    caller.violation(PromptSurface::Stage1, &e);
                    if stage1_attempts >= 2 {
                        fallback_used = true;
                        break ViewSelection::text_only(format!("stage 1 output rejected twice: {e}"));
                    }
                    feedback = retry_feedback(ctx.feedback, &e);
                }
            }
        }
    };

    let mut loaded = Vec::new();
    let mut granted = Vec::new();
    for (state_id, view) in selection.pairs() {
        let Some(image) = view_skill.view(&state_id, view) else { continue };
        match lib.read_view(view_skill.name(), &state_id, view) {
            Ok(data) => {
                granted.push(GrantedView { state_id: state_id.clone(), view, path: image.path.clone() });
                loaded.push(LoadedView { state_id, view, data });
            }
            Err(e) => caller.violations.push(StepViolation {
                surface: PromptSurface::Stage2,
                message: format!("reference view {state_id}/{view} could not be loaded: {e}"),
            }),
        }
    }

    let mut stage2_attempts = 0;
    let mut feedback = ctx.feedback.to_string();
    loop {
        stage2_attempts += 1;
        let bundle = render_stage2_prompt(&Stage2Input {
            instruction: ctx.instruction,
            skill: view_skill,
            selection: &selection,
            loaded_views: &loaded,
            previous_steps: ctx.previous_steps,
            feedback: &feedback,
            resolution: ctx.resolution,
            observation: Some(ctx.observation),
        });
        let reply = caller.call(&bundle)?;
        match parse_stage2_output(&reply) {
            Ok(guidance) => {
                return Ok(BranchOutcome::Guidance(BranchEvent {
                    skill_name: skill.name().to_string(),
                    selection,
                    granted_views: granted,
                    guidance,
                    stage1_attempts,
                    stage2_attempts,
                    fallback_used,
                }))
            }
            Err(e) => {
                caller.violation(PromptSurface::Stage2, &e);
                if stage2_attempts >= 2 {
                    return Ok(BranchOutcome::Failed(FailedBranch {
                        skill_name: skill.name().to_string(),
                        reason: format!("stage 2 output rejected twice: {e}"),
                    }));
                }
                feedback = retry_feedback(ctx.feedback, &e);
            }
        }
    }
}
