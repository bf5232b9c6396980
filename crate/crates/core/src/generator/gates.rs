use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::draft::CardPurpose;
use super::GenError;
use crate::package::{
    is_valid_skill_name, SkillPackage, ValidationReport, ViewType, CARDS_PER_SKILL_BAND, VIEWS_PER_CARD_BAND,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateFailure {
    pub gate: String,
    pub message: String,
}

impl GateFailure {
    pub fn new(gate: &str, message: impl Into<String>) -> Self {
        GateFailure { gate: gate.into(), message: message.into() }
    }
}

/// Outcome of one gate on one subject (plan, spec or package name).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateRecord {
    pub gate: String,
    pub subject: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

impl GateRecord {
    pub fn pass(gate: &str, subject: &str) -> Self {
        GateRecord { gate: gate.into(), subject: subject.into(), passed: true, message: String::new() }
    }

    pub fn fail(subject: &str, f: GateFailure) -> Self {
        GateRecord { gate: f.gate, subject: subject.into(), passed: false, message: f.message }
    }
}

/// Thresholds and named checks applied between phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorGates {
    /// Lexical overlap of name + description at or above which two plans merge.
    pub merge_threshold: f64,
    /// Merged specs covering more than this fraction of the pool are rejected.
    pub umbrella_fraction: f64,
    pub views_cap: usize,
    pub cards_band: (usize, usize),
    pub views_band: (usize, usize),
}

impl Default for GeneratorGates {
    fn default() -> Self {
        GeneratorGates {
            merge_threshold: 0.6,
            umbrella_fraction: 0.6,
            views_cap: 10,
            cards_band: CARDS_PER_SKILL_BAND,
            views_band: VIEWS_PER_CARD_BAND,
        }
    }
}

fn check(ok: bool, gate: &str, message: impl FnOnce() -> String) -> Result<(), GateFailure> {
    if ok {
        Ok(())
    } else {
        Err(GateFailure::new(gate, message()))
    }
}

/// Views a card of each purpose may carry.
pub fn allowed_views(purpose: CardPurpose) -> &'static [ViewType] {
    match purpose {
        CardPurpose::Recognition => &[ViewType::FullFrame, ViewType::FocusCrop],
        CardPurpose::Transition => &[ViewType::FullFrame, ViewType::FocusCrop, ViewType::Before, ViewType::After],
        CardPurpose::Verification => &[ViewType::FullFrame, ViewType::FocusCrop, ViewType::After],
    }
}

impl GeneratorGates {
    pub(crate) fn check_config(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.merge_threshold) {
            return bad("merge_threshold must be within [0, 1]");
        }
        if !(self.umbrella_fraction > 0.0 && self.umbrella_fraction <= 1.0) {
            return bad("umbrella_fraction must be within (0, 1]");
        }
        if self.views_cap == 0 || self.cards_band.0 == 0 || self.views_band.0 == 0 {
            return bad("views_cap and band minimums must be at least 1");
        }
        if self.cards_band.0 > self.cards_band.1 || self.views_band.0 > self.views_band.1 {
            return bad("band minimum exceeds maximum");
        }
        Ok(())
    }

    pub fn plan_fields(&self, name: &str, boundary: &str, completion: &str, covered: &[String]) -> Result<(), GateFailure> {
        check(is_valid_skill_name(name), "plan_schema", || format!("`{name}` is not a valid skill name"))?;
        check(!boundary.trim().is_empty(), "plan_schema", || format!("`{name}` has an empty workflow boundary"))?;
        check(!completion.trim().is_empty(), "plan_schema", || format!("`{name}` has an empty completion condition"))?;
        check(!covered.is_empty(), "plan_schema", || format!("`{name}` covers no tasks"))
    }

    pub fn cluster_membership(&self, name: &str, covered: &[String], members: &[String]) -> Result<(), GateFailure> {
        match covered.iter().find(|id| !members.contains(id)) {
            Some(id) => Err(GateFailure::new(
                "cluster_membership",
                format!("`{name}` covers task `{id}`, which is not in its cluster"),
            )),
            None => Ok(()),
        }
    }

    pub fn umbrella(&self, name: &str, covered: usize, pool_size: usize) -> Result<(), GateFailure> {
        let limit = self.umbrella_fraction * pool_size as f64;
        check(covered as f64 <= limit, "umbrella", || {
            format!("`{name}` covers {covered} of {pool_size} tasks, above the umbrella limit of {limit}")
        })
    }

    pub fn view_policy(&self, state_id: &str, purpose: CardPurpose, views: &BTreeSet<ViewType>) -> Result<(), GateFailure> {
        let allowed = allowed_views(purpose);
        match views.iter().find(|v| !allowed.contains(v)) {
            Some(v) => Err(GateFailure::new(
                "view_policy",
                format!("card `{state_id}` has purpose {purpose} and may not carry a {v} view"),
            )),
            None => Ok(()),
        }
    }

    pub fn card_band(&self, name: &str, cards: usize) -> Result<(), GateFailure> {
        let (lo, hi) = self.cards_band;
        check((lo..=hi).contains(&cards), "card_band", || format!("`{name}` has {cards} cards; allowed {lo}-{hi}"))
    }

    pub fn view_band(&self, state_id: &str, views: usize) -> Result<(), GateFailure> {
        let (lo, hi) = self.views_band;
        check((lo..=hi).contains(&views), "view_band", || {
            format!("card `{state_id}` has {views} views; allowed {lo}-{hi}")
        })
    }

    /// Total views must stay within the cap and below the number of source frames.
    pub fn views_cap(&self, name: &str, views: usize, source_frames: usize) -> Result<(), GateFailure> {
        check(views <= self.views_cap, "views_cap", || {
            format!("`{name}` stores {views} views; the cap is {}", self.views_cap)
        })?;
        check(views < source_frames, "views_cap", || {
            format!("`{name}` stores {views} views from only {source_frames} source frames")
        })
    }

    /// Final checklist over a written package and its validation report.
    pub fn audit(&self, pkg: &SkillPackage, report: &ValidationReport) -> Result<(), GateFailure> {
        if let Some(v) = report.violations.first() {
            return Err(GateFailure::new("audit", format!("validation failed: {v}")));
        }
        if let Some(v) = report.warnings.first() {
            return Err(GateFailure::new("audit", format!("validation warning: {v}")));
        }
        self.card_band(pkg.name(), pkg.state_cards.len())?;
        for b in &pkg.keyframes {
            self.view_band(&b.state_id, b.views.len())?;
        }
        check(pkg.total_views() <= self.views_cap, "audit", || format!("`{}` exceeds the views cap", pkg.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn umbrella_threshold() {
        let g = GeneratorGates::default();
        assert!(g.umbrella("wide", 50, 50).is_err());
        assert!(g.umbrella("ok", 30, 50).is_ok());
        assert!(g.umbrella("edge", 31, 50).is_err());
    }

    #[test]
    fn view_policy_per_purpose() {
        let g = GeneratorGates::default();
        let after: BTreeSet<_> = [ViewType::FullFrame, ViewType::After].into();
        let e = g.view_policy("s", CardPurpose::Recognition, &after).unwrap_err();
        assert_eq!(e.gate, "view_policy");
        assert!(e.message.contains("after"));
        assert!(g.view_policy("s", CardPurpose::Verification, &after).is_ok());
        let before: BTreeSet<_> = [ViewType::Before].into();
        assert!(g.view_policy("s", CardPurpose::Verification, &before).is_err());
        assert!(g.view_policy("s", CardPurpose::Transition, &before).is_ok());
    }
}
