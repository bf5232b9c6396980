use std::collections::HashSet;
use std::fmt;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use super::{ImageRef, SkillPackage, ViewType, FORMAT_VERSION};

/// Plausible number of state cards for a non-text-only skill.
pub const CARDS_PER_SKILL_BAND: (usize, usize) = (1, 8);
/// Plausible number of views in one keyframe bundle.
pub const VIEWS_PER_CARD_BAND: (usize, usize) = (1, 4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnsupportedVersion,
    InvalidSkillName,
    EmptyProcedure,
    CardBundleMisalignment,
    StateIdMismatch,
    DuplicateStateId,
    EmptyStateId,
    EmptyWhenToUse,
    EmptyVerificationCue,
    NoAvailableViews,
    ViewNotAvailable,
    UnsafeImagePath,
    UnreadableImage,
    ImageDimensionMismatch,
    BBoxOutOfBounds,
    // warning tier
    MissingFullFrame,
    CardCountOutOfBand,
    ViewCountOutOfBand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.state_id {
            Some(id) => write!(f, "[{id}] {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Outcome of [`validate_package`]. Only `violations` make a package invalid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn has_warning(&self, kind: ViolationKind) -> bool {
        self.warnings.iter().any(|v| v.kind == kind)
    }

    fn error(&mut self, kind: ViolationKind, state_id: Option<&str>, message: impl Into<String>) {
        self.violations.push(Violation { kind, state_id: state_id.map(str::to_string), message: message.into() });
    }

    fn warn(&mut self, kind: ViolationKind, state_id: Option<&str>, message: impl Into<String>) {
        self.warnings.push(Violation { kind, state_id: state_id.map(str::to_string), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "error: {v}")?;
        }
        for v in &self.warnings {
            writeln!(f, "warning: {v}")?;
        }
        Ok(())
    }
}

pub fn is_valid_skill_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Walk every package invariant and report all violations; image files are
/// resolved relative to `root`.
pub fn validate_package(pkg: &SkillPackage, root: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();

    if pkg.version != FORMAT_VERSION {
        report.error(
            ViolationKind::UnsupportedVersion,
            None,
            format!("unsupported format version `{}` (expected `{FORMAT_VERSION}`)", pkg.version),
        );
    }
    if !is_valid_skill_name(&pkg.descriptor.skill_name) {
        report.error(
            ViolationKind::InvalidSkillName,
            None,
            format!("skill name `{}` must match [A-Za-z0-9_-]+", pkg.descriptor.skill_name),
        );
    }
    if pkg.procedure.trim().is_empty() {
        report.error(ViolationKind::EmptyProcedure, None, "procedure is empty");
    }
    if pkg.state_cards.len() != pkg.keyframes.len() {
        report.error(
            ViolationKind::CardBundleMisalignment,
            None,
            format!(
                "card/bundle misalignment: {} state cards but {} keyframe bundles",
                pkg.state_cards.len(),
                pkg.keyframes.len()
            ),
        );
    }

    let mut seen = HashSet::new();
    for card in &pkg.state_cards {
        let id = card.state_id.as_str();
        if id.trim().is_empty() {
            report.error(ViolationKind::EmptyStateId, None, "state card with empty state_id");
        } else if !seen.insert(id) {
            report.error(ViolationKind::DuplicateStateId, Some(id), "duplicate state_id");
        }
        if card.when_to_use.trim().is_empty() {
            report.error(ViolationKind::EmptyWhenToUse, Some(id), "when_to_use is empty");
        }
        if card.verification_cue.trim().is_empty() {
            report.error(ViolationKind::EmptyVerificationCue, Some(id), "verification_cue is empty");
        }
        if card.available_views.is_empty() {
            report.error(ViolationKind::NoAvailableViews, Some(id), "available_views is empty");
        } else if !card.available_views.contains(&ViewType::FullFrame) {
            report.warn(ViolationKind::MissingFullFrame, Some(id), "card offers no full_frame view");
        }
    }

    for (card, bundle) in pkg.state_cards.iter().zip(&pkg.keyframes) {
        let id = card.state_id.as_str();
        if bundle.state_id != card.state_id {
            report.error(
                ViolationKind::StateIdMismatch,
                Some(id),
                format!("keyframe bundle `{}` is paired with card `{id}`", bundle.state_id),
            );
            continue;
        }
        for (view, image) in &bundle.views {
            if !card.available_views.contains(view) {
                report.error(
                    ViolationKind::ViewNotAvailable,
                    Some(id),
                    format!("bundle holds view `{view}` not listed in the card's available_views"),
                );
            }
            check_image(&mut report, id, *view, image, root);
        }
        let (lo, hi) = VIEWS_PER_CARD_BAND;
        if !(lo..=hi).contains(&bundle.views.len()) {
            report.warn(
                ViolationKind::ViewCountOutOfBand,
                Some(id),
                format!("{} views in bundle, outside [{lo}, {hi}]", bundle.views.len()),
            );
        }
        if let Some(bbox) = bundle.focus_bbox {
            if let Some(full) = bundle.views.get(&ViewType::FullFrame) {
                if !bbox.fits_within(full.width, full.height) {
                    report.error(
                        ViolationKind::BBoxOutOfBounds,
                        Some(id),
                        format!(
                            "focus_bbox {}x{}+{}+{} escapes the {}x{} full frame",
                            bbox.width, bbox.height, bbox.x, bbox.y, full.width, full.height
                        ),
                    );
                }
            }
        }
    }

    if !pkg.is_text_only() {
        let (lo, hi) = CARDS_PER_SKILL_BAND;
        if !(lo..=hi).contains(&pkg.state_cards.len()) {
            report.warn(
                ViolationKind::CardCountOutOfBand,
                None,
                format!("{} state cards, outside [{lo}, {hi}]", pkg.state_cards.len()),
            );
        }
    }

    report
}

fn check_image(report: &mut ValidationReport, id: &str, view: ViewType, image: &ImageRef, root: &Path) {
    let rel = Path::new(&image.path);
    if image.path.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        report.error(
            ViolationKind::UnsafeImagePath,
            Some(id),
            format!("{view} image path `{}` must be relative and stay inside the package", image.path),
        );
        return;
    }
    let full = root.join(rel);
    match image::image_dimensions(&full) {
        Ok((w, h)) if (w, h) == (image.width, image.height) => {}
        Ok((w, h)) => report.error(
            ViolationKind::ImageDimensionMismatch,
            Some(id),
            format!(
                "{view} image `{}` is {w}x{h}, manifest says {}x{}",
                image.path, image.width, image.height
            ),
        ),
        Err(e) => report.error(
            ViolationKind::UnreadableImage,
            Some(id),
            format!("{view} image `{}` is unreadable: {e}", full.display()),
        ),
    }
}
