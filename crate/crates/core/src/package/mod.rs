//! Multimodal skill packages.
//!
//! A package binds a compact descriptor and a textual procedure to an ordered
//! list of state cards, each paired with a keyframe bundle that holds up to
//! four reference views of that state. A package with no cards is the plain
//! text-only skill.

mod io;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_package, save_package, view_file_name, write_view_image, LoadError, MANIFEST_FILE, VIEWS_DIR};
pub use validate::{
    is_valid_skill_name, validate_package, ValidationReport, Violation, ViolationKind, CARDS_PER_SKILL_BAND,
    VIEWS_PER_CARD_BAND,
};

/// Manifest format version written by [`save_package`].
pub const FORMAT_VERSION: &str = "mmskill/1";

/// Role of one reference image in a keyframe bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewType {
    FullFrame,
    FocusCrop,
    Before,
    After,
}

impl ViewType {
    pub const ALL: [ViewType; 4] = [ViewType::FullFrame, ViewType::FocusCrop, ViewType::Before, ViewType::After];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewType::FullFrame => "full_frame",
            ViewType::FocusCrop => "focus_crop",
            ViewType::Before => "before",
            ViewType::After => "after",
        }
    }
}

impl fmt::Display for ViewType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown view type `{0}`")]
pub struct UnknownViewType(pub String);

impl FromStr for ViewType {
    type Err = UnknownViewType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViewType::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| UnknownViewType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDescriptor {
    pub skill_name: String,
    pub short_description: String,
    pub domain_tag: String,
    #[serde(default)]
    pub source_task_ids: Vec<String>,
}

/// Decision node tied to one point of the procedure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCard {
    pub state_id: String,
    pub when_to_use: String,
    pub when_not_to_use: String,
    pub visible_cues: Vec<String>,
    pub verification_cue: String,
    pub available_views: BTreeSet<ViewType>,
}

/// Image file relative to the package root, with its pixel dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

/// Integer rectangle in full-frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        BBox { x, y, width, height }
    }

    /// True when the box has positive area and fits inside a `width`×`height` frame.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeBundle {
    pub state_id: String,
    pub views: BTreeMap<ViewType, ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus_bbox: Option<BBox>,
}

/// One skill: descriptor, procedure, and the aligned (card, bundle) pairs.
///
/// Card order is the procedural order used when rendering prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillPackage {
    pub version: String,
    pub descriptor: SkillDescriptor,
    pub procedure: String,
    pub state_cards: Vec<StateCard>,
    pub keyframes: Vec<KeyframeBundle>,
}

impl SkillPackage {
    pub fn name(&self) -> &str {
        &self.descriptor.skill_name
    }

    pub fn is_text_only(&self) -> bool {
        self.state_cards.is_empty() && self.keyframes.is_empty()
    }

    pub fn card(&self, state_id: &str) -> Option<&StateCard> {
        self.state_cards.iter().find(|c| c.state_id == state_id)
    }

    pub fn bundle(&self, state_id: &str) -> Option<&KeyframeBundle> {
        self.keyframes.iter().find(|k| k.state_id == state_id)
    }

    pub fn view(&self, state_id: &str, view: ViewType) -> Option<&ImageRef> {
        self.bundle(state_id).and_then(|b| b.views.get(&view))
    }

    pub fn total_views(&self) -> usize {
        self.keyframes.iter().map(|k| k.views.len()).sum()
    }
}

/// Degenerate text-only form: same descriptor and procedure, no cards, no keyframes.
pub fn as_text_only(pkg: &SkillPackage) -> SkillPackage {
    SkillPackage {
        version: pkg.version.clone(),
        descriptor: pkg.descriptor.clone(),
        procedure: pkg.procedure.clone(),
        state_cards: Vec::new(),
        keyframes: Vec::new(),
    }
}
