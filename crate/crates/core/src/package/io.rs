use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::Deserialize;

use super::{
    validate_package, BBox, ImageRef, KeyframeBundle, SkillDescriptor, SkillPackage, StateCard, ValidationReport,
    ViewType,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VIEWS_DIR: &str = "views";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{}: missing manifest", .path.display())]
    MissingManifest { path: PathBuf },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: schema mismatch: {source}", .path.display())]
    Schema { path: PathBuf, source: serde_json::Error },
    #[error("{}: {message}: unknown view type `{value}`", .path.display())]
    UnknownViewType { path: PathBuf, message: String, value: String },
    #[error("{}: card/bundle misalignment: {cards} cards, {bundles} bundles", .path.display())]
    Misaligned { path: PathBuf, cards: usize, bundles: usize },
    #[error("{}: invalid package:\n{report}", .path.display())]
    Invalid { path: PathBuf, report: ValidationReport },
}

/// `<state_id>__<view>.png`
pub fn view_file_name(state_id: &str, view: ViewType) -> String {
    format!("{state_id}__{}.png", view.as_str())
}

/// Write `image` as the canonical view file under `root/views/` and return its reference.
pub fn write_view_image(root: &Path, state_id: &str, view: ViewType, image: &RgbImage) -> Result<ImageRef, LoadError> {
    let dir = root.join(VIEWS_DIR);
    fs::create_dir_all(&dir).map_err(|source| LoadError::Io { path: dir.clone(), source })?;
    let rel = format!("{VIEWS_DIR}/{}", view_file_name(state_id, view));
    let path = root.join(&rel);
    image.save_with_format(&path, image::ImageFormat::Png).map_err(|e| LoadError::Io {
        path: path.clone(),
        source: std::io::Error::other(e),
    })?;
    Ok(ImageRef { path: rel, width: image.width(), height: image.height() })
}

/// Write `manifest.json` for a package whose view images already live under `root`.
///
/// The package is validated against `root` first; nothing is written when it fails.
pub fn save_package(pkg: &SkillPackage, root: &Path) -> Result<(), LoadError> {
    let report = validate_package(pkg, root);
    if !report.is_valid() {
        return Err(LoadError::Invalid { path: root.to_path_buf(), report });
    }
    let mut text = serde_json::to_string_pretty(pkg)
        .map_err(|source| LoadError::Schema { path: root.join(MANIFEST_FILE), source })?;
    text.push('\n');
    fs::create_dir_all(root).map_err(|source| LoadError::Io { path: root.to_path_buf(), source })?;
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|source| LoadError::Io { path, source })
}

// Loose mirror of the manifest so unknown view strings and misalignment get
// their own error instead of a generic serde message.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    version: String,
    descriptor: SkillDescriptor,
    procedure: String,
    state_cards: Vec<RawCard>,
    keyframes: Vec<RawBundle>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCard {
    state_id: String,
    when_to_use: String,
    #[serde(default)]
    when_not_to_use: String,
    #[serde(default)]
    visible_cues: Vec<String>,
    verification_cue: String,
    available_views: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBundle {
    state_id: String,
    views: BTreeMap<String, ImageRef>,
    #[serde(default)]
    focus_bbox: Option<BBox>,
}

/// Read and validate the package stored in `root`.
pub fn load_package(root: &Path) -> Result<SkillPackage, LoadError> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(LoadError::MissingManifest { path });
    }
    let text = fs::read_to_string(&path).map_err(|source| LoadError::Io { path: path.clone(), source })?;
    let raw: RawManifest =
        serde_json::from_str(&text).map_err(|source| LoadError::Schema { path: path.clone(), source })?;

    if raw.state_cards.len() != raw.keyframes.len() {
        return Err(LoadError::Misaligned { path, cards: raw.state_cards.len(), bundles: raw.keyframes.len() });
    }

    let parse_view = |s: &str, ctx: String| -> Result<ViewType, LoadError> {
        s.parse().map_err(|_| LoadError::UnknownViewType { path: path.clone(), message: ctx, value: s.to_string() })
    };

    let mut state_cards = Vec::with_capacity(raw.state_cards.len());
    for c in raw.state_cards {
        let mut available_views = BTreeSet::new();
        for v in &c.available_views {
            available_views.insert(parse_view(v, format!("card `{}`", c.state_id))?);
        }
        state_cards.push(StateCard {
            state_id: c.state_id,
            when_to_use: c.when_to_use,
            when_not_to_use: c.when_not_to_use,
            visible_cues: c.visible_cues,
            verification_cue: c.verification_cue,
            available_views,
        });
    }
    let mut keyframes = Vec::with_capacity(raw.keyframes.len());
    for b in raw.keyframes {
        let mut views = BTreeMap::new();
        for (k, image) in b.views {
            views.insert(parse_view(&k, format!("bundle `{}`", b.state_id))?, image);
        }
        keyframes.push(KeyframeBundle { state_id: b.state_id, views, focus_bbox: b.focus_bbox });
    }

    let pkg = SkillPackage {
        version: raw.version,
        descriptor: raw.descriptor,
        procedure: raw.procedure,
        state_cards,
        keyframes,
    };
    let report = validate_package(&pkg, root);
    if !report.is_valid() {
        return Err(LoadError::Invalid { path: root.to_path_buf(), report });
    }
    Ok(pkg)
}
