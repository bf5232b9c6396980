use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use super::draft::{AnchoredCard, DraftPackage};
use super::gates::{GateFailure, GateRecord, GeneratorGates};
use super::pool::Trajectory;
use super::{parse_json_reply, GenError};
use crate::adapters::ModelProvider;
use crate::package::{
    save_package, write_view_image, BBox, ImageRef, KeyframeBundle, SkillPackage, ViewType, FORMAT_VERSION, VIEWS_DIR,
};
use crate::protocol::{PromptBundle, PromptSurface};

const GROUND_SYSTEM: &str = "You locate the visual cue of GUI states in screenshots.
For every listed card, give the pixel box around the control or region its cues describe.
Reply with exactly one fenced JSON block:
```json
{\"boxes\": {\"<state_id>\": {\"x\": 0, \"y\": 0, \"width\": 10, \"height\": 10}}}
```";

/// Fraction of each side kept by the fallback focus box.
const HEURISTIC_FRACTION: f64 = 0.4;

/// Where one stored view came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewProvenance {
    pub state_id: String,
    pub view: ViewType,
    pub task_id: String,
    pub step_index: usize,
}

/// A package whose images are in memory; [`GroundedPackage::write`] stores it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedPackage {
    pub package: SkillPackage,
    pub images: Vec<(String, ViewType, RgbImage)>,
    pub provenance: Vec<ViewProvenance>,
    pub warnings: Vec<String>,
    pub gates_passed: Vec<GateRecord>,
}

impl GroundedPackage {
    pub fn write(&self, dir: &Path) -> Result<(), GenError> {
        for (state_id, view, img) in &self.images {
            write_view_image(dir, state_id, *view, img)?;
        }
        save_package(&self.package, dir)?;
        Ok(())
    }
}

/// Copy the `bbox` region of `image`.
pub fn crop_focus_region(image: &RgbImage, bbox: BBox) -> Result<RgbImage, GenError> {
    if !bbox.fits_within(image.width(), image.height()) {
        return Err(GenError::BBoxOutOfBounds {
            x: bbox.x,
            y: bbox.y,
            width: bbox.width,
            height: bbox.height,
            image_width: image.width(),
            image_height: image.height(),
        });
    }
    Ok(imageops::crop_imm(image, bbox.x, bbox.y, bbox.width, bbox.height).to_image())
}

/// The centred box covering 40% of each side.
pub fn heuristic_focus_bbox(width: u32, height: u32) -> BBox {
    let side = |n: u32| ((n as f64 * HEURISTIC_FRACTION).round() as u32).clamp(1, n.max(1));
    let (w, h) = (side(width), side(height));
    BBox::new((width - w) / 2, (height - h) / 2, w, h)
}

fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("PNG encoding into memory");
    buf.into_inner()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxReply {
    boxes: BTreeMap<String, BBox>,
}

fn frame_gate(task: &Trajectory, step: usize, card: &AnchoredCard, view: ViewType) -> Result<RgbImage, GenError> {
    task.frame(step).map_err(|e| match e {
        GenError::MissingFrame { task_id, step } => GenError::Gate(GateFailure::new(
            "frames",
            format!("card `{}` needs a {view} view but `{task_id}` has no step {step}", card.state_id),
        )),
        other => other,
    })
}

/// Propose focus boxes in one call; anything unusable falls back to the heuristic box.
fn propose_boxes(
    name: &str,
    cards: &[(&AnchoredCard, &RgbImage)],
    model: &dyn ModelProvider,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<String, BBox>, GenError> {
    let mut user = format!("Skill: {name}\nCards (screenshot label `frame/<state_id>`):\n");
    let mut bundle = PromptBundle::new(PromptSurface::GeneratorGround, GROUND_SYSTEM.into(), String::new());
    for (card, frame) in cards {
        user.push_str(&format!(
            "- {} ({}x{}): {}; cues: {}\n",
            card.state_id,
            frame.width(),
            frame.height(),
            card.when_to_use,
            card.visible_cues.join("; ")
        ));
        bundle.push_image(format!("frame/{}", card.state_id), encode_png(frame));
    }
    bundle.user_text = user;
    let raw = model
        .complete(&bundle)
        .map_err(|source| GenError::Provider { phase: "ground_and_audit", source })?;
    let proposed = match parse_json_reply::<BoxReply>(&raw) {
        Ok(r) => r.boxes,
        Err(e) => {
            warnings.push(format!("{name}: focus box reply unusable ({e}); using centred boxes"));
            BTreeMap::new()
        }
    };
    let mut out = BTreeMap::new();
    for (card, frame) in cards {
        let (w, h) = (frame.width(), frame.height());
        let b = match proposed.get(&card.state_id) {
            Some(b) if b.fits_within(w, h) => *b,
            Some(b) => {
                warnings.push(format!(
                    "{name}/{}: proposed box {},{} {}x{} does not fit {w}x{h}; using centred box",
                    card.state_id, b.x, b.y, b.width, b.height
                ));
                heuristic_focus_bbox(w, h)
            }
            None => {
                warnings.push(format!("{name}/{}: no focus box proposed; using centred box", card.state_id));
                heuristic_focus_bbox(w, h)
            }
        };
        out.insert(card.state_id.clone(), b);
    }
    Ok(out)
}

/// Phase 4: pull anchored frames, crop focus regions and check every gate on the result.
pub fn ground_and_audit(
    draft: &DraftPackage,
    pool: &[Trajectory],
    model: &dyn ModelProvider,
    gates: &GeneratorGates,
) -> Result<GroundedPackage, GenError> {
    let name = draft.descriptor.skill_name.as_str();
    let gate = |r: Result<(), GateFailure>| r.map_err(GenError::Gate);
    let mut passed = Vec::new();

    gate(gates.card_band(name, draft.cards.len()))?;
    passed.push(GateRecord::pass("card_band", name));
    for card in &draft.cards {
        let views = card.planned_views();
        gate(gates.view_policy(&card.state_id, card.purpose, &views))?;
        gate(gates.view_band(&card.state_id, views.len()))?;
    }
    passed.push(GateRecord::pass("view_policy", name));
    passed.push(GateRecord::pass("view_band", name));

    let total_views: usize = draft.cards.iter().map(|c| c.planned_views().len()).sum();
    let source_frames: usize = pool
        .iter()
        .filter(|t| draft.descriptor.source_task_ids.contains(&t.task_id))
        .map(|t| t.steps.len())
        .sum();
    gate(gates.views_cap(name, total_views, source_frames))?;
    passed.push(GateRecord::pass("views_cap", name));

    let task_of = |card: &AnchoredCard| {
        pool.iter().find(|t| t.task_id == card.anchor.task_id).ok_or_else(|| {
            GenError::Gate(GateFailure::new(
                "anchors",
                format!("card `{}` is anchored to unknown task `{}`", card.state_id, card.anchor.task_id),
            ))
        })
    };

    let mut full = Vec::new();
    for card in &draft.cards {
        full.push(frame_gate(task_of(card)?, card.anchor.step_index, card, ViewType::FullFrame)?);
    }

    let mut warnings = Vec::new();
    let wants_focus: Vec<(&AnchoredCard, &RgbImage)> = draft
        .cards
        .iter()
        .zip(&full)
        .filter(|(c, _)| c.views.contains(&ViewType::FocusCrop))
        .collect();
    let boxes = if wants_focus.is_empty() {
        BTreeMap::new()
    } else {
        propose_boxes(name, &wants_focus, model, &mut warnings)?
    };

    let mut images = Vec::new();
    let mut provenance = Vec::new();
    let mut keyframes = Vec::new();
    for (card, frame) in draft.cards.iter().zip(full) {
        let task = task_of(card)?;
        let t = card.anchor.step_index;
        let mut views = BTreeMap::new();
        let mut focus_bbox = None;
        for view in card.planned_views() {
            let (img, step) = match view {
                ViewType::FullFrame => (frame.clone(), t),
                ViewType::FocusCrop => {
                    let b = boxes[&card.state_id];
                    focus_bbox = Some(b);
                    (crop_focus_region(&frame, b)?, t)
                }
                ViewType::Before if t == 0 => {
                    return Err(GenError::Gate(GateFailure::new(
                        "frames",
                        format!("card `{}` needs a before view but is anchored to the first step", card.state_id),
                    )))
                }
                ViewType::Before => (frame_gate(task, t - 1, card, view)?, t - 1),
                ViewType::After => (frame_gate(task, t + 1, card, view)?, t + 1),
            };
            let file = crate::package::view_file_name(&card.state_id, view);
            views.insert(view, ImageRef { path: format!("{VIEWS_DIR}/{file}"), width: img.width(), height: img.height() });
            provenance.push(ViewProvenance {
                state_id: card.state_id.clone(),
                view,
                task_id: task.task_id.clone(),
                step_index: step,
            });
            images.push((card.state_id.clone(), view, img));
        }
        keyframes.push(KeyframeBundle { state_id: card.state_id.clone(), views, focus_bbox });
    }
    let package = SkillPackage {
        version: FORMAT_VERSION.into(),
        descriptor: draft.descriptor.clone(),
        procedure: draft.procedure.clone(),
        state_cards: draft.cards.iter().map(AnchoredCard::state_card).collect(),
        keyframes,
    };
    Ok(GroundedPackage { package, images, provenance, warnings, gates_passed: passed })
}
