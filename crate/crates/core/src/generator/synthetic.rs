//! A small two-family trajectory pool with a matching rule-based model, for demos and tests.
//!
//! Ten panel-board demonstrations and ten notes-editor demonstrations use disjoint
//! vocabularies, so two clusters separate them cleanly.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::pool::{write_trajectory, Trajectory};
use super::{GenError, GeneratorConfig};
use crate::adapters::toy::{click_script, render_board, PanelState, LABELS};
use crate::adapters::Rule;
use crate::package::BBox;
use crate::protocol::PromptSurface;

pub const PANEL_TASKS: usize = 10;
pub const MEMO_TASKS: usize = 10;
const MEMO_WORDS: [&str; 10] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet"];

const EDITOR_BG: Rgb<u8> = Rgb([214, 220, 228]);
const FIELD: BBox = BBox { x: 20, y: 60, width: 280, height: 40 };
const SAVED_MARK: BBox = BBox { x: 280, y: 12, width: 24, height: 24 };

pub fn panel_task_id(i: usize) -> String {
    format!("panel-{i:02}")
}

pub fn memo_task_id(i: usize) -> String {
    format!("memo-{i:02}")
}

fn fill(img: &mut RgbImage, r: BBox, c: Rgb<u8>) {
    for y in r.y..r.y + r.height {
        for x in r.x..r.x + r.width {
            img.put_pixel(x, y, c);
        }
    }
}

/// Notes editor frame: 0 idle, 1 field focused, 2 text typed, 3 saved.
pub fn render_editor(stage: u8, word_len: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(320, 200, EDITOR_BG);
    let border = if stage >= 1 { Rgb([40, 90, 220]) } else { Rgb([150, 150, 150]) };
    fill(&mut img, FIELD, border);
    fill(&mut img, BBox::new(FIELD.x + 2, FIELD.y + 2, FIELD.width - 4, FIELD.height - 4), Rgb([255, 255, 255]));
    if stage >= 2 {
        let w = (word_len as u32 * 12).min(FIELD.width - 20);
        fill(&mut img, BBox::new(FIELD.x + 10, FIELD.y + 12, w, 16), Rgb([30, 30, 30]));
    }
    if stage >= 3 {
        fill(&mut img, SAVED_MARK, Rgb([40, 170, 70]));
    }
    img
}

fn panel_frames(idx: usize) -> Vec<(RgbImage, String)> {
    let mut states = [PanelState::Closed; 6];
    let mut out = Vec::new();
    for _ in 0..2 {
        out.push((render_board(&states), click_script(idx)));
        states[idx] = states[idx].next();
    }
    out.push((render_board(&states), "DONE".into()));
    out
}

fn memo_frames(word: &str) -> Vec<(RgbImage, String)> {
    let (cx, cy) = (FIELD.x + FIELD.width / 2, FIELD.y + FIELD.height / 2);
    vec![
        (render_editor(0, word.len()), format!("pyautogui.click({cx}, {cy})")),
        (render_editor(1, word.len()), format!("pyautogui.write('{word}')")),
        (render_editor(2, word.len()), "pyautogui.hotkey('ctrl', 's')".into()),
        (render_editor(3, word.len()), "DONE".into()),
    ]
}

/// Write the 20-trajectory pool under `dir` and return it in task-id order.
pub fn write_synthetic_pool(dir: &Path) -> Result<Vec<Trajectory>, GenError> {
    let mut pool = Vec::new();
    for i in 0..PANEL_TASKS {
        let idx = i % LABELS.len();
        let meta = BTreeMap::from([("app".to_string(), "control board".to_string())]);
        let instruction = format!("Toggle panel {} on the control board", LABELS[idx]);
        pool.push(write_trajectory(dir, &panel_task_id(i), &instruction, meta, &panel_frames(idx))?);
    }
    for (i, word) in MEMO_WORDS.iter().enumerate().take(MEMO_TASKS) {
        let meta = BTreeMap::from([("app".to_string(), "notes editor".to_string())]);
        let instruction = format!("Type memo {word} into the notes editor and save");
        pool.push(write_trajectory(dir, &memo_task_id(i), &instruction, meta, &memo_frames(word))?);
    }
    pool.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(pool)
}

pub fn synthetic_config() -> GeneratorConfig {
    GeneratorConfig { domain_tag: "synthetic".into(), clusters: 2, seed: 7, ..Default::default() }
}

fn fenced(v: serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(&v).expect("json value"))
}

fn ids(f: fn(usize) -> String, range: std::ops::Range<usize>) -> Vec<String> {
    range.map(f).collect()
}

/// Rules answering every generator call on the synthetic pool.
///
/// The panel cluster proposes the same skill twice (merged in phase 2); the editor ground
/// reply proposes an out-of-frame box, so that card uses the centred fallback.
pub fn synthetic_rules() -> Vec<Rule> {
    use serde_json::json;
    let panel_a = crate::adapters::toy::panel_rect(0);
    vec![
        Rule {
            surface: Some(PromptSurface::GeneratorPlan),
            contains: vec!["control board".into()],
            reply: fenced(json!({"skills": [
                {"proposed_name": "toggle_panel", "workflow_boundary": "from a closed panel to a toggled panel",
                 "completion_condition": "the panel shows the toggled colour", "covered_task_ids": ids(panel_task_id, 0..5)},
                {"proposed_name": "toggle_panel", "workflow_boundary": "click a panel twice until it is toggled",
                 "completion_condition": "the panel shows the toggled colour", "covered_task_ids": ids(panel_task_id, 5..PANEL_TASKS)}
            ]})),
        },
        Rule {
            surface: Some(PromptSurface::GeneratorPlan),
            contains: vec!["notes editor".into()],
            reply: fenced(json!({"skills": [
                {"proposed_name": "save_memo", "workflow_boundary": "from an empty editor field to a saved memo",
                 "completion_condition": "the green saved mark is shown", "covered_task_ids": ids(memo_task_id, 0..MEMO_TASKS)}
            ]})),
        },
        Rule {
            surface: Some(PromptSurface::GeneratorDraft),
            contains: vec!["Skill: toggle_panel".into()],
            reply: fenced(json!({
                "short_description": "Toggle one panel on the control board by clicking it twice.",
                "procedure": "1. Find the panel by its label.\n2. Click it once to open it.\n3. Click it again to toggle it.\n4. Confirm the toggled colour.",
                "cards": [
                    {"state_id": "panel_closed", "purpose": "recognition",
                     "when_to_use": "the target panel is grey and closed",
                     "when_not_to_use": "the panel is already open or toggled",
                     "visible_cues": ["grey panel body", "label in the top-left corner"],
                     "verification_cue": "the panel turns green after the first click",
                     "views": ["full_frame", "focus_crop"], "anchor": {"task_id": "panel-00", "step_index": 0}},
                    {"state_id": "panel_toggled", "purpose": "transition",
                     "when_to_use": "the panel is open and needs the second click",
                     "when_not_to_use": "the panel is still closed",
                     "visible_cues": ["green panel body"],
                     "verification_cue": "the panel turns orange",
                     "views": ["before", "after"], "anchor": {"task_id": "panel-00", "step_index": 1}}
                ]
            })),
        },
        Rule {
            surface: Some(PromptSurface::GeneratorDraft),
            contains: vec!["Skill: save_memo".into()],
            reply: fenced(json!({
                "short_description": "Type a memo into the notes editor field and save it.",
                "procedure": "1. Click the text field.\n2. Type the memo.\n3. Press ctrl+s.\n4. Check the saved mark.",
                "cards": [
                    {"state_id": "editor_field", "purpose": "recognition",
                     "when_to_use": "the editor field is not focused yet",
                     "when_not_to_use": "the field already has a blue border",
                     "visible_cues": ["grey field border"],
                     "verification_cue": "the border turns blue",
                     "views": ["focus_crop"], "anchor": {"task_id": "memo-00", "step_index": 0}},
                    {"state_id": "memo_typed", "purpose": "verification",
                     "when_to_use": "the field is focused and the memo must be typed",
                     "when_not_to_use": "text is already present",
                     "visible_cues": ["blue field border", "empty field"],
                     "verification_cue": "dark text appears in the field",
                     "views": ["after"], "anchor": {"task_id": "memo-00", "step_index": 1}},
                    {"state_id": "memo_saved", "purpose": "recognition",
                     "when_to_use": "checking whether the memo was saved",
                     "when_not_to_use": "the memo has not been typed",
                     "visible_cues": ["green mark in the top-right corner"],
                     "verification_cue": "the green mark is visible",
                     "views": [], "anchor": {"task_id": "memo-00", "step_index": 3}}
                ]
            })),
        },
        Rule {
            surface: Some(PromptSurface::GeneratorGround),
            contains: vec!["Skill: toggle_panel".into()],
            reply: fenced(json!({"boxes": {"panel_closed": panel_a}})),
        },
        Rule {
            surface: Some(PromptSurface::GeneratorGround),
            contains: vec!["Skill: save_memo".into()],
            reply: fenced(json!({"boxes": {"editor_field": {"x": 300, "y": 180, "width": 80, "height": 40}}})),
        },
    ]
}
