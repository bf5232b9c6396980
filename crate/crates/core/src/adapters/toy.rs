//! A desk-scale panel board: six labelled panels that cycle closed → open → toggled on click.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use image::{imageops, Rgb, RgbImage};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, Observation};
use crate::library::{save_library_manifest, LibraryError, SkillLibrary};
use crate::package::{
    save_package, write_view_image, BBox, KeyframeBundle, LoadError, SkillDescriptor, SkillPackage, StateCard,
    ViewType, FORMAT_VERSION,
};

pub const WIDTH: u32 = 320;
pub const HEIGHT: u32 = 200;
pub const LABELS: [char; 6] = ['A', 'B', 'C', 'D', 'E', 'F'];
const PANEL_W: u32 = 80;
const PANEL_H: u32 = 70;
const BACKGROUND: Rgb<u8> = Rgb([236, 236, 236]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelState {
    Closed,
    Open,
    Toggled,
}

impl PanelState {
    pub fn next(self) -> Self {
        match self {
            PanelState::Closed => PanelState::Open,
            PanelState::Open => PanelState::Toggled,
            PanelState::Toggled => PanelState::Closed,
        }
    }

    fn fill(self) -> Rgb<u8> {
        match self {
            PanelState::Closed => Rgb([90, 90, 90]),
            PanelState::Open => Rgb([60, 170, 80]),
            PanelState::Toggled => Rgb([230, 140, 40]),
        }
    }
}

impl fmt::Display for PanelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PanelState::Closed => "closed",
            PanelState::Open => "open",
            PanelState::Toggled => "toggled",
        })
    }
}

/// Pixel rectangle of panel `idx` (row-major, 3 columns).
pub fn panel_rect(idx: usize) -> BBox {
    let (col, row) = ((idx % 3) as u32, (idx / 3) as u32);
    BBox::new(20 + col * 100, 20 + row * 90, PANEL_W, PANEL_H)
}

pub fn panel_center(idx: usize) -> (u32, u32) {
    let r = panel_rect(idx);
    (r.x + r.width / 2, r.y + r.height / 2)
}

pub fn panel_at(x: u32, y: u32) -> Option<usize> {
    (0..LABELS.len()).find(|&i| {
        let r = panel_rect(i);
        x >= r.x && x < r.x + r.width && y >= r.y && y < r.y + r.height
    })
}

pub fn panel_index(label: char) -> Option<usize> {
    LABELS.iter().position(|&l| l == label)
}

/// Pure rendering: equal boards give byte-identical images.
pub fn render_board(states: &[PanelState; 6]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    for (i, state) in states.iter().enumerate() {
        let r = panel_rect(i);
        for y in r.y..r.y + r.height {
            for x in r.x..r.x + r.width {
                img.put_pixel(x, y, state.fill());
            }
        }
        // label tab: a distinct tint per panel so crops stay recognisable
        let tint = Rgb([40 * i as u8, 255 - 35 * i as u8, 120]);
        for y in r.y + 4..r.y + 16 {
            for x in r.x + 4..r.x + 16 {
                img.put_pixel(x, y, tint);
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTask {
    pub name: String,
    pub instruction: String,
    pub initial: [PanelState; 6],
    pub target: [PanelState; 6],
}

impl ToyTask {
    /// Panel A toggled (two clicks) and panel C open (one click).
    pub fn panels() -> Self {
        use PanelState::*;
        ToyTask {
            name: "panels".into(),
            instruction: "Toggle panel A and open panel C on the panel board.".into(),
            initial: [Closed; 6],
            target: [Toggled, Closed, Open, Closed, Closed, Closed],
        }
    }

    /// Open panel E only.
    pub fn single() -> Self {
        use PanelState::*;
        ToyTask {
            name: "single".into(),
            instruction: "Open panel E on the panel board.".into(),
            initial: [Closed; 6],
            target: [Closed, Closed, Closed, Closed, Open, Closed],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "panels" => Some(Self::panels()),
            "single" => Some(Self::single()),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 2] = ["panels", "single"];
}

fn call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"pyautogui\.(\w+)\(([^)]*)\)").expect("valid regex"))
}

fn parse_xy(args: &str) -> Option<(u32, u32)> {
    let mut it = args.split(',').map(|a| a.trim().split('=').next_back().unwrap_or("").trim());
    let x = it.next()?.parse::<f64>().ok()?;
    let y = it.next()?.parse::<f64>().ok()?;
    (x >= 0.0 && y >= 0.0).then_some((x as u32, y as u32))
}

pub struct ToyPanelEnvironment {
    task: ToyTask,
    states: [PanelState; 6],
}

impl ToyPanelEnvironment {
    pub fn new(task: ToyTask) -> Self {
        ToyPanelEnvironment { states: task.initial, task }
    }

    /// Rebuild from a `toy:<task>` descriptor.
    pub fn from_descriptor(desc: &str) -> Result<Self, EnvError> {
        let name = desc.strip_prefix("toy:").ok_or_else(|| EnvError(format!("not a toy descriptor: {desc}")))?;
        ToyTask::by_name(name)
            .map(Self::new)
            .ok_or_else(|| EnvError(format!("unknown toy task `{name}` (known: {})", ToyTask::NAMES.join(", "))))
    }

    pub fn task(&self) -> &ToyTask {
        &self.task
    }

    pub fn states(&self) -> &[PanelState; 6] {
        &self.states
    }

    fn click(&mut self, x: u32, y: u32) -> String {
        match panel_at(x, y) {
            Some(i) => {
                self.states[i] = self.states[i].next();
                format!("clicked ({x}, {y}): panel {} is now {}", LABELS[i], self.states[i])
            }
            None => format!("clicked ({x}, {y}): nothing there"),
        }
    }
}

impl Environment for ToyPanelEnvironment {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        self.states = self.task.initial;
        self.observe()
    }

    fn observe(&mut self) -> Result<Observation, EnvError> {
        Ok(Observation::from_rgb(&render_board(&self.states)))
    }

    fn execute(&mut self, action: &str) -> Result<String, EnvError> {
        let mut feedback = Vec::new();
        for caps in call_re().captures_iter(action) {
            let (func, args) = (&caps[1], &caps[2]);
            match func {
                "click" => match parse_xy(args) {
                    Some((x, y)) => feedback.push(self.click(x, y)),
                    None => feedback.push(format!("click({args}): could not read coordinates")),
                },
                other => feedback.push(format!("{other}: no effect on the panel board")),
            }
        }
        if feedback.is_empty() {
            feedback.push("no GUI action recognized".into());
        }
        Ok(feedback.join("; "))
    }

    fn is_terminal(&self) -> bool {
        self.states == self.task.target
    }

    fn descriptor(&self) -> String {
        format!("toy:{}", self.task.name)
    }
}

pub fn click_script(idx: usize) -> String {
    let (x, y) = panel_center(idx);
    format!("# click panel {}\npyautogui.click({x}, {y})", LABELS[idx])
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Package(#[from] LoadError),
    #[error(transparent)]
    Library(#[from] LibraryError),
}

fn crop(img: &RgbImage, b: BBox) -> RgbImage {
    imageops::crop_imm(img, b.x, b.y, b.width, b.height).to_image()
}

fn descriptor(name: &str, desc: &str) -> SkillDescriptor {
    SkillDescriptor {
        skill_name: name.into(),
        short_description: desc.into(),
        domain_tag: "toy".into(),
        source_task_ids: vec!["toy-demo".into()],
    }
}

fn toggle_panels_package(root: &Path) -> Result<SkillPackage, LoadError> {
    use PanelState::*;
    let closed = render_board(&[Closed; 6]);
    let a_open = render_board(&[Open, Closed, Closed, Closed, Closed, Closed]);
    let a_toggled = render_board(&[Toggled, Closed, Closed, Closed, Closed, Closed]);
    let rect = panel_rect(0);

    let mut locate = KeyframeBundle { state_id: "panel_closed".into(), views: Default::default(), focus_bbox: Some(rect) };
    locate.views.insert(ViewType::FullFrame, write_view_image(root, "panel_closed", ViewType::FullFrame, &closed)?);
    locate.views.insert(ViewType::FocusCrop, write_view_image(root, "panel_closed", ViewType::FocusCrop, &crop(&closed, rect))?);

    let mut toggle = KeyframeBundle { state_id: "panel_toggled".into(), views: Default::default(), focus_bbox: None };
    toggle.views.insert(ViewType::FullFrame, write_view_image(root, "panel_toggled", ViewType::FullFrame, &a_toggled)?);
    toggle.views.insert(ViewType::Before, write_view_image(root, "panel_toggled", ViewType::Before, &a_open)?);
    toggle.views.insert(ViewType::After, write_view_image(root, "panel_toggled", ViewType::After, &a_toggled)?);

    let pkg = SkillPackage {
        version: FORMAT_VERSION.into(),
        descriptor: descriptor("toggle_panels", "open or toggle panels on the panel board"),
        procedure: "1. Find each panel named in the task by its letter.\n\
                    2. One click opens a closed panel (green); a second click toggles it (orange); a third closes it again.\n\
                    3. Click exactly as many times as the target state needs, then check every panel colour before DONE."
            .into(),
        state_cards: vec![
            StateCard {
                state_id: "panel_closed".into(),
                when_to_use: "the panel you need is still dark grey".into(),
                when_not_to_use: "the panel is already green or orange".into(),
                visible_cues: vec!["dark grey rectangle".into(), "small tinted label tab in the top-left corner".into()],
                verification_cue: "after one click the panel turns green".into(),
                available_views: [ViewType::FullFrame, ViewType::FocusCrop].into_iter().collect(),
            },
            StateCard {
                state_id: "panel_toggled".into(),
                when_to_use: "the task asks for a toggled panel".into(),
                when_not_to_use: "the task only asks for an open panel".into(),
                visible_cues: vec!["orange rectangle".into()],
                verification_cue: "a toggled panel is orange, not green".into(),
                available_views: [ViewType::FullFrame, ViewType::Before, ViewType::After].into_iter().collect(),
            },
        ],
        keyframes: vec![locate, toggle],
    };
    save_package(&pkg, root)?;
    Ok(pkg)
}

fn reset_board_package(root: &Path) -> Result<SkillPackage, LoadError> {
    let board = render_board(&[PanelState::Toggled; 6]);
    let mut bundle = KeyframeBundle { state_id: "all_toggled".into(), views: Default::default(), focus_bbox: None };
    bundle.views.insert(ViewType::FullFrame, write_view_image(root, "all_toggled", ViewType::FullFrame, &board)?);
    let pkg = SkillPackage {
        version: FORMAT_VERSION.into(),
        descriptor: descriptor("reset_board", "close every panel and restore the empty layout"),
        procedure: "1. Click each orange panel once to close it.\n2. Click each green panel twice.".into(),
        state_cards: vec![StateCard {
            state_id: "all_toggled".into(),
            when_to_use: "several panels are orange".into(),
            when_not_to_use: "all panels are already grey".into(),
            visible_cues: vec!["orange rectangles".into()],
            verification_cue: "every panel is dark grey".into(),
            available_views: BTreeSet::from([ViewType::FullFrame]),
        }],
        keyframes: vec![bundle],
    };
    save_package(&pkg, root)?;
    Ok(pkg)
}

/// Write a two-skill demo library for the toy board under `root` and return it loaded.
pub fn build_demo_library(root: &Path) -> Result<SkillLibrary, DemoError> {
    let mut lib = SkillLibrary::new("toy");
    for build in [toggle_panels_package, reset_board_package] as [fn(&Path) -> Result<SkillPackage, LoadError>; 2] {
        // the skill directory is named after the skill, so write to a scratch name first
        let tmp = root.join(".staging");
        let _ = std::fs::remove_dir_all(&tmp);
        let pkg = build(&tmp)?;
        let dir = root.join(pkg.name());
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::rename(&tmp, &dir).map_err(|source| LoadError::Io { path: dir.clone(), source })?;
        lib.add_package_at(pkg, dir)?;
    }
    save_library_manifest(&lib, root)?;
    Ok(lib)
}

/// Scripted replies for the `panels` task.
pub mod scenarios {
    use super::{click_script, panel_rect, HEIGHT, WIDTH};
    use crate::adapters::ScriptEntry;
    use crate::protocol::PromptSurface;

    fn block(body: &str) -> String {
        format!("```python\n{body}\n```")
    }

    fn miss() -> String {
        block(&format!("# guess where the panel is\npyautogui.click({}, {})", WIDTH - 5, HEIGHT - 5))
    }

    fn done() -> String {
        "```\nDONE\n```".into()
    }

    pub const STAGE1_REPLY: &str = r#"```
LOAD_STATE_VIEWS({"visual_reference_needed": true, "why_not_text_only": "panel states differ only by colour", "requests": [{"state_id": "panel_closed", "views": ["focus_crop"], "evidence_goal": "locate_control", "reason": "what a closed panel and its label tab look like"}, {"state_id": "panel_toggled", "views": ["before", "after"], "evidence_goal": "compare_transition", "reason": "tell open from toggled"}]})
```"#;

    pub const STAGE2_REPLY: &str = r#"```json
{
  "skill_applicability": "effective",
  "subgoal": "toggle panel A, then open panel C",
  "plan": "click the centre of panel A twice (grey, green, orange), then click panel C once",
  "do_not_do": "do not click the gaps between panels",
  "fallback_if_no_progress": "re-read the panel letters from the screenshot",
  "expected_state": "A orange, C green, the rest grey",
  "completion_scope": "needs_verification"
}
```"#;

    /// Without guidance the agent wastes a click before each panel: 7 steps.
    pub fn no_skill() -> Vec<ScriptEntry> {
        [miss(), block(&click_script(0)), miss(), block(&click_script(0)), miss(), block(&click_script(2)), done()]
            .into_iter()
            .map(|r| ScriptEntry::on(PromptSurface::Main, r))
            .collect()
    }

    /// Consult `toggle_panels` at step 1, then act directly: 4 steps.
    pub fn mmskills() -> Vec<ScriptEntry> {
        vec![
            ScriptEntry::on(PromptSurface::Main, "```\nLOAD_SKILL(\"toggle_panels\")\n```"),
            ScriptEntry::on(PromptSurface::Stage1, STAGE1_REPLY),
            ScriptEntry::on(PromptSurface::Stage2, STAGE2_REPLY),
            ScriptEntry::on(PromptSurface::Main, block(&click_script(0))),
            ScriptEntry::on(PromptSurface::Main, block(&click_script(0))),
            ScriptEntry::on(PromptSurface::Main, block(&click_script(2))),
            ScriptEntry::on(PromptSurface::Main, done()),
        ]
    }

    /// The text-only variant skips stage 1.
    pub fn text_only() -> Vec<ScriptEntry> {
        let mut s = mmskills();
        s.remove(1);
        s
    }

    /// `n` clicks on empty background; never finishes.
    pub fn endless(n: usize) -> Vec<ScriptEntry> {
        (0..n)
            .map(|i| {
                let r = panel_rect(5);
                let x = 5 + (i as u32 % 10);
                ScriptEntry::on(PromptSurface::Main, block(&format!("pyautogui.click({x}, {})", r.y + r.height + 5)))
            })
            .collect()
    }
}
