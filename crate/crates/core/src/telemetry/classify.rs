use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::protocol::MainDecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Click,
    Keyboard,
    Scroll,
    Drag,
    Wait,
    Done,
    Fail,
    Other,
}

impl ActionMode {
    pub const ALL: [ActionMode; 8] = [
        ActionMode::Click,
        ActionMode::Keyboard,
        ActionMode::Scroll,
        ActionMode::Drag,
        ActionMode::Wait,
        ActionMode::Done,
        ActionMode::Fail,
        ActionMode::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionMode::Click => "click",
            ActionMode::Keyboard => "keyboard",
            ActionMode::Scroll => "scroll",
            ActionMode::Drag => "drag",
            ActionMode::Wait => "wait",
            ActionMode::Done => "done",
            ActionMode::Fail => "fail",
            ActionMode::Other => "other",
        }
    }
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn primitive(name: &str) -> Option<ActionMode> {
    Some(match name {
        "click" | "doubleClick" | "rightClick" | "middleClick" | "tripleClick" | "mouseDown" | "mouseUp" => {
            ActionMode::Click
        }
        "write" | "typewrite" | "press" | "hotkey" | "keyDown" | "keyUp" => ActionMode::Keyboard,
        "scroll" | "hscroll" | "vscroll" => ActionMode::Scroll,
        "dragTo" | "dragRel" | "drag" => ActionMode::Drag,
        _ => return None,
    })
}

fn call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"pyautogui\s*\.\s*(\w+)\s*\(").expect("valid regex"))
}

/// Mode of an action script: the first recognised `pyautogui` primitive wins.
///
/// Bare control tokens map to their own modes; a script that only sleeps is a wait.
pub fn classify_action_mode(script: &str) -> ActionMode {
    match script.trim() {
        "WAIT" => return ActionMode::Wait,
        "DONE" => return ActionMode::Done,
        "FAIL" => return ActionMode::Fail,
        _ => {}
    }
    let code: String = script
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");
    if let Some(mode) = call_re().captures_iter(&code).find_map(|c| primitive(&c[1])) {
        return mode;
    }
    if code.contains("time.sleep(") && !code.contains("pyautogui") {
        return ActionMode::Wait;
    }
    ActionMode::Other
}

/// `None` for skill calls, which are not executed actions.
pub fn decision_mode(decision: &MainDecision) -> Option<ActionMode> {
    match decision {
        MainDecision::ActionScript(s) => Some(classify_action_mode(s)),
        MainDecision::Wait => Some(ActionMode::Wait),
        MainDecision::Done => Some(ActionMode::Done),
        MainDecision::Fail => Some(ActionMode::Fail),
        MainDecision::SkillCall(_) => None,
    }
}
