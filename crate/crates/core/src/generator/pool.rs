use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::GenError;

pub const TASK_FILE: &str = "task.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStep {
    /// Frame path relative to the trajectory directory.
    pub observation: String,
    pub action: String,
}

/// One demonstration: instruction, observations and the actions taken on them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub task_id: String,
    pub instruction: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub steps: Vec<TrajectoryStep>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Trajectory {
    /// Text used for phase-0 embeddings: instruction plus metadata values in key order.
    pub fn embedding_text(&self) -> String {
        let mut s = self.instruction.clone();
        for v in self.metadata.values() {
            s.push(' ');
            s.push_str(v);
        }
        s
    }

    pub fn frame_path(&self, step: usize) -> Option<PathBuf> {
        self.steps.get(step).map(|s| self.root.join(&s.observation))
    }

    pub fn frame(&self, step: usize) -> Result<RgbImage, GenError> {
        let path = self
            .frame_path(step)
            .ok_or_else(|| GenError::MissingFrame { task_id: self.task_id.clone(), step })?;
        image::open(&path)
            .map(|i| i.to_rgb8())
            .map_err(|e| GenError::Pool(format!("{}: {e}", path.display())))
    }

    fn check(&self) -> Result<(), GenError> {
        if self.steps.is_empty() {
            return Err(GenError::Pool(format!("trajectory `{}` has no steps", self.task_id)));
        }
        for (i, s) in self.steps.iter().enumerate() {
            let p = self.root.join(&s.observation);
            if !p.is_file() {
                return Err(GenError::Pool(format!(
                    "trajectory `{}` step {i}: observation {} not found",
                    self.task_id,
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// Load every `<dir>/*/task.json`, sorted by task id.
pub fn load_pool(dir: &Path) -> Result<Vec<Trajectory>, GenError> {
    let entries = fs::read_dir(dir).map_err(|e| GenError::Pool(format!("{}: {e}", dir.display())))?;
    let mut pool = Vec::new();
    for entry in entries {
        let root = entry.map_err(|e| GenError::Pool(e.to_string()))?.path();
        let task = root.join(TASK_FILE);
        if !task.is_file() {
            continue;
        }
        let text = fs::read_to_string(&task).map_err(|e| GenError::Pool(format!("{}: {e}", task.display())))?;
        let mut t: Trajectory =
            serde_json::from_str(&text).map_err(|e| GenError::Pool(format!("{}: {e}", task.display())))?;
        t.root = root;
        t.check()?;
        pool.push(t);
    }
    pool.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    if let Some(w) = pool.windows(2).find(|w| w[0].task_id == w[1].task_id) {
        return Err(GenError::Pool(format!("duplicate task id `{}`", w[0].task_id)));
    }
    Ok(pool)
}

/// Write a trajectory directory: `task.json` plus `frames/NNN.png`.
pub fn write_trajectory(
    dir: &Path,
    task_id: &str,
    instruction: &str,
    metadata: BTreeMap<String, String>,
    steps: &[(RgbImage, String)],
) -> Result<Trajectory, GenError> {
    let root = dir.join(task_id);
    let frames = root.join(FRAMES_DIR);
    fs::create_dir_all(&frames).map_err(|e| GenError::Pool(format!("{}: {e}", frames.display())))?;
    let mut out = Vec::new();
    for (i, (img, action)) in steps.iter().enumerate() {
        let rel = format!("{FRAMES_DIR}/{i:03}.png");
        img.save_with_format(root.join(&rel), image::ImageFormat::Png)
            .map_err(|e| GenError::Pool(format!("{rel}: {e}")))?;
        out.push(TrajectoryStep { observation: rel, action: action.clone() });
    }
    let t = Trajectory {
        task_id: task_id.into(),
        instruction: instruction.into(),
        metadata,
        steps: out,
        root: root.clone(),
    };
    let mut text = serde_json::to_string_pretty(&t).expect("trajectory serializes");
    text.push('\n');
    fs::write(root.join(TASK_FILE), text).map_err(|e| GenError::Pool(e.to_string()))?;
    Ok(t)
}
