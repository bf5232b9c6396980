use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::RgbImage;

/// A screenshot: PNG bytes plus resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl Observation {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let mut png = Vec::new();
        img.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png).expect("PNG encoding into memory");
        Observation { png, width: img.width(), height: img.height() }
    }

    pub fn from_png(png: Vec<u8>) -> Result<Self, EnvError> {
        let img = image::load_from_memory_with_format(&png, image::ImageFormat::Png)
            .map_err(|e| EnvError(format!("invalid PNG observation: {e}")))?;
        Ok(Observation { width: img.width(), height: img.height(), png })
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("environment: {0}")]
pub struct EnvError(pub String);

/// The visual environment an episode acts in.
pub trait Environment {
    fn reset(&mut self) -> Result<Observation, EnvError>;
    fn observe(&mut self) -> Result<Observation, EnvError>;
    /// Run one action script and return textual feedback.
    fn execute(&mut self, action: &str) -> Result<String, EnvError>;
    /// True once the task's completion condition holds.
    fn is_terminal(&self) -> bool;
    /// Stable identifier written into trajectory logs.
    fn descriptor(&self) -> String;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        (**self).reset()
    }
    fn observe(&mut self) -> Result<Observation, EnvError> {
        (**self).observe()
    }
    fn execute(&mut self, action: &str) -> Result<String, EnvError> {
        (**self).execute(action)
    }
    fn is_terminal(&self) -> bool {
        (**self).is_terminal()
    }
    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

/// Plays back a fixed screenshot sequence; each executed action advances one frame.
///
/// Stands in for an external benchmark connector.
pub struct RecordedEnvironment {
    name: String,
    frames: Vec<Observation>,
    feedback: Vec<String>,
    cursor: usize,
}

impl RecordedEnvironment {
    pub fn new(name: impl Into<String>, frames: Vec<Observation>, feedback: Vec<String>) -> Result<Self, EnvError> {
        if frames.is_empty() {
            return Err(EnvError("recorded environment needs at least one frame".into()));
        }
        Ok(RecordedEnvironment { name: name.into(), frames, feedback, cursor: 0 })
    }

    /// Load `frames/*.png` (sorted by file name) and optional `feedback.json` (list of strings).
    pub fn from_dir(dir: &Path) -> Result<Self, EnvError> {
        let frames_dir = dir.join("frames");
        let mut paths: Vec<_> = fs::read_dir(&frames_dir)
            .map_err(|e| EnvError(format!("{}: {e}", frames_dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        paths.sort();
        let frames = paths
            .iter()
            .map(|p| fs::read(p).map_err(|e| EnvError(format!("{}: {e}", p.display()))).and_then(Observation::from_png))
            .collect::<Result<Vec<_>, _>>()?;
        let fb_path = dir.join("feedback.json");
        let feedback = if fb_path.is_file() {
            let text = fs::read_to_string(&fb_path).map_err(|e| EnvError(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| EnvError(format!("{}: {e}", fb_path.display())))?
        } else {
            Vec::new()
        };
        Self::new(format!("recorded:{}", dir.display()), frames, feedback)
    }
}

impl Environment for RecordedEnvironment {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        self.cursor = 0;
        Ok(self.frames[0].clone())
    }

    fn observe(&mut self) -> Result<Observation, EnvError> {
        Ok(self.frames[self.cursor].clone())
    }

    fn execute(&mut self, _action: &str) -> Result<String, EnvError> {
        let idx = self.cursor;
        if self.cursor + 1 < self.frames.len() {
            self.cursor += 1;
        }
        Ok(self.feedback.get(idx).cloned().unwrap_or_else(|| format!("recorded step {}", idx + 1)))
    }

    fn is_terminal(&self) -> bool {
        self.cursor + 1 == self.frames.len()
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}
