//! Effective run configuration: compiled-in defaults, overlaid by an
//! optional TOML file, overlaid by command-line flags — later layers win
//! field by field. The same struct serializes back to TOML, and a
//! serialize → parse → serialize round trip is byte-identical, so a saved
//! `config.toml` reproduces its run exactly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use painterly::optimize::PhaseConfig;
use painterly::timeline::TextureMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Target image to reconstruct (PNG, PPM, or PGM).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Optional segment label map (PGM, one label per pixel).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Directory for the final image, frames, timeline, and config dump.
    pub out: PathBuf,
    /// Timeline path; defaults to `<out>/timeline.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeline: Option<PathBuf>,
    /// Emit every k-th frame. Unset: every event at levels 1–2, every
    /// fourth event at finer levels (keeps frame counts bounded).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames_stride: Option<usize>,
    #[serde(flatten)]
    pub run: PhaseConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            input: None,
            labels: None,
            out: PathBuf::from("out"),
            timeline: None,
            frames_stride: None,
            run: PhaseConfig::default(),
        }
    }
}

/// Flag-level overrides; `None` leaves the underlying field alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub timeline: Option<PathBuf>,
    pub seed: Option<u64>,
    pub levels: Option<usize>,
    pub strokes: Option<usize>,
    pub stamps: Option<usize>,
    pub texture: Option<TextureMode>,
    pub frames_stride: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(p) = &o.input {
            self.input = Some(p.clone());
        }
        if let Some(p) = &o.labels {
            self.labels = Some(p.clone());
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.timeline {
            self.timeline = Some(p.clone());
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(l) = o.levels {
            self.run.levels = l;
        }
        if let Some(s) = o.strokes {
            self.run.total_strokes = s;
        }
        if let Some(n) = o.stamps {
            if n < 2 {
                bail!("--stamps: need at least 2 stamps per stroke, got {n}");
            }
            self.run.render.segments = n - 1;
            self.run.smudge.segments = n - 1;
        }
        if let Some(t) = o.texture {
            self.run.texture = t;
        }
        if let Some(k) = o.frames_stride {
            if k < 1 {
                bail!("--frames-stride: must be at least 1, got 0");
            }
            self.frames_stride = Some(k);
        }
        Ok(())
    }

    /// Timeline path with the `<out>/timeline.json` default applied.
    pub fn timeline_path(&self) -> PathBuf {
        self.timeline
            .clone()
            .unwrap_or_else(|| self.out.join("timeline.json"))
    }
}
