//! Frame emission while replaying a timeline.
//!
//! Frames land in `<out>/frames/frame_NNNNN.png`, numbered by event index so
//! a sparse selection still sorts in playback order. With no explicit stride
//! the density adapts to the level: the early coarse levels (<= 2) keep every
//! committed stroke, finer levels keep every 4th within that level, and the
//! last event is always kept so the sequence ends on the finished canvas.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use painterly::image::{save_image, Canvas};
use painterly::timeline::Timeline;

/// Decides which event indices produce a frame.
pub struct FramePlan {
    stride: Option<usize>,
    seen_per_level: HashMap<usize, usize>,
    total: usize,
}

impl FramePlan {
    pub fn new(stride: Option<usize>, total_events: usize) -> Self {
        Self {
            stride,
            seen_per_level: HashMap::new(),
            total: total_events,
        }
    }

    /// Call once per event, in order.
    pub fn emit(&mut self, index: usize, level: usize) -> bool {
        let last = index + 1 == self.total;
        match self.stride {
            Some(k) => index % k == 0 || last,
            None => {
                let seen = self.seen_per_level.entry(level).or_insert(0);
                let nth = *seen;
                *seen += 1;
                level <= 2 || nth % 4 == 0 || last
            }
        }
    }
}

fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.png"))
}

/// Replay `timeline` onto a fresh background, writing intermediate frames
/// under `out/frames/`, and return the final canvas. An empty timeline still
/// writes one frame of the bare background.
pub fn emit_frames(timeline: &Timeline, out: &Path, stride: Option<usize>) -> Result<Canvas> {
    let dir = out.join("frames");
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating frame directory {}", dir.display()))?;

    let mut plan = FramePlan::new(stride, timeline.events.len());
    // The replay callback cannot return an error, so park the first write
    // failure here and surface it afterwards.
    let mut write_err: Option<anyhow::Error> = None;
    let mut on_frame = |index: usize, canvas: &Canvas| {
        if write_err.is_some() {
            return;
        }
        let (level, _) = timeline.events[index].level_cell();
        if plan.emit(index, level) {
            let path = frame_path(&dir, index);
            if let Err(e) = save_image(canvas, &path) {
                write_err =
                    Some(anyhow::Error::new(e).context(format!("writing {}", path.display())));
            }
        }
    };

    let final_canvas = timeline.replay(None, Some(&mut on_frame))?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if timeline.events.is_empty() {
        let path = frame_path(&dir, 0);
        save_image(&final_canvas, &path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(final_canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_keeps_coarse_levels_and_thins_fine_ones() {
        // 4 events at level 1, 2 at level 2, 9 at level 3.
        let levels = [1, 1, 1, 1, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3];
        let mut plan = FramePlan::new(None, levels.len());
        let kept: Vec<usize> = levels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| plan.emit(i, l))
            .map(|(i, _)| i)
            .collect();
        // Levels 1 and 2 in full; level 3 events sit at indices 6..=14 and
        // keep the 0th, 4th, 8th within the level plus the final event.
        assert_eq!(kept, vec![0, 1, 2, 3, 4, 5, 6, 10, 14]);
    }

    #[test]
    fn explicit_stride_keeps_multiples_and_the_last_event() {
        let mut plan = FramePlan::new(Some(4), 10);
        let kept: Vec<usize> = (0..10).filter(|&i| plan.emit(i, 5)).collect();
        assert_eq!(kept, vec![0, 4, 8, 9]);
    }
}
