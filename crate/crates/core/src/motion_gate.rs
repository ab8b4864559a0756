//! Frame-difference motion gating and per-vehicle scene segmentation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DetectionRecord, GrayFrame, ObjectClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid motion parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// A pixel counts as changed when its delta is strictly above this.
    pub pixel_threshold: u8,
    /// Fraction of changed pixels at which a frame pair counts as motion.
    pub active_fraction: f64,
    /// Frames without a detection tolerated before a scene closes.
    pub hangover_frames: u64,
}

impl MotionParams {
    pub fn for_frame_skip(frame_skip: u32) -> Self {
        Self {
            pixel_threshold: 30,
            active_fraction: 0.005,
            hangover_frames: 2 * frame_skip as u64,
        }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        if self.pixel_threshold == 0 || self.pixel_threshold == 255 {
            return Err(MotionError::InvalidParams(
                "pixel_threshold must be in (0, 255)".into(),
            ));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(MotionError::InvalidParams(
                "active_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

impl Default for MotionParams {
    fn default() -> Self {
        Self::for_frame_skip(1)
    }
}

/// Per-pixel absolute intensity differences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffGrid {
    pub width: u32,
    pub height: u32,
    pub deltas: Vec<u8>,
}

impl DiffGrid {
    pub fn get(&self, row: u32, col: u32) -> u8 {
        self.deltas[row as usize * self.width as usize + col as usize]
    }

    pub fn count_above(&self, threshold: u8) -> usize {
        self.deltas.iter().filter(|&&d| d > threshold).count()
    }
}

/// `|a - b|` per pixel. With `b` fixed to a background frame this is the
/// background-subtraction form; with consecutive frames it is the gate.
pub fn frame_diff(a: &GrayFrame, b: &GrayFrame) -> Result<DiffGrid, MotionError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MotionError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let deltas = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&p, &q)| p.abs_diff(q))
        .collect();
    Ok(DiffGrid {
        width: a.width,
        height: a.height,
        deltas,
    })
}

pub fn detect_motion(diff: &DiffGrid, params: &MotionParams) -> bool {
    let total = diff.deltas.len();
    if total == 0 {
        return false;
    }
    diff.count_above(params.pixel_threshold) as f64 / total as f64 >= params.active_fraction
}

/// Motion flag per frame index. A frame is flagged when it differs from
/// either neighbor in the sequence; frames must share dimensions.
pub fn motion_flags(
    frames: &[GrayFrame],
    params: &MotionParams,
) -> Result<BTreeMap<u64, bool>, MotionError> {
    let mut pair_motion = Vec::with_capacity(frames.len().saturating_sub(1));
    for w in frames.windows(2) {
        pair_motion.push(detect_motion(&frame_diff(&w[0], &w[1])?, params));
    }
    let mut flags = BTreeMap::new();
    for (i, frame) in frames.iter().enumerate() {
        let before = i > 0 && pair_motion[i - 1];
        let after = i < pair_motion.len() && pair_motion[i];
        flags.insert(frame.frame_index, before || after);
    }
    Ok(flags)
}

/// Drops detections in frames flagged motionless. Frames without a flag are kept.
pub fn gate_detections(
    detections: &[DetectionRecord],
    flags: &BTreeMap<u64, bool>,
) -> Vec<DetectionRecord> {
    detections
        .iter()
        .filter(|d| flags.get(&d.frame_index).copied().unwrap_or(true))
        .cloned()
        .collect()
}

/// A detection together with its tracker-assigned identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentifiedDetection {
    pub frame_index: u64,
    pub object_class: ObjectClass,
    pub object_id: u64,
}

/// The frames during which one vehicle is present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpan {
    pub scene_id: String,
    pub vehicle_track_hint: u64,
    pub frame_start: u64,
    pub frame_end: u64,
    pub interactive: bool,
}

impl SceneSpan {
    pub fn contains(&self, frame: u64) -> bool {
        (self.frame_start..=self.frame_end).contains(&frame)
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_end - self.frame_start + 1
    }
}

/// Cuts the stream into one scene per vehicle presence. A vehicle's
/// presence splits into separate scenes when more than `hangover_frames`
/// frames pass without it being detected. Scene ids are `{spot}-{n:05}`
/// numbered in (frame_start, vehicle id) order.
pub fn segment_scenes(
    spot_id: &str,
    detections: &[IdentifiedDetection],
    motion_flags: Option<&BTreeMap<u64, bool>>,
    params: &MotionParams,
) -> Vec<SceneSpan> {
    let kept = |d: &&IdentifiedDetection| {
        motion_flags
            .map(|f| f.get(&d.frame_index).copied().unwrap_or(true))
            .unwrap_or(true)
    };
    let mut vehicle_frames: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    let mut pedestrian_frames: BTreeSet<u64> = BTreeSet::new();
    for d in detections.iter().filter(kept) {
        match d.object_class {
            ObjectClass::Vehicle => {
                vehicle_frames.entry(d.object_id).or_default().insert(d.frame_index);
            }
            ObjectClass::Pedestrian => {
                pedestrian_frames.insert(d.frame_index);
            }
        }
    }

    let mut spans = Vec::new();
    for (&vehicle, frames) in &vehicle_frames {
        let mut iter = frames.iter().copied();
        let Some(first) = iter.next() else { continue };
        let (mut start, mut last) = (first, first);
        for f in iter {
            if f - last - 1 > params.hangover_frames {
                spans.push((start, last, vehicle));
                start = f;
            }
            last = f;
        }
        spans.push((start, last, vehicle));
    }
    spans.sort_by_key(|&(start, _, vehicle)| (start, vehicle));
    spans
        .into_iter()
        .enumerate()
        .map(|(n, (start, end, vehicle))| SceneSpan {
            scene_id: format!("{spot_id}-{n:05}"),
            vehicle_track_hint: vehicle,
            frame_start: start,
            frame_end: end,
            interactive: pedestrian_frames.range(start..=end).next().is_some(),
        })
        .collect()
}
