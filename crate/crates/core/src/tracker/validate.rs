//! Trajectory validity checks: connectivity (no breaks), crossing (no
//! identity swaps) and directivity (no invasion of another object's path).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Trajectory, TrackerParams};
use crate::ingest::PixelPoint;

/// Ground-truth object id for each `(frame_index, detection_id)`.
pub type TruthLabels = HashMap<(u64, String), u64>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub connectivity: usize,
    pub crossing: usize,
    pub directivity: usize,
}

impl ViolationCounts {
    pub fn total(&self) -> usize {
        self.connectivity + self.crossing + self.directivity
    }

    pub fn add(&mut self, other: &ViolationCounts) {
        self.connectivity += other.connectivity;
        self.crossing += other.crossing;
        self.directivity += other.directivity;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneValidation {
    pub scene_id: String,
    pub counts: ViolationCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub scenes: Vec<SceneValidation>,
    pub totals: ViolationCounts,
    pub violating_scenes: usize,
    pub accuracy: f64,
}

/// Thresholds for the checks run without ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationParams {
    pub tracker: TrackerParams,
    pub frame_skip: u32,
    /// Largest per-step heading change, degrees, before a reversal is flagged.
    pub max_turn_deg: f64,
    /// Steps shorter than this (pixels) carry no heading.
    pub min_step_px: f64,
    /// Restart window after a track closes, in sampled steps.
    pub restart_window_steps: u32,
}

impl ValidationParams {
    pub fn new(tracker: TrackerParams, frame_skip: u32) -> Self {
        Self {
            tracker,
            frame_skip: frame_skip.max(1),
            max_turn_deg: 120.0,
            min_step_px: 2.0,
            restart_window_steps: 3 * (tracker.max_coast_frames + 1),
        }
    }
}

/// Checks every scene's trajectories; `truth` switches from heuristic flags to
/// exact label-based counting.
pub fn validate_trajectories(
    scenes: &[(String, Vec<Trajectory>)],
    truth: Option<&TruthLabels>,
    params: &ValidationParams,
) -> TrajectoryReport {
    let scenes: Vec<SceneValidation> = scenes
        .iter()
        .map(|(id, trajs)| SceneValidation {
            scene_id: id.clone(),
            counts: match truth {
                Some(labels) => with_truth(trajs, labels, params),
                None => heuristic(trajs, params),
            },
        })
        .collect();
    let mut totals = ViolationCounts::default();
    for s in &scenes {
        totals.add(&s.counts);
    }
    let violating_scenes = scenes.iter().filter(|s| s.counts.total() > 0).count();
    let accuracy = if scenes.is_empty() {
        1.0
    } else {
        1.0 - violating_scenes as f64 / scenes.len() as f64
    };
    TrajectoryReport {
        scenes,
        totals,
        violating_scenes,
        accuracy,
    }
}

/// Counts error frames. Each track is owned by the object labelling most of
/// its points; a point carrying another object's label is an error. It is a
/// crossing when another track carries this track's owner within the coast
/// window, otherwise directivity. Connectivity counts the
/// breaks where an object moves between two tracks it owns.
fn with_truth(trajs: &[Trajectory], labels: &TruthLabels, params: &ValidationParams) -> ViolationCounts {
    let labelled: Vec<Vec<(u64, u64)>> = trajs
        .iter()
        .map(|t| {
            t.points
                .iter()
                .filter_map(|p| {
                    labels
                        .get(&(p.frame_index, p.detection_id.clone()))
                        .map(|&id| (p.frame_index, id))
                })
                .collect()
        })
        .collect();
    let owners: Vec<Option<u64>> = labelled.iter().map(|seq| owner(seq)).collect();

    let mut at: HashMap<(usize, u64), u64> = HashMap::new();
    for (ti, seq) in labelled.iter().enumerate() {
        for &(frame, id) in seq {
            at.insert((ti, frame), id);
        }
    }

    let window = (params.tracker.max_coast_frames as u64 + 1) * params.frame_skip as u64;
    let mut crossing = BTreeSet::new();
    let mut directivity = BTreeSet::new();
    for (ti, seq) in labelled.iter().enumerate() {
        let Some(own) = owners[ti] else { continue };
        for &(frame, _) in seq.iter().filter(|(_, id)| *id != own) {
            let swapped = (0..labelled.len()).any(|u| {
                u != ti
                    && (frame.saturating_sub(window)..=frame + window)
                        .any(|f| at.get(&(u, f)) == Some(&own))
            });
            if swapped {
                crossing.insert(frame);
            } else {
                directivity.insert(frame);
            }
        }
    }

    let mut connectivity = 0;
    let mut cover: BTreeMap<u64, Vec<(u64, usize)>> = BTreeMap::new();
    for (ti, seq) in labelled.iter().enumerate() {
        for &(frame, id) in seq {
            if owners[ti] == Some(id) {
                cover.entry(id).or_default().push((frame, ti));
            }
        }
    }
    for pts in cover.values_mut() {
        pts.sort_unstable();
        connectivity += pts.windows(2).filter(|w| w[0].1 != w[1].1).count();
    }

    ViolationCounts {
        connectivity,
        crossing: crossing.len(),
        directivity: directivity.difference(&crossing).count(),
    }
}

/// Most frequent label; ties go to the label seen first.
fn owner(seq: &[(u64, u64)]) -> Option<u64> {
    let mut counts: Vec<(u64, usize)> = Vec::new();
    for &(_, id) in seq {
        match counts.iter_mut().find(|(c, _)| *c == id) {
            Some(entry) => entry.1 += 1,
            None => counts.push((id, 1)),
        }
    }
    counts
        .iter()
        .fold(None, |best: Option<(u64, usize)>, &(id, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((id, n)),
        })
        .map(|(id, _)| id)
}

fn cross(o: PixelPoint, a: PixelPoint, b: PixelPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect(p1: PixelPoint, p2: PixelPoint, q1: PixelPoint, q2: PixelPoint) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn heuristic(trajs: &[Trajectory], params: &ValidationParams) -> ViolationCounts {
    let mut counts = ViolationCounts::default();
    let skip = params.frame_skip as u64;
    let coast = params.tracker.max_coast_frames as u64 + 1;

    // Restarts: a same-class track appearing soon after another closed, nearby.
    for a in trajs {
        let (Some(end), Some(last)) = (a.last_frame(), a.points.last()) else {
            continue;
        };
        let restarted = trajs.iter().any(|b| {
            let (Some(start), Some(first)) = (b.first_frame(), b.points.first()) else {
                return false;
            };
            if b.object_id == a.object_id || b.object_class != a.object_class || start <= end {
                return false;
            }
            let steps = (start - end) / skip;
            steps > coast
                && steps <= params.restart_window_steps as u64
                && last.raw_px.distance(&first.raw_px)
                    <= params.tracker.gate_for(a.object_class) * steps as f64
        });
        if restarted {
            counts.connectivity += 1;
        }
    }

    // Simultaneous path intersections between same-class tracks.
    for (i, a) in trajs.iter().enumerate() {
        for b in &trajs[i + 1..] {
            if a.object_class != b.object_class {
                continue;
            }
            let (Some(start), Some(end)) = (b.first_frame(), b.last_frame()) else {
                continue;
            };
            if !a.overlaps(start, end) {
                continue;
            }
            let hit = a.points.windows(2).any(|wa| {
                match (b.point_at(wa[0].frame_index), b.point_at(wa[1].frame_index)) {
                    (Some(q1), Some(q2)) => segments_intersect(
                        wa[0].smoothed_px,
                        wa[1].smoothed_px,
                        q1.smoothed_px,
                        q2.smoothed_px,
                    ),
                    _ => false,
                }
            });
            if hit {
                counts.crossing += 1;
            }
        }
    }

    // Heading reversals.
    let cos_limit = params.max_turn_deg.to_radians().cos();
    for t in trajs {
        let steps: Vec<(f64, f64)> = t
            .points
            .windows(2)
            .map(|w| (w[1].smoothed_px.x - w[0].smoothed_px.x, w[1].smoothed_px.y - w[0].smoothed_px.y))
            .filter(|(dx, dy)| dx.hypot(*dy) > params.min_step_px)
            .collect();
        let reversed = steps.windows(2).any(|w| {
            let (a, b) = (w[0], w[1]);
            let cos = (a.0 * b.0 + a.1 * b.1) / (a.0.hypot(a.1) * b.0.hypot(b.1));
            cos < cos_limit
        });
        if reversed {
            counts.directivity += 1;
        }
    }
    counts
}
