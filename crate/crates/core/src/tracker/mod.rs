//! Multi-object tracking and indexing: Kalman prediction, closest-distance
//! association under per-class gates, and trajectory validation.

pub mod assign;
pub mod kalman;
pub mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Calibration, GeometryError, WorldPoint};
use crate::ingest::{DetectionRecord, ObjectClass, PixelPoint};
use crate::motion_gate::IdentifiedDetection;

pub use assign::{assign, Assignment, TrackView};
pub use kalman::{KalmanModel, KalmanState};
pub use validate::{validate_trajectories, TrajectoryReport, TruthLabels, ViolationCounts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("detections out of frame order: {0} after {1}")]
    Unordered(u64, u64),
    #[error("object {object_id} frame {frame}: {source}")]
    Projection {
        object_id: u64,
        frame: u64,
        source: GeometryError,
    },
}

/// Where a track is expected to be when scoring candidate detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Association {
    /// Kalman-predicted position.
    #[default]
    Predicted,
    /// Last observed position, no motion model.
    LastPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Globally smallest distance first.
    #[default]
    Greedy,
    /// Minimum total distance (Hungarian).
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    pub gate_vehicle_px: f64,
    pub gate_pedestrian_px: f64,
    pub process_noise: f64,
    pub measurement_noise: f64,
    /// Sampled steps a track survives without a detection.
    pub max_coast_frames: u32,
    pub association: Association,
    pub matching: Matching,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            gate_vehicle_px: 60.0,
            gate_pedestrian_px: 20.0,
            process_noise: 1.0,
            measurement_noise: 2.0,
            max_coast_frames: 3,
            association: Association::Predicted,
            matching: Matching::Greedy,
        }
    }
}

impl TrackerParams {
    /// The earlier tracker: last-position nearest neighbor.
    pub fn nearest_neighbor() -> Self {
        Self {
            association: Association::LastPosition,
            ..Self::default()
        }
    }

    pub fn gate_for(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Vehicle => self.gate_vehicle_px,
            ObjectClass::Pedestrian => self.gate_pedestrian_px,
        }
    }

    pub fn model(&self) -> KalmanModel {
        KalmanModel {
            process_noise: self.process_noise,
            measurement_noise: self.measurement_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame_index: u64,
    pub detection_id: String,
    pub raw_px: PixelPoint,
    /// Filter mean after the update at this frame.
    pub smoothed_px: PixelPoint,
    /// Ground-plane position of the raw point.
    pub world: WorldPoint,
    /// Ground-plane position of the smoothed point.
    pub smoothed_world: WorldPoint,
}

/// An indexed object's ordered track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub object_id: u64,
    pub object_class: ObjectClass,
    pub points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_frame(&self) -> Option<u64> {
        self.points.first().map(|p| p.frame_index)
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.points.last().map(|p| p.frame_index)
    }

    pub fn world(&self) -> impl Iterator<Item = &WorldPoint> {
        self.points.iter().map(|p| &p.world)
    }

    /// Points whose frame lies within `[start, end]`.
    pub fn clipped(&self, start: u64, end: u64) -> Trajectory {
        Trajectory {
            object_id: self.object_id,
            object_class: self.object_class,
            points: self
                .points
                .iter()
                .filter(|p| (start..=end).contains(&p.frame_index))
                .cloned()
                .collect(),
        }
    }

    pub fn point_at(&self, frame: u64) -> Option<&TrackPoint> {
        self.points
            .binary_search_by_key(&frame, |p| p.frame_index)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn overlaps(&self, start: u64, end: u64) -> bool {
        match (self.first_frame(), self.last_frame()) {
            (Some(a), Some(b)) => a <= end && b >= start,
            _ => false,
        }
    }
}

/// A live track.
#[derive(Debug, Clone)]
struct Track {
    object_id: u64,
    object_class: ObjectClass,
    state: KalmanState,
    last_frame: u64,
    hits: usize,
    points: Vec<(u64, String, PixelPoint, PixelPoint)>,
}

/// Sequential tracker over one frame-ordered detection stream.
#[derive(Debug)]
pub struct Tracker {
    params: TrackerParams,
    model: KalmanModel,
    frame_skip: u32,
    next_id: u64,
    last_frame: Option<u64>,
    active: Vec<Track>,
    finished: Vec<Track>,
}

impl Tracker {
    pub fn new(params: TrackerParams, frame_skip: u32) -> Self {
        Self {
            model: params.model(),
            params,
            frame_skip: frame_skip.max(1),
            next_id: 0,
            last_frame: None,
            active: Vec::new(),
            finished: Vec::new(),
        }
    }

    fn steps_between(&self, from: u64, to: u64) -> f64 {
        (to - from) as f64 / self.frame_skip as f64
    }

    fn expected(&self, track: &Track, frame: u64) -> [f64; 2] {
        match self.params.association {
            Association::Predicted => track
                .state
                .predict(&self.model, self.steps_between(track.last_frame, frame))
                .position(),
            Association::LastPosition => {
                let p = track.points.last().expect("live track has a point").2;
                [p.x, p.y]
            }
        }
    }

    /// Processes all detections of one frame.
    pub fn step(&mut self, frame: u64, detections: &[&DetectionRecord]) -> Result<(), TrackError> {
        if let Some(prev) = self.last_frame {
            if frame < prev {
                return Err(TrackError::Unordered(frame, prev));
            }
        }
        self.last_frame = Some(frame);

        // A track may miss `max_coast_frames` steps and still be matched.
        let limit = self.params.max_coast_frames as f64 + 1.0 + 1e-9;
        let (keep, done): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|t| self.steps_between(t.last_frame, frame) <= limit);
        self.finished.extend(done);
        self.active = keep;

        let mut dets: Vec<&DetectionRecord> = detections.to_vec();
        dets.sort_by(|a, b| a.detection_id.cmp(&b.detection_id));

        let views: Vec<TrackView> = self
            .active
            .iter()
            .map(|t| TrackView {
                object_id: t.object_id,
                object_class: t.object_class,
                expected_px: self.expected(t, frame),
            })
            .collect();
        let assignment = assign(&views, &dets, &self.params);

        for &(ti, di) in &assignment.matches {
            let d = dets[di];
            let z = [d.contact_point_px.x, d.contact_point_px.y];
            let dt = self.steps_between(self.active[ti].last_frame, frame);
            let model = self.model;
            let track = &mut self.active[ti];
            track.state = if track.hits == 1 {
                KalmanState::from_two_points(track.state.position(), z, dt, &model)
            } else {
                track.state.predict(&model, dt).update(z, &model)
            };
            track.hits += 1;
            track.last_frame = frame;
            let smoothed = match self.params.association {
                Association::Predicted => {
                    let [x, y] = track.state.position();
                    PixelPoint::new(x, y)
                }
                Association::LastPosition => d.contact_point_px,
            };
            track
                .points
                .push((frame, d.detection_id.clone(), d.contact_point_px, smoothed));
        }

        for &di in &assignment.new_tracks {
            let d = dets[di];
            let id = self.next_id;
            self.next_id += 1;
            self.active.push(Track {
                object_id: id,
                object_class: d.object_class,
                state: KalmanState::spawn(d.contact_point_px.x, d.contact_point_px.y, &self.model),
                last_frame: frame,
                hits: 1,
                points: vec![(frame, d.detection_id.clone(), d.contact_point_px, d.contact_point_px)],
            });
        }
        Ok(())
    }

    /// Closes all tracks and projects them to the ground plane, ordered by object id.
    pub fn finish(mut self, calib: &Calibration) -> Result<Vec<Trajectory>, TrackError> {
        self.finished.append(&mut self.active);
        self.finished.sort_by_key(|t| t.object_id);
        self.finished
            .into_iter()
            .map(|t| {
                let points = t
                    .points
                    .into_iter()
                    .map(|(frame, id, raw, smoothed)| {
                        let proj = |p: PixelPoint| {
                            calib.project(p, frame).map_err(|source| TrackError::Projection {
                                object_id: t.object_id,
                                frame,
                                source,
                            })
                        };
                        Ok(TrackPoint {
                            frame_index: frame,
                            detection_id: id,
                            raw_px: raw,
                            smoothed_px: smoothed,
                            world: proj(raw)?,
                            smoothed_world: proj(smoothed)?,
                        })
                    })
                    .collect::<Result<Vec<_>, TrackError>>()?;
                Ok(Trajectory {
                    object_id: t.object_id,
                    object_class: t.object_class,
                    points,
                })
            })
            .collect()
    }
}

/// Tracks a frame-ordered detection stream from start to end.
pub fn track_stream(
    detections: &[DetectionRecord],
    params: &TrackerParams,
    calib: &Calibration,
) -> Result<Vec<Trajectory>, TrackError> {
    let mut tracker = Tracker::new(*params, calib.frame_skip);
    let mut i = 0;
    while i < detections.len() {
        let frame = detections[i].frame_index;
        let mut j = i;
        while j < detections.len() && detections[j].frame_index == frame {
            j += 1;
        }
        let batch: Vec<&DetectionRecord> = detections[i..j].iter().collect();
        tracker.step(frame, &batch)?;
        i = j;
    }
    tracker.finish(calib)
}

/// Same as [`track_stream`], for the detections of one scene.
pub fn track_scene(
    detections: &[DetectionRecord],
    params: &TrackerParams,
    calib: &Calibration,
) -> Result<Vec<Trajectory>, TrackError> {
    track_stream(detections, params, calib)
}

/// Flattens trajectories into identified detections, frame ordered.
pub fn identified_detections(trajectories: &[Trajectory]) -> Vec<IdentifiedDetection> {
    let mut out: Vec<IdentifiedDetection> = trajectories
        .iter()
        .flat_map(|t| {
            t.points.iter().map(move |p| IdentifiedDetection {
                frame_index: p.frame_index,
                object_class: t.object_class,
                object_id: t.object_id,
            })
        })
        .collect();
    out.sort_by_key(|d| (d.frame_index, d.object_id));
    out
}
