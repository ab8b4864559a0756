//! Synthetic scenes with known ground truth.
//!
//! Agents follow piecewise-linear world paths. A pinhole camera tilted down
//! over the road projects them to pixels, and Gaussian pixel noise and random
//! drops turn the projected points into a detection stream. The truth sidecar
//! keeps the noise-free samples, the detection labels, and the speeds, stops
//! and safety margins computed directly from the scripts.

mod corpus;
mod render;

use std::collections::HashMap;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::zones::distance_to_polygon;
use crate::geometry::{Correspondence, Homography, WorldPoint};
use crate::ingest::{DetectionRecord, ObjectClass, PixelPoint, SpotConfig};
use crate::tracker::validate::TruthLabels;

pub use corpus::{
    crossing_corpus, crossing_pedestrian, random_crossing_scenario, standard_corpus, standard_scenarios,
    study_corpus, study_spots, vehicle_script, GeneratedScenario, StopPlan, StudySpot, VehiclePlan,
};
pub use render::render_frames;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario {scenario}: {reason}")]
    InvalidSpec { scenario: String, reason: String },
}

/// Half width of the crosswalk along the road, meters.
pub const CROSSWALK_HALF_WIDTH_M: f64 = 2.0;
/// Half width of the road, meters. The crosswalk spans it.
pub const ROAD_HALF_WIDTH_M: f64 = 4.0;
/// Outer edge of each sidewalk, meters from the road axis.
pub const SIDEWALK_OUTER_M: f64 = 8.0;
/// Lane centerlines, meters. Both lanes run toward +x.
pub const LANES_Y_M: [f64; 2] = [-2.0, 2.0];

/// Pinhole camera at height `height_m` above `(0, position_y_m)`, looking
/// along +y and pitched down by `pitch_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObliqueCamera {
    pub focal_px: f64,
    pub height_m: f64,
    pub pitch_deg: f64,
    pub position_y_m: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for ObliqueCamera {
    fn default() -> Self {
        Self {
            focal_px: 500.0,
            height_m: 10.0,
            pitch_deg: 25.0,
            position_y_m: -20.0,
            width: 1280,
            height: 720,
        }
    }
}

impl ObliqueCamera {
    /// Ground plane to image.
    pub fn world_to_pixel(&self) -> Homography {
        let (s, c) = self.pitch_deg.to_radians().sin_cos();
        let (yc, h) = (self.position_y_m, self.height_m);
        #[rustfmt::skip]
        let extrinsic = Matrix3::new(
            1.0, 0.0, 0.0,
            0.0, -s, yc * s + h * c,
            0.0, c, -yc * c + h * s,
        );
        let f = self.focal_px;
        #[rustfmt::skip]
        let intrinsic = Matrix3::new(
            f, 0.0, self.width as f64 / 2.0,
            0.0, f, self.height as f64 / 2.0,
            0.0, 0.0, 1.0,
        );
        Homography(intrinsic * extrinsic)
    }

    /// Distance in front of the camera along its optical axis.
    pub fn depth(&self, p: [f64; 2]) -> f64 {
        let (s, c) = self.pitch_deg.to_radians().sin_cos();
        c * (p[1] - self.position_y_m) + self.height_m * s
    }

    pub fn project(&self, p: [f64; 2]) -> Option<PixelPoint> {
        if self.depth(p) <= 0.0 {
            return None;
        }
        self.world_to_pixel().apply(p).ok().map(|[x, y]| PixelPoint::new(x, y))
    }

    pub fn in_frame(&self, px: PixelPoint) -> bool {
        (0.0..=self.width as f64).contains(&px.x) && (0.0..=self.height as f64).contains(&px.y)
    }
}

/// Spot configuration for the synthetic road: a two-lane one-way road along
/// x, an 8 m crosswalk across it at x = 0, and sidewalks on both sides.
pub fn synthetic_spot(spot_id: &str, signalized: bool, camera: &ObliqueCamera) -> SpotConfig {
    let (cw, road, side) = (CROSSWALK_HALF_WIDTH_M, ROAD_HALF_WIDTH_M, SIDEWALK_OUTER_M);
    let anchors = [
        [-cw, -road],
        [cw, -road],
        [cw, road],
        [-cw, road],
        [-12.0, -road],
        [12.0, -road],
        [-12.0, road],
        [12.0, road],
    ];
    let calibration = anchors
        .iter()
        .map(|&w| {
            let px = camera.project(w).expect("anchor in front of camera");
            Correspondence::new([px.x, px.y], w)
        })
        .collect();
    SpotConfig {
        spot_id: spot_id.to_string(),
        crosswalk_length_m: 2.0 * road,
        lanes: LANES_Y_M.len() as u32,
        signalized,
        school_zone: false,
        speed_camera: false,
        speed_limit_kmh: if signalized { 50.0 } else { 30.0 },
        frame_size: [camera.width, camera.height],
        fps: 25.0,
        frame_skip: 3,
        calibration,
        crosswalk_length_px: None,
        crosswalk_polygon_world: vec![[-cw, -road], [cw, -road], [cw, road], [-cw, road]],
        sidewalk_polygons_world: vec![
            vec![[-30.0, road], [30.0, road], [30.0, side], [-30.0, side]],
            vec![[-30.0, -side], [30.0, -side], [30.0, -road], [-30.0, -road]],
        ],
        approach_direction_world: Some([1.0, 0.0]),
        cia_buffer_m: 3.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub const fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// One agent's motion: linear between timestamped waypoints, absent outside
/// the first and last. During `hidden` windows (closed, seconds) the agent
/// moves but produces no detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub name: String,
    pub class: ObjectClass,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub hidden: Vec<[f64; 2]>,
}

impl AgentScript {
    pub fn new(name: impl Into<String>, class: ObjectClass, waypoints: Vec<Waypoint>) -> Self {
        Self {
            name: name.into(),
            class,
            waypoints,
            hidden: Vec::new(),
        }
    }

    /// Straight walk or drive from `from` to `to` at constant speed.
    pub fn straight(
        name: impl Into<String>,
        class: ObjectClass,
        from: [f64; 2],
        to: [f64; 2],
        speed_mps: f64,
        t0: f64,
    ) -> Self {
        let len = (to[0] - from[0]).hypot(to[1] - from[1]);
        Self::new(
            name,
            class,
            vec![
                Waypoint::new(t0, from[0], from[1]),
                Waypoint::new(t0 + len / speed_mps, to[0], to[1]),
            ],
        )
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints.first().map_or(f64::NAN, |w| w.t)
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints.last().map_or(f64::NAN, |w| w.t)
    }

    pub fn position(&self, t: f64) -> Option<[f64; 2]> {
        let w = &self.waypoints;
        if w.is_empty() || t < w[0].t || t > w[w.len() - 1].t {
            return None;
        }
        let i = w.partition_point(|p| p.t <= t);
        if i == w.len() {
            return Some(w[w.len() - 1].xy());
        }
        let (a, b) = (w[i - 1], w[i]);
        let u = (t - a.t) / (b.t - a.t);
        Some([a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)])
    }

    pub fn is_hidden(&self, t: f64) -> bool {
        self.hidden.iter().any(|&[a, b]| t >= a && t <= b)
    }

    /// Moves every timestamp by `dt`.
    pub fn shifted(mut self, dt: f64) -> Self {
        for w in &mut self.waypoints {
            w.t += dt;
        }
        for h in &mut self.hidden {
            h[0] += dt;
            h[1] += dt;
        }
        self
    }

    /// First time the path passes within `1e-9` m of `p`.
    pub fn arrival_at(&self, p: [f64; 2]) -> Option<f64> {
        for pair in self.waypoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let d = [b.x - a.x, b.y - a.y];
            let len2 = d[0] * d[0] + d[1] * d[1];
            if len2 == 0.0 {
                if (p[0] - a.x).hypot(p[1] - a.y) <= 1e-9 {
                    return Some(a.t);
                }
                continue;
            }
            let u = (((p[0] - a.x) * d[0] + (p[1] - a.y) * d[1]) / len2).clamp(0.0, 1.0);
            let q = [a.x + u * d[0], a.y + u * d[1]];
            if (p[0] - q[0]).hypot(p[1] - q[1]) <= 1e-9 {
                return Some(a.t + u * (b.t - a.t));
            }
        }
        None
    }

    fn moving_segments(&self) -> impl Iterator<Item = (Waypoint, Waypoint)> + '_ {
        self.waypoints
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|(a, b)| (b.x - a.x).hypot(b.y - a.y) > 1e-12)
    }
}

/// Everything needed to generate one detection stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub spot: SpotConfig,
    #[serde(default)]
    pub camera: ObliqueCamera,
    pub agents: Vec<AgentScript>,
    pub noise_sigma_px: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    fn invalid(&self, reason: impl Into<String>) -> SynthError {
        SynthError::InvalidSpec {
            scenario: self.name.clone(),
            reason: reason.into(),
        }
    }

    /// Sampled frame indices inside `[t0, t1]`.
    fn sample_frames(&self, t0: f64, t1: f64) -> impl Iterator<Item = u64> {
        let fps = self.spot.fps;
        let skip = self.spot.frame_skip.max(1) as u64;
        let first = ((t0 * fps - 1e-9) / skip as f64).ceil().max(0.0) as u64;
        let last = ((t1 * fps + 1e-9) / skip as f64).floor();
        let last = if last < 0.0 { None } else { Some(last as u64) };
        (first..=last.unwrap_or(0))
            .filter(move |_| last.is_some())
            .map(move |k| k * skip)
            .filter(move |&f| (t0..=t1).contains(&(f as f64 / fps)))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.spot.validate().map_err(|e| self.invalid(e.to_string()))?;
        if self.spot.frame_size != [self.camera.width, self.camera.height] {
            return Err(self.invalid("spot frame size differs from the camera's"));
        }
        if !(self.noise_sigma_px >= 0.0 && self.noise_sigma_px.is_finite()) {
            return Err(self.invalid(format!("noise sigma {}", self.noise_sigma_px)));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(self.invalid(format!("drop probability {}", self.drop_prob)));
        }
        for a in &self.agents {
            if a.waypoints.len() < 2 {
                return Err(self.invalid(format!("agent {} needs at least two waypoints", a.name)));
            }
            if a.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(self.invalid(format!("agent {} waypoint times not increasing", a.name)));
            }
            if a.start_time() < 0.0 {
                return Err(self.invalid(format!("agent {} starts before t = 0", a.name)));
            }
            for f in self.sample_frames(a.start_time(), a.end_time()) {
                let t = f as f64 / self.spot.fps;
                let p = a.position(t).expect("sample inside script span");
                match self.camera.project(p) {
                    Some(px) if self.camera.in_frame(px) => {}
                    _ => {
                        return Err(self.invalid(format!(
                            "agent {} leaves the frame at t = {t} ({}, {})",
                            a.name, p[0], p[1]
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// A noise-free sample of an agent that produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub frame_index: u64,
    pub world: WorldPoint,
    pub pixel: PixelPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrajectory {
    pub agent: usize,
    pub name: String,
    pub object_class: ObjectClass,
    pub points: Vec<TruthPoint>,
    /// km/h between consecutive detected samples, from the script.
    pub speed_kmh: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub frame_index: u64,
    pub detection_id: String,
    pub agent: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthScene {
    pub vehicle: usize,
    pub frame_start: u64,
    pub frame_end: u64,
}

/// Safety margin of one vehicle and pedestrian pair, from the script paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPsm {
    pub vehicle: usize,
    pub pedestrian: usize,
    pub seconds: f64,
    pub conflict_point: [f64; 2],
    pub vehicle_arrival_s: f64,
    pub pedestrian_arrival_s: f64,
}

/// Whether a vehicle's script holds still before the crosswalk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthStop {
    pub vehicle: usize,
    pub stop: bool,
    pub stop_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub labels: Vec<TruthLabel>,
    pub trajectories: Vec<TruthTrajectory>,
    pub scenes: Vec<TruthScene>,
    pub psm: Vec<TruthPsm>,
    pub stops: Vec<TruthStop>,
}

impl GroundTruth {
    /// Labels keyed for the trajectory validator; object ids are agent indices.
    pub fn label_map(&self) -> TruthLabels {
        self.labels
            .iter()
            .map(|l| ((l.frame_index, l.detection_id.clone()), l.agent as u64))
            .collect()
    }

    pub fn trajectory(&self, agent: usize) -> Option<&TruthTrajectory> {
        self.trajectories.iter().find(|t| t.agent == agent)
    }

    pub fn psm_for(&self, vehicle: usize, pedestrian: usize) -> Option<&TruthPsm> {
        self.psm
            .iter()
            .find(|p| p.vehicle == vehicle && p.pedestrian == pedestrian)
    }

    pub fn stop_for(&self, vehicle: usize) -> Option<&TruthStop> {
        self.stops.iter().find(|s| s.vehicle == vehicle)
    }
}

/// Minimum stationary time, seconds, for a script pause to count as a stop.
pub const STOP_MIN_SECONDS: f64 = 1.0;

/// First crossing of the two script paths, walking the vehicle path in order.
pub fn script_conflict(vehicle: &AgentScript, pedestrian: &AgentScript) -> Option<(f64, [f64; 2], f64, f64)> {
    for (a, b) in vehicle.moving_segments() {
        for (c, d) in pedestrian.moving_segments() {
            let r = [b.x - a.x, b.y - a.y];
            let s = [d.x - c.x, d.y - c.y];
            let denom = r[0] * s[1] - r[1] * s[0];
            if denom.abs() < 1e-12 {
                continue;
            }
            let w = [c.x - a.x, c.y - a.y];
            let u = (w[0] * s[1] - w[1] * s[0]) / denom;
            let v = (w[0] * r[1] - w[1] * r[0]) / denom;
            if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
                let point = [a.x + u * r[0], a.y + u * r[1]];
                let tv = a.t + u * (b.t - a.t);
                let tp = c.t + v * (d.t - c.t);
                return Some((tv - tp, point, tv, tp));
            }
        }
    }
    None
}

fn script_stop(vehicle: &AgentScript, crosswalk: &[[f64; 2]], approach: [f64; 2]) -> (bool, Option<f64>) {
    let front_edge = crosswalk
        .iter()
        .map(|p| p[0] * approach[0] + p[1] * approach[1])
        .fold(f64::INFINITY, f64::min);
    for w in vehicle.waypoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        let still = (b.x - a.x).hypot(b.y - a.y) <= 1e-12;
        let before = a.x * approach[0] + a.y * approach[1] < front_edge;
        if still && before && b.t - a.t >= STOP_MIN_SECONDS {
            return (true, Some(distance_to_polygon(a.xy(), crosswalk)));
        }
    }
    (false, None)
}

/// Detections plus ground truth. Deterministic in `spec.seed`; the noise and
/// drop draws do not depend on the noise level, so one seed gives the same
/// underlying realization at every sigma.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<DetectionRecord>, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fps = spec.spot.fps;

    struct Sample {
        frame: u64,
        agent: usize,
        world: [f64; 2],
        truth_px: PixelPoint,
        observed_px: PixelPoint,
    }
    let mut samples = Vec::new();
    for (ai, agent) in spec.agents.iter().enumerate() {
        for f in spec.sample_frames(agent.start_time(), agent.end_time()) {
            let t = f as f64 / fps;
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            let dropped = rng.random::<f64>() < spec.drop_prob;
            if dropped || agent.is_hidden(t) {
                continue;
            }
            let world = agent.position(t).expect("sample inside script span");
            let truth_px = spec.camera.project(world).expect("validated");
            let observed_px = PixelPoint::new(
                (truth_px.x + spec.noise_sigma_px * zx).clamp(0.0, spec.camera.width as f64),
                (truth_px.y + spec.noise_sigma_px * zy).clamp(0.0, spec.camera.height as f64),
            );
            samples.push(Sample {
                frame: f,
                agent: ai,
                world,
                truth_px,
                observed_px,
            });
        }
    }
    samples.sort_by_key(|s| (s.frame, s.agent));

    let mut records = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut points: Vec<Vec<TruthPoint>> = vec![Vec::new(); spec.agents.len()];
    let mut i = 0;
    while i < samples.len() {
        let mut j = i;
        while j < samples.len() && samples[j].frame == samples[i].frame {
            j += 1;
        }
        let mut order: Vec<usize> = (i..j).collect();
        order.shuffle(&mut rng);
        for (k, &si) in order.iter().enumerate() {
            let s = &samples[si];
            let id = format!("d{k}");
            records.push(DetectionRecord {
                spot_id: spec.spot.spot_id.clone(),
                frame_index: s.frame,
                object_class: spec.agents[s.agent].class,
                contact_point_px: s.observed_px,
                detection_id: id.clone(),
            });
            labels.push(TruthLabel {
                frame_index: s.frame,
                detection_id: id,
                agent: s.agent,
            });
        }
        for s in &samples[i..j] {
            points[s.agent].push(TruthPoint {
                frame_index: s.frame,
                world: WorldPoint {
                    x: s.world[0],
                    y: s.world[1],
                    t: s.frame as f64 / fps,
                },
                pixel: s.truth_px,
            });
        }
        i = j;
    }

    let trajectories: Vec<TruthTrajectory> = spec
        .agents
        .iter()
        .zip(points)
        .enumerate()
        .filter(|(_, (_, pts))| !pts.is_empty())
        .map(|(ai, (agent, pts))| {
            let speed_kmh = pts
                .windows(2)
                .map(|w| {
                    let (a, b) = (agent.position(w[0].world.t).unwrap(), agent.position(w[1].world.t).unwrap());
                    (b[0] - a[0]).hypot(b[1] - a[1]) / (w[1].world.t - w[0].world.t) * 3.6
                })
                .collect();
            TruthTrajectory {
                agent: ai,
                name: agent.name.clone(),
                object_class: agent.class,
                points: pts,
                speed_kmh,
            }
        })
        .collect();

    let hangover = 2 * spec.spot.frame_skip as u64;
    let mut scenes = Vec::new();
    for t in trajectories.iter().filter(|t| t.object_class == ObjectClass::Vehicle) {
        let mut start = t.points[0].frame_index;
        let mut last = start;
        for p in &t.points[1..] {
            if p.frame_index - last - 1 > hangover {
                scenes.push(TruthScene {
                    vehicle: t.agent,
                    frame_start: start,
                    frame_end: last,
                });
                start = p.frame_index;
            }
            last = p.frame_index;
        }
        scenes.push(TruthScene {
            vehicle: t.agent,
            frame_start: start,
            frame_end: last,
        });
    }
    scenes.sort_by_key(|s| (s.frame_start, s.vehicle));

    let vehicles: Vec<usize> = class_indices(spec, ObjectClass::Vehicle);
    let pedestrians: Vec<usize> = class_indices(spec, ObjectClass::Pedestrian);
    let mut psm = Vec::new();
    for &v in &vehicles {
        let va = &spec.agents[v];
        for &p in &pedestrians {
            let pa = &spec.agents[p];
            if pa.end_time() < va.start_time() - 30.0 || pa.start_time() > va.end_time() + 30.0 {
                continue;
            }
            if let Some((seconds, conflict_point, tv, tp)) = script_conflict(va, pa) {
                psm.push(TruthPsm {
                    vehicle: v,
                    pedestrian: p,
                    seconds,
                    conflict_point,
                    vehicle_arrival_s: tv,
                    pedestrian_arrival_s: tp,
                });
            }
        }
    }

    let approach = spec.spot.approach_direction_world.unwrap_or([1.0, 0.0]);
    let stops = vehicles
        .iter()
        .map(|&v| {
            let (stop, stop_distance_m) = script_stop(&spec.agents[v], &spec.spot.crosswalk_polygon_world, approach);
            TruthStop {
                vehicle: v,
                stop,
                stop_distance_m,
            }
        })
        .collect();

    Ok((
        records,
        GroundTruth {
            scenario: spec.name.clone(),
            labels,
            trajectories,
            scenes,
            psm,
            stops,
        },
    ))
}

fn class_indices(spec: &ScenarioSpec, class: ObjectClass) -> Vec<usize> {
    spec.agents
        .iter()
        .enumerate()
        .filter(|(_, a)| a.class == class)
        .map(|(i, _)| i)
        .collect()
}

/// Agent index of every detection, keyed by `(frame_index, detection_id)`.
pub fn agent_lookup(truth: &GroundTruth) -> HashMap<(u64, &str), usize> {
    truth
        .labels
        .iter()
        .map(|l| ((l.frame_index, l.detection_id.as_str()), l.agent))
        .collect()
}
