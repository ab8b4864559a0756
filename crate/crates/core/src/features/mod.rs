//! Scene-level behavioral features: speeds, zones, acceleration states,
//! stops, distances, relative positions and the pedestrian safety margin.

pub mod interaction;
pub mod kinematics;
pub mod psm;
pub mod zones;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Calibration;
use crate::ingest::ObjectClass;
use crate::motion_gate::SceneSpan;
use crate::tracker::Trajectory;

pub use interaction::{
    crosswalk_distances, nearest_pedestrian_lists, pair_distances, relative_position, relative_positions,
    vehicle_headings, NearestPedestrianLists, RelativePosition,
};
pub use kinematics::{acceleration_list, detect_stop, low_pass, run_length, speed_list, AccelState, StopWindow};
pub use psm::{psm, psm_points, PsmValue};
pub use zones::{PedestrianZone, VehicleZone, ZoneMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("trajectory too short: need {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("spot has no usable crosswalk polygon or approach direction")]
    MissingPolygons,
    #[error("trajectories share no frame")]
    NoOverlap,
    #[error("vehicle never moves, heading undefined")]
    ZeroHeading,
    #[error("paths never cross")]
    NoConflict,
    #[error("scene {0} references unknown vehicle track {1}")]
    UnknownVehicle(String, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    /// Low-pass smoothing factor in (0, 1].
    pub alpha: f64,
    /// Acceleration dead-band, km/h per step.
    pub epsilon_kmh: f64,
    pub stop_tolerance_kmh: f64,
    pub stop_min_steps: usize,
    /// Classify acceleration over the whole scene instead of the approach only.
    pub full_scene_acceleration: bool,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            epsilon_kmh: 0.5,
            stop_tolerance_kmh: 2.0,
            stop_min_steps: 3,
            full_scene_acceleration: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopFlag {
    #[serde(rename = "stop")]
    Stop,
    #[serde(rename = "no stop")]
    NoStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleFeatures {
    pub object_id: u64,
    pub frames: Vec<u64>,
    pub speed_kmh: Vec<f64>,
    pub filtered_speed_kmh: Vec<f64>,
    pub zones: Vec<VehicleZone>,
    pub acceleration: Vec<AccelState>,
    pub acceleration_runs: Vec<AccelState>,
    pub crosswalk_distance_m: Vec<f64>,
    pub stop: StopFlag,
    /// Closest approach to the crosswalk while stopped.
    pub stop_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianFeatures {
    pub object_id: u64,
    pub frames: Vec<u64>,
    pub speed_kmh: Vec<f64>,
    pub zones: Vec<PedestrianZone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmFeature {
    pub pedestrian_id: u64,
    #[serde(flatten)]
    pub value: PsmValue,
}

/// Every feature of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFeatures {
    pub scene_id: String,
    pub spot_id: String,
    pub frame_start: u64,
    pub frame_end: u64,
    pub interactive: bool,
    pub vehicle: VehicleFeatures,
    pub pedestrians: Vec<PedestrianFeatures>,
    pub nearest_pedestrian: Option<NearestPedestrianLists>,
    pub psm: Option<PsmFeature>,
}

impl SceneFeatures {
    /// Whether a pedestrian was on the crosswalk or in its influenced area at any frame.
    pub fn pedestrian_near_crosswalk(&self) -> bool {
        self.pedestrians.iter().any(|p| {
            p.zones
                .iter()
                .any(|z| matches!(z, PedestrianZone::Crosswalk | PedestrianZone::Cia))
        })
    }

    pub fn mean_speed_kmh(&self) -> Option<f64> {
        let v = &self.vehicle.speed_kmh;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn vehicle_features(
    traj: &Trajectory,
    zones: &ZoneMap,
    calib: &Calibration,
    params: &FeatureParams,
) -> Result<VehicleFeatures, FeatureError> {
    let speed = speed_list(traj, calib)?;
    let filtered = low_pass(&speed, params.alpha);
    let point_zones = traj
        .points
        .iter()
        .map(|p| zones.vehicle_zone(p.world.xy()))
        .collect::<Result<Vec<_>, _>>()?;
    // A step belongs to the zone of the point it ends at.
    let step_zones = &point_zones[1..];

    let approach = if params.full_scene_acceleration {
        filtered.len()
    } else {
        step_zones
            .iter()
            .position(|z| *z != VehicleZone::BeforeCrosswalk)
            .unwrap_or(step_zones.len())
    };
    let acceleration = if approach >= 2 {
        acceleration_list(&filtered[..approach], params.epsilon_kmh)?
    } else {
        Vec::new()
    };
    let crosswalk_distance = crosswalk_distances(traj, zones);
    let stop = detect_stop(&filtered, step_zones, params.stop_tolerance_kmh, params.stop_min_steps);
    let stop_distance = stop.map(|w| {
        crosswalk_distance[w.first_step..=w.last_step + 1]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    });
    Ok(VehicleFeatures {
        object_id: traj.object_id,
        frames: traj.points.iter().map(|p| p.frame_index).collect(),
        acceleration_runs: run_length(&acceleration),
        acceleration,
        speed_kmh: speed,
        filtered_speed_kmh: filtered,
        zones: point_zones,
        crosswalk_distance_m: crosswalk_distance,
        stop: if stop.is_some() { StopFlag::Stop } else { StopFlag::NoStop },
        stop_distance_m: stop_distance,
    })
}

fn pedestrian_features(traj: &Trajectory, zones: &ZoneMap, calib: &Calibration) -> PedestrianFeatures {
    PedestrianFeatures {
        object_id: traj.object_id,
        frames: traj.points.iter().map(|p| p.frame_index).collect(),
        speed_kmh: speed_list(traj, calib).unwrap_or_default(),
        zones: traj
            .points
            .iter()
            .map(|p| zones.pedestrian_zone(p.world.xy()))
            .collect(),
    }
}

/// Features of one scene.
///
/// The vehicle track is clipped to the scene span; pedestrians overlapping the
/// span are described over that span. The safety margin is computed on the
/// pedestrians' full tracks, for the pedestrian that came closest to the
/// vehicle among those whose path crosses it.
pub fn extract_scene_features(
    spot_id: &str,
    scene: &SceneSpan,
    trajectories: &[Trajectory],
    zones: &ZoneMap,
    calib: &Calibration,
    params: &FeatureParams,
) -> Result<SceneFeatures, FeatureError> {
    let vehicle_full = trajectories
        .iter()
        .find(|t| t.object_id == scene.vehicle_track_hint && t.object_class == ObjectClass::Vehicle)
        .ok_or_else(|| FeatureError::UnknownVehicle(scene.scene_id.clone(), scene.vehicle_track_hint))?;
    let vehicle = vehicle_full.clipped(scene.frame_start, scene.frame_end);
    let vehicle_features = vehicle_features(&vehicle, zones, calib, params)?;

    let peds_full: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| t.object_class == ObjectClass::Pedestrian && t.overlaps(scene.frame_start, scene.frame_end))
        .collect();
    let peds_clipped: Vec<Trajectory> = peds_full
        .iter()
        .map(|t| t.clipped(scene.frame_start, scene.frame_end))
        .collect();
    let pedestrians = peds_clipped
        .iter()
        .map(|t| pedestrian_features(t, zones, calib))
        .collect();

    let clipped_refs: Vec<&Trajectory> = peds_clipped.iter().collect();
    let nearest = match nearest_pedestrian_lists(&vehicle, &clipped_refs) {
        Ok(lists) => Some(lists),
        Err(FeatureError::NoOverlap) => None,
        Err(e) => return Err(e),
    };

    let mut best: Option<(f64, PsmFeature)> = None;
    for (full, clipped) in peds_full.iter().zip(&peds_clipped) {
        let Ok(value) = psm(&vehicle, full) else {
            continue;
        };
        let closest = pair_distances(&vehicle, clipped)
            .map(|d| d.into_iter().map(|x| x.1).fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(d, _)| closest < *d) {
            best = Some((
                closest,
                PsmFeature {
                    pedestrian_id: full.object_id,
                    value,
                },
            ));
        }
    }

    Ok(SceneFeatures {
        scene_id: scene.scene_id.clone(),
        spot_id: spot_id.to_string(),
        frame_start: scene.frame_start,
        frame_end: scene.frame_end,
        interactive: scene.interactive,
        vehicle: vehicle_features,
        pedestrians,
        nearest_pedestrian: nearest,
        psm: best.map(|b| b.1),
    })
}
