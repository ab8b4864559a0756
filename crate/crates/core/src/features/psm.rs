//! Pedestrian safety margin: the signed gap between the vehicle's and the
//! pedestrian's arrival at the point where their paths cross.
//!
//! Conflicts are found with a sign-change scan. For pedestrian segment `i`
//! with supporting line `f_i`, a vehicle step `C_k -> C_k+1` crosses it when
//! `f_i(C_k) * f_i(C_k+1) <= 0`; the same test with the roles exchanged
//! confirms that the crossing lies within the pedestrian segment.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::geometry::WorldPoint;
use crate::tracker::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsmValue {
    /// Vehicle arrival minus pedestrian arrival, interpolated within the steps.
    pub seconds: f64,
    /// Same gap measured between the starting samples of the crossing steps.
    pub step_seconds: f64,
    /// Conflict point; `t` is the pedestrian's arrival time.
    pub conflict_point: WorldPoint,
    pub pedestrian_arrival_s: f64,
    pub vehicle_arrival_s: f64,
    pub ped_step_index: usize,
    pub vehicle_step_index: usize,
}

fn side(a: &WorldPoint, b: &WorldPoint, p: &WorldPoint) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Fraction along `a -> b` where the sign change happens, if it happens.
fn crossing(fa: f64, fb: f64) -> Option<f64> {
    if fa * fb > 0.0 || (fa == 0.0 && fb == 0.0) {
        return None;
    }
    Some(fa / (fa - fb))
}

/// PSM over two sequences of timestamped ground points. The first crossing
/// in vehicle-step-major order wins.
pub fn psm_points(vehicle: &[WorldPoint], pedestrian: &[WorldPoint]) -> Result<PsmValue, FeatureError> {
    if vehicle.len() < 2 || pedestrian.len() < 2 {
        return Err(FeatureError::TooShort {
            needed: 2,
            got: vehicle.len().min(pedestrian.len()),
        });
    }
    for k in 0..vehicle.len() - 1 {
        let (c0, c1) = (&vehicle[k], &vehicle[k + 1]);
        if c0.x == c1.x && c0.y == c1.y {
            continue;
        }
        for i in 0..pedestrian.len() - 1 {
            let (p0, p1) = (&pedestrian[i], &pedestrian[i + 1]);
            if p0.x == p1.x && p0.y == p1.y {
                continue;
            }
            let Some(mu) = crossing(side(p0, p1, c0), side(p0, p1, c1)) else {
                continue;
            };
            let Some(lambda) = crossing(side(c0, c1, p0), side(c0, c1, p1)) else {
                continue;
            };
            let t_veh = c0.t + mu * (c1.t - c0.t);
            let t_ped = p0.t + lambda * (p1.t - p0.t);
            return Ok(PsmValue {
                seconds: t_veh - t_ped,
                step_seconds: c0.t - p0.t,
                conflict_point: WorldPoint {
                    x: c0.x + mu * (c1.x - c0.x),
                    y: c0.y + mu * (c1.y - c0.y),
                    t: t_ped,
                },
                pedestrian_arrival_s: t_ped,
                vehicle_arrival_s: t_veh,
                ped_step_index: i,
                vehicle_step_index: k,
            });
        }
    }
    Err(FeatureError::NoConflict)
}

/// PSM between a vehicle and a pedestrian trajectory, on raw ground points.
pub fn psm(vehicle: &Trajectory, pedestrian: &Trajectory) -> Result<PsmValue, FeatureError> {
    let v: Vec<WorldPoint> = vehicle.world().copied().collect();
    let p: Vec<WorldPoint> = pedestrian.world().copied().collect();
    psm_points(&v, &p)
}
