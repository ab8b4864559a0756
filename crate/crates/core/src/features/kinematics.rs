//! Speed lists, low-pass smoothing, acceleration states and stop detection.

use serde::{Deserialize, Serialize};

use super::{FeatureError, VehicleZone};
use crate::geometry::Calibration;
use crate::tracker::Trajectory;

pub const MS_TO_KMH: f64 = 3.6;

/// Per-step speeds in km/h, one per pair of consecutive trajectory points.
///
/// Distances come from the ground-plane projection when the spot has a
/// homography, otherwise from the pixel distance divided by the
/// pixels-per-meter constant. The time of a step is the timestamp difference,
/// so steps bridging a coasting gap are not overestimated.
pub fn speed_list(traj: &Trajectory, calib: &Calibration) -> Result<Vec<f64>, FeatureError> {
    if traj.points.len() < 2 {
        return Err(FeatureError::TooShort {
            needed: 2,
            got: traj.points.len(),
        });
    }
    Ok(traj
        .points
        .windows(2)
        .map(|w| {
            let dt = w[1].world.t - w[0].world.t;
            let meters = if calib.has_homography() {
                w[0].world.distance(&w[1].world)
            } else {
                w[0].raw_px.distance(&w[1].raw_px) / calib.pixels_per_meter
            };
            meters / dt * MS_TO_KMH
        })
        .collect())
}

/// Exponential smoothing, `y[t] = alpha * x[t] + (1 - alpha) * y[t-1]`, `y[0] = x[0]`.
pub fn low_pass(speeds: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(speeds.len());
    let mut prev = None;
    for &x in speeds {
        let y = match prev {
            None => x,
            Some(p) => alpha * x + (1.0 - alpha) * p,
        };
        out.push(y);
        prev = Some(y);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccelState {
    #[serde(rename = "acc")]
    Acc,
    #[serde(rename = "dec")]
    Dec,
    #[serde(rename = "nc")]
    Nc,
}

/// Slope of the filtered speeds classified with a dead-band of `epsilon` km/h per step.
pub fn acceleration_list(filtered: &[f64], epsilon: f64) -> Result<Vec<AccelState>, FeatureError> {
    if filtered.len() < 2 {
        return Err(FeatureError::TooShort {
            needed: 2,
            got: filtered.len(),
        });
    }
    Ok(filtered
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            if d > epsilon {
                AccelState::Acc
            } else if d < -epsilon {
                AccelState::Dec
            } else {
                AccelState::Nc
            }
        })
        .collect())
}

/// Collapses repeated consecutive states, e.g. `[acc, acc, nc, acc]` to `[acc, nc, acc]`.
pub fn run_length(states: &[AccelState]) -> Vec<AccelState> {
    let mut out: Vec<AccelState> = Vec::new();
    for &s in states {
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

/// A detected stop: the inclusive range of step indices below tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopWindow {
    pub first_step: usize,
    pub last_step: usize,
}

/// First run of at least `min_steps` consecutive speeds under `tolerance_kmh`
/// while the vehicle is before the crosswalk. `zones[j]` is the zone of step `j`.
pub fn detect_stop(
    speeds: &[f64],
    zones: &[VehicleZone],
    tolerance_kmh: f64,
    min_steps: usize,
) -> Option<StopWindow> {
    let min_steps = min_steps.max(1);
    let mut run_start = None;
    let mut best: Option<StopWindow> = None;
    for (j, (&v, &z)) in speeds.iter().zip(zones).enumerate() {
        if v < tolerance_kmh && z == VehicleZone::BeforeCrosswalk {
            let start = *run_start.get_or_insert(j);
            if j + 1 - start >= min_steps {
                match &mut best {
                    Some(w) if w.first_step == start => w.last_step = j,
                    None => {
                        best = Some(StopWindow {
                            first_step: start,
                            last_step: j,
                        })
                    }
                    Some(_) => {}
                }
            }
        } else {
            run_start = None;
            if best.is_some() {
                break;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ObjectClass, PixelPoint};
    use crate::tracker::TrackPoint;
    use proptest::prelude::*;
    use VehicleZone::*;

    fn px_traj(points: &[(f64, f64)], calib: &Calibration) -> Trajectory {
        Trajectory {
            object_id: 0,
            object_class: ObjectClass::Vehicle,
            points: points
                .iter()
                .enumerate()
                .map(|(j, &(x, y))| {
                    let frame = j as u64 * calib.frame_skip as u64;
                    let px = PixelPoint::new(x, y);
                    let w = calib.project(px, frame).unwrap();
                    TrackPoint {
                        frame_index: frame,
                        detection_id: format!("d{j}"),
                        raw_px: px,
                        smoothed_px: px,
                        world: w,
                        smoothed_world: w,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn speed_from_pixel_scale() {
        // 64 px per meter, 0.2 s per step, 64 px per step: 5 m/s.
        let calib = Calibration::scalar(64.0, 1, 5.0).unwrap();
        let t = px_traj(&[(0.0, 0.0), (64.0, 0.0), (128.0, 0.0)], &calib);
        let v = speed_list(&t, &calib).unwrap();
        assert_eq!(v.len(), 2);
        for s in v {
            assert!((s - 18.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_is_zero() {
        let calib = Calibration::scalar(10.0, 1, 10.0).unwrap();
        let t = px_traj(&[(5.0, 5.0); 4], &calib);
        assert_eq!(speed_list(&t, &calib).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn single_point_is_too_short() {
        let calib = Calibration::scalar(10.0, 1, 10.0).unwrap();
        let t = px_traj(&[(5.0, 5.0)], &calib);
        assert!(matches!(speed_list(&t, &calib), Err(FeatureError::TooShort { .. })));
    }

    #[test]
    fn low_pass_impulse_decays_geometrically() {
        let y = low_pass(&[0.0, 1.0, 0.0, 0.0, 0.0], 0.5);
        assert_eq!(y, vec![0.0, 0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(low_pass(&[3.0, 1.0, 4.0], 1.0), vec![3.0, 1.0, 4.0]);
        assert_eq!(low_pass(&[7.0; 5], 0.3), vec![7.0; 5]);
    }

    #[test]
    fn acceleration_states() {
        let rising: Vec<f64> = (0..5).map(|j| j as f64 * 2.0).collect();
        assert_eq!(acceleration_list(&rising, 0.5).unwrap(), vec![AccelState::Acc; 4]);
        assert_eq!(acceleration_list(&[9.0; 4], 0.5).unwrap(), vec![AccelState::Nc; 3]);
        let creeping: Vec<f64> = (0..5).map(|j| j as f64 * 0.25).collect();
        assert_eq!(acceleration_list(&creeping, 0.5).unwrap(), vec![AccelState::Nc; 4]);
        let mixed = acceleration_list(&[0.0, 2.0, 4.0, 4.1, 6.0], 0.5).unwrap();
        assert_eq!(run_length(&mixed), vec![AccelState::Acc, AccelState::Nc, AccelState::Acc]);
    }

    #[test]
    fn stop_in_window_before_crosswalk() {
        let speeds = [20.0, 10.0, 0.5, 0.5, 0.5, 0.5, 8.0, 20.0];
        let zones = [BeforeCrosswalk; 8];
        let w = detect_stop(&speeds, &zones, 2.0, 3).unwrap();
        assert_eq!((w.first_step, w.last_step), (2, 5));
        assert!(detect_stop(&[20.0; 8], &zones, 2.0, 3).is_none());
        let after = [AfterCrosswalk; 8];
        assert!(detect_stop(&speeds, &after, 2.0, 3).is_none());
        let short = [20.0, 0.5, 0.5, 20.0];
        assert!(detect_stop(&short, &zones[..4], 2.0, 3).is_none());
    }

    proptest! {
        #[test]
        fn acceleration_is_shift_invariant(
            speeds in prop::collection::vec(0.0f64..80.0, 2..40),
            shift in -20.0f64..20.0,
            alpha in 0.05f64..1.0,
        ) {
            let base = acceleration_list(&low_pass(&speeds, alpha), 0.5).unwrap();
            let moved: Vec<f64> = speeds.iter().map(|v| v + shift).collect();
            let shifted = acceleration_list(&low_pass(&moved, alpha), 0.5).unwrap();
            let diffs_base: Vec<f64> = low_pass(&speeds, alpha).windows(2).map(|w| w[1] - w[0]).collect();
            // Differences that sit on the dead-band edge may round either way.
            for ((a, b), d) in base.iter().zip(&shifted).zip(diffs_base) {
                if (d.abs() - 0.5).abs() > 1e-9 {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn reversed_trajectory_reverses_speeds(
            pts in prop::collection::vec((0.0f64..1000.0, 0.0f64..700.0), 2..30),
        ) {
            let calib = Calibration::scalar(20.0, 2, 10.0).unwrap();
            let fwd = speed_list(&px_traj(&pts, &calib), &calib).unwrap();
            let rev_pts: Vec<_> = pts.iter().rev().cloned().collect();
            let mut rev = speed_list(&px_traj(&rev_pts, &calib), &calib).unwrap();
            rev.reverse();
            // Step durations come from differences of frame timestamps.
            for (a, b) in fwd.iter().zip(&rev) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn unit_alpha_is_identity(xs in prop::collection::vec(-100.0f64..100.0, 0..50)) {
            prop_assert_eq!(low_pass(&xs, 1.0), xs);
        }
    }
}
