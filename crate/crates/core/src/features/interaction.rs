//! Vehicle-pedestrian distances and relative positions.

use serde::{Deserialize, Serialize};

use super::zones::ZoneMap;
use super::FeatureError;
use crate::tracker::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelativePosition {
    Front,
    Behind,
}

/// Per-frame distance in meters over the frames both objects were observed.
pub fn pair_distances(vehicle: &Trajectory, pedestrian: &Trajectory) -> Result<Vec<(u64, f64)>, FeatureError> {
    let out: Vec<(u64, f64)> = vehicle
        .points
        .iter()
        .filter_map(|v| {
            pedestrian
                .point_at(v.frame_index)
                .map(|p| (v.frame_index, v.world.distance(&p.world)))
        })
        .collect();
    if out.is_empty() {
        return Err(FeatureError::NoOverlap);
    }
    Ok(out)
}

/// Distance from each vehicle point to the crosswalk polygon.
pub fn crosswalk_distances(vehicle: &Trajectory, zones: &ZoneMap) -> Vec<f64> {
    vehicle
        .points
        .iter()
        .map(|p| zones.crosswalk_distance(p.world.xy()))
        .collect()
}

/// Unit heading at every point, from the smoothed ground positions.
///
/// A point's heading is the direction to the next point (the last point uses
/// the step into it). Stationary steps reuse the last known heading; a
/// stationary start borrows the first heading that exists.
pub fn vehicle_headings(vehicle: &Trajectory) -> Result<Vec<[f64; 2]>, FeatureError> {
    let pts = &vehicle.points;
    let step = |j: usize| -> Option<[f64; 2]> {
        let (a, b) = (pts.get(j)?.smoothed_world, pts.get(j + 1)?.smoothed_world);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let n = dx.hypot(dy);
        (n > 1e-12).then(|| [dx / n, dy / n])
    };
    let raw: Vec<Option<[f64; 2]>> = (0..pts.len())
        .map(|j| if j + 1 < pts.len() { step(j) } else { j.checked_sub(1).and_then(step) })
        .collect();
    let first = raw.iter().flatten().next().copied().ok_or(FeatureError::ZeroHeading)?;
    let mut last = first;
    Ok(raw
        .into_iter()
        .map(|h| {
            if let Some(h) = h {
                last = h;
            }
            last
        })
        .collect())
}

/// Front when the pedestrian is strictly ahead of the vehicle point along its heading.
pub fn relative_position(vehicle: [f64; 2], heading: [f64; 2], pedestrian: [f64; 2]) -> RelativePosition {
    let d = (pedestrian[0] - vehicle[0]) * heading[0] + (pedestrian[1] - vehicle[1]) * heading[1];
    if d > 0.0 {
        RelativePosition::Front
    } else {
        RelativePosition::Behind
    }
}

pub fn relative_positions(
    vehicle: &Trajectory,
    pedestrian: &Trajectory,
) -> Result<Vec<(u64, RelativePosition)>, FeatureError> {
    let headings = vehicle_headings(vehicle)?;
    let out: Vec<_> = vehicle
        .points
        .iter()
        .zip(&headings)
        .filter_map(|(v, h)| {
            pedestrian
                .point_at(v.frame_index)
                .map(|p| (v.frame_index, relative_position(v.world.xy(), *h, p.world.xy())))
        })
        .collect();
    if out.is_empty() {
        return Err(FeatureError::NoOverlap);
    }
    Ok(out)
}

/// Frame-aligned lists against whichever pedestrian is nearest in each frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NearestPedestrianLists {
    pub frames: Vec<u64>,
    pub pedestrian_ids: Vec<u64>,
    pub distance_m: Vec<f64>,
    pub relative_position: Vec<RelativePosition>,
}

pub fn nearest_pedestrian_lists(
    vehicle: &Trajectory,
    pedestrians: &[&Trajectory],
) -> Result<NearestPedestrianLists, FeatureError> {
    let headings = vehicle_headings(vehicle)?;
    let mut out = NearestPedestrianLists::default();
    for (v, h) in vehicle.points.iter().zip(&headings) {
        let nearest = pedestrians
            .iter()
            .filter_map(|ped| {
                ped.point_at(v.frame_index)
                    .map(|p| (v.world.distance(&p.world), ped.object_id, p.world.xy()))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((d, id, p)) = nearest {
            out.frames.push(v.frame_index);
            out.pedestrian_ids.push(id);
            out.distance_m.push(d);
            out.relative_position.push(relative_position(v.world.xy(), *h, p));
        }
    }
    if out.frames.is_empty() {
        return Err(FeatureError::NoOverlap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WorldPoint;
    use crate::ingest::{ObjectClass, PixelPoint};
    use crate::tracker::TrackPoint;
    use proptest::prelude::*;

    fn world_traj(id: u64, class: ObjectClass, pts: &[(u64, f64, f64)]) -> Trajectory {
        Trajectory {
            object_id: id,
            object_class: class,
            points: pts
                .iter()
                .map(|&(f, x, y)| {
                    let w = WorldPoint { x, y, t: f as f64 * 0.1 };
                    TrackPoint {
                        frame_index: f,
                        detection_id: format!("{id}-{f}"),
                        raw_px: PixelPoint::new(x, y),
                        smoothed_px: PixelPoint::new(x, y),
                        world: w,
                        smoothed_world: w,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn three_four_five() {
        let v = world_traj(0, ObjectClass::Vehicle, &[(0, 0.0, 0.0)]);
        let p = world_traj(1, ObjectClass::Pedestrian, &[(0, 3.0, 4.0)]);
        assert_eq!(pair_distances(&v, &p).unwrap(), vec![(0, 5.0)]);
        let q = world_traj(2, ObjectClass::Pedestrian, &[(0, 0.0, 0.0)]);
        assert_eq!(pair_distances(&v, &q).unwrap(), vec![(0, 0.0)]);
        let r = world_traj(3, ObjectClass::Pedestrian, &[(4, 0.0, 0.0)]);
        assert!(matches!(pair_distances(&v, &r), Err(FeatureError::NoOverlap)));
    }

    #[test]
    fn approach_decreases_distance() {
        let v = world_traj(0, ObjectClass::Vehicle, &(0..10).map(|f| (f, f as f64, 0.0)).collect::<Vec<_>>());
        let p = world_traj(1, ObjectClass::Pedestrian, &(0..10).map(|f| (f, 20.0, 3.0)).collect::<Vec<_>>());
        let d: Vec<f64> = pair_distances(&v, &p).unwrap().into_iter().map(|x| x.1).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ahead_and_behind() {
        assert_eq!(relative_position([0.0, 0.0], [1.0, 0.0], [5.0, 0.0]), RelativePosition::Front);
        assert_eq!(relative_position([0.0, 0.0], [1.0, 0.0], [-5.0, 0.0]), RelativePosition::Behind);
    }

    #[test]
    fn stationary_vehicle_has_no_heading() {
        let v = world_traj(0, ObjectClass::Vehicle, &[(0, 1.0, 1.0), (1, 1.0, 1.0)]);
        assert!(matches!(vehicle_headings(&v), Err(FeatureError::ZeroHeading)));
    }

    #[test]
    fn stop_carries_heading() {
        let v = world_traj(
            0,
            ObjectClass::Vehicle,
            &[(0, 0.0, 0.0), (1, 0.0, 0.0), (2, 1.0, 0.0), (3, 1.0, 0.0), (4, 1.0, 0.0)],
        );
        let h = vehicle_headings(&v).unwrap();
        assert!(h.iter().all(|h| *h == [1.0, 0.0]));
    }

    #[test]
    fn nearest_pedestrian_is_chosen_per_frame() {
        let v = world_traj(0, ObjectClass::Vehicle, &(0..4).map(|f| (f, f as f64 * 4.0, 0.0)).collect::<Vec<_>>());
        let a = world_traj(1, ObjectClass::Pedestrian, &(0..4).map(|f| (f, 2.0, 1.0)).collect::<Vec<_>>());
        let b = world_traj(2, ObjectClass::Pedestrian, &(0..4).map(|f| (f, 10.0, 1.0)).collect::<Vec<_>>());
        let lists = nearest_pedestrian_lists(&v, &[&a, &b]).unwrap();
        // Oracle: pairwise distances, minimum per frame.
        for (j, f) in lists.frames.iter().enumerate() {
            let vp = v.point_at(*f).unwrap().world;
            let da = vp.distance(&a.point_at(*f).unwrap().world);
            let db = vp.distance(&b.point_at(*f).unwrap().world);
            assert_eq!(lists.distance_m[j], da.min(db));
            assert_eq!(lists.pedestrian_ids[j], if da <= db { 1 } else { 2 });
        }
        assert_eq!(lists.pedestrian_ids, vec![1, 1, 2, 2]);
    }

    proptest! {
        #[test]
        fn pass_by_flips_once(
            speed in 0.5f64..3.0,
            lateral in -6.0f64..6.0,
            ped_x in 5.0f64..40.0,
            heading in 0.0f64..std::f64::consts::TAU,
        ) {
            let (c, s) = (heading.cos(), heading.sin());
            let rot = |x: f64, y: f64| (c * x - s * y, s * x + c * y);
            let vpts: Vec<_> = (0..60u64)
                .map(|f| { let (x, y) = rot(f as f64 * speed, 0.0); (f, x, y) })
                .collect();
            let (px, py) = rot(ped_x + 0.25, lateral);
            let ppts: Vec<_> = (0..60u64).map(|f| (f, px, py)).collect();
            prop_assume!((ped_x + 0.25) < 59.0 * speed);
            let v = world_traj(0, ObjectClass::Vehicle, &vpts);
            let p = world_traj(1, ObjectClass::Pedestrian, &ppts);
            let rel: Vec<_> = relative_positions(&v, &p).unwrap().into_iter().map(|r| r.1).collect();
            let flips = rel.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert_eq!(rel[0], RelativePosition::Front);
            prop_assert_eq!(flips, 1);
            prop_assert_eq!(*rel.last().unwrap(), RelativePosition::Behind);
        }
    }
}
