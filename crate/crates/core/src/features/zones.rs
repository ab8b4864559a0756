//! Ground-plane zone classification and the polygon helpers behind it.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::ingest::SpotConfig;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleZone {
    #[serde(rename = "before crosswalk")]
    BeforeCrosswalk,
    #[serde(rename = "on crosswalk")]
    OnCrosswalk,
    #[serde(rename = "after crosswalk")]
    AfterCrosswalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PedestrianZone {
    #[serde(rename = "sidewalk")]
    Sidewalk,
    #[serde(rename = "crosswalk")]
    Crosswalk,
    #[serde(rename = "CIA")]
    Cia,
    #[serde(rename = "road")]
    Road,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn edges(poly: &[Point]) -> impl Iterator<Item = (Point, Point)> + '_ {
    (0..poly.len()).map(move |i| (poly[i], poly[(i + 1) % poly.len()]))
}

/// Euclidean distance from `p` to segment `ab`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let u = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + u * ab[0], a[1] + u * ab[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Even-odd containment; points on an edge count as inside.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let mut inside = false;
    for (a, b) in edges(poly) {
        if point_segment_distance(p, a, b) <= 1e-12 {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance to the polygon: zero inside, otherwise to the nearest edge.
pub fn distance_to_polygon(p: Point, poly: &[Point]) -> f64 {
    if point_in_polygon(p, poly) {
        return 0.0;
    }
    edges(poly)
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Closed-segment intersection test, touching included.
pub fn segments_touch(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d = sub(p2, p1);
    let e = sub(q2, q1);
    let denom = cross(d, e);
    let w = sub(q1, p1);
    if denom.abs() < 1e-15 {
        if cross(w, d).abs() > 1e-12 {
            return false;
        }
        let len2 = dot(d, d);
        if len2 == 0.0 {
            return point_segment_distance(p1, q1, q2) <= 1e-12;
        }
        let s0 = dot(w, d) / len2;
        let s1 = dot(sub(q2, p1), d) / len2;
        return s0.min(s1) <= 1.0 && s0.max(s1) >= 0.0;
    }
    let s = cross(w, e) / denom;
    let u = cross(w, d) / denom;
    (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&u)
}

fn segment_meets_polygon(a: Point, b: Point, poly: &[Point]) -> bool {
    point_in_polygon(a, poly)
        || point_in_polygon(b, poly)
        || edges(poly).any(|(c, d)| segments_touch(a, b, c, d))
}

fn unit(v: Point) -> Option<Point> {
    let n = v[0].hypot(v[1]);
    (n > 0.0 && n.is_finite()).then(|| [v[0] / n, v[1] / n])
}

/// Zone geometry for one spot, prepared once per scene.
#[derive(Debug, Clone)]
pub struct ZoneMap {
    crosswalk: Vec<Point>,
    sidewalks: Vec<Vec<Point>>,
    direction: Option<Point>,
    buffer_m: f64,
    extent: Option<(f64, f64)>,
}

impl ZoneMap {
    pub fn new(
        crosswalk: Vec<Point>,
        sidewalks: Vec<Vec<Point>>,
        approach_direction: Option<Point>,
        buffer_m: f64,
    ) -> Result<Self, FeatureError> {
        if crosswalk.len() < 3 {
            return Err(FeatureError::MissingPolygons);
        }
        let direction = approach_direction.and_then(unit);
        let extent = direction.map(|d| {
            crosswalk
                .iter()
                .map(|&p| dot(p, d))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
        });
        Ok(Self {
            crosswalk,
            sidewalks,
            direction,
            buffer_m,
            extent,
        })
    }

    pub fn from_spot(spot: &SpotConfig) -> Result<Self, FeatureError> {
        Self::new(
            spot.crosswalk_polygon_world.clone(),
            spot.sidewalk_polygons_world.clone(),
            spot.approach_direction_world,
            spot.cia_buffer_m,
        )
    }

    pub fn crosswalk(&self) -> &[Point] {
        &self.crosswalk
    }

    /// Side of the crosswalk along the direction of travel.
    pub fn vehicle_zone(&self, p: Point) -> Result<VehicleZone, FeatureError> {
        let (d, (lo, hi)) = self
            .direction
            .zip(self.extent)
            .ok_or(FeatureError::MissingPolygons)?;
        let s = dot(p, d);
        Ok(if s < lo {
            VehicleZone::BeforeCrosswalk
        } else if s > hi {
            VehicleZone::AfterCrosswalk
        } else {
            VehicleZone::OnCrosswalk
        })
    }

    /// Whether `p` lies within the buffer of the crosswalk along the road axis.
    pub fn in_cia(&self, p: Point) -> bool {
        let Some(d) = self.direction else {
            return false;
        };
        let b = self.buffer_m;
        let a = [p[0] - b * d[0], p[1] - b * d[1]];
        let c = [p[0] + b * d[0], p[1] + b * d[1]];
        segment_meets_polygon(a, c, &self.crosswalk)
    }

    pub fn pedestrian_zone(&self, p: Point) -> PedestrianZone {
        if point_in_polygon(p, &self.crosswalk) {
            PedestrianZone::Crosswalk
        } else if self.sidewalks.iter().any(|s| point_in_polygon(p, s)) {
            PedestrianZone::Sidewalk
        } else if self.in_cia(p) {
            PedestrianZone::Cia
        } else {
            PedestrianZone::Road
        }
    }

    pub fn crosswalk_distance(&self, p: Point) -> f64 {
        distance_to_polygon(p, &self.crosswalk)
    }
}
