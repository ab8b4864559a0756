//! Ground-plane calibration: pixel to world-meter projection and the
//! pixel/frame unit conversions used by the distance and speed features.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PixelPoint, SpotConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    #[error("point ({0}, {1}) maps to infinity")]
    PointAtInfinity(f64, f64),
    #[error("lengths must be positive (pixel {l_pixel}, world {l_world})")]
    NonPositiveLength { l_pixel: f64, l_world: f64 },
    #[error("frame skip and fps must be positive (skip {frame_skip}, fps {fps})")]
    NonPositiveRate { frame_skip: f64, fps: f64 },
    #[error("homography is singular")]
    Singular,
}

/// A pixel <-> world ground-plane point pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: [f64; 2],
    pub world: [f64; 2],
}

impl Correspondence {
    pub fn new(pixel: [f64; 2], world: [f64; 2]) -> Self {
        Self { pixel, world }
    }
}

/// A point on the world ground plane, meters, with its timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl WorldPoint {
    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// A 3x3 projective map between planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Homography(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Applies the map with perspective divide.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let h = &self.0;
        let v = h * Vector3::new(p[0], p[1], 1.0);
        let scale = h[(2, 0)].abs() * p[0].abs() + h[(2, 1)].abs() * p[1].abs() + h[(2, 2)].abs();
        if !(v.z.abs() > 1e-12 * scale) {
            return Err(GeometryError::PointAtInfinity(p[0], p[1]));
        }
        Ok([v.x / v.z, v.y / v.z])
    }

    pub fn inverse(&self) -> Result<Homography, GeometryError> {
        self.0
            .try_inverse()
            .map(|m| Homography(m).normalized())
            .ok_or(GeometryError::Singular)
    }

    /// Rescales so the bottom-right entry is 1 (or unit Frobenius norm when
    /// that entry vanishes).
    pub fn normalized(self) -> Homography {
        let m = self.0;
        let h33 = m[(2, 2)];
        if h33.abs() > 1e-12 * m.norm() {
            Homography(m / h33)
        } else {
            Homography(m / m.norm())
        }
    }
}

/// Output of [`fit_homography`].
#[derive(Debug, Clone, Copy)]
pub struct HomographyFit {
    /// Maps pixels to world meters.
    pub homography: Homography,
    /// RMS distance in pixels between the input pixel points and the world
    /// points mapped back through the inverse.
    pub reprojection_rms_px: f64,
}

fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) * 0.5
}

fn has_collinear_triple(points: &[[f64; 2]]) -> bool {
    let spread = points
        .iter()
        .flat_map(|p| points.iter().map(move |q| (p[0] - q[0]).hypot(p[1] - q[1])))
        .fold(0.0f64, f64::max);
    if spread == 0.0 {
        return true;
    }
    let tol = 1e-9 * spread * spread;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for k in j + 1..points.len() {
                if triangle_area(points[i], points[j], points[k]).abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
fn normalizer(points: &[[f64; 2]]) -> Result<Matrix3<f64>, GeometryError> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = points.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(GeometryError::DegenerateCalibration(
            "all points coincide".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(m: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = m * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Least-squares projective fit (normalized direct linear transform) mapping
/// each correspondence's pixel point onto its world point.
pub fn fit_homography(correspondences: &[Correspondence]) -> Result<HomographyFit, GeometryError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::DegenerateCalibration(format!(
            "need at least 4 correspondences, got {n}"
        )));
    }
    let pixels: Vec<[f64; 2]> = correspondences.iter().map(|c| c.pixel).collect();
    let worlds: Vec<[f64; 2]> = correspondences.iter().map(|c| c.world).collect();
    if n == 4 && (has_collinear_triple(&worlds) || has_collinear_triple(&pixels)) {
        return Err(GeometryError::DegenerateCalibration(
            "three of the four points are collinear".into(),
        ));
    }
    let t_px = normalizer(&pixels)?;
    let t_w = normalizer(&worlds)?;

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in correspondences.iter().enumerate() {
        let [x, y] = transform(&t_px, c.pixel);
        let [u, v] = transform(&t_w, c.world);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = order[0];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];
    if !(second > 1e-10 * largest) {
        return Err(GeometryError::DegenerateCalibration(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_w_inv = t_w.try_inverse().ok_or(GeometryError::Singular)?;
    let full = Homography(t_w_inv * hn * t_px).normalized();
    if full.0.determinant().abs() < 1e-300 {
        return Err(GeometryError::DegenerateCalibration("fitted map is singular".into()));
    }
    let inverse = full.inverse()?;
    let mut sq = 0.0;
    for c in correspondences {
        let back = inverse.apply(c.world)?;
        sq += (back[0] - c.pixel[0]).powi(2) + (back[1] - c.pixel[1]).powi(2);
    }
    Ok(HomographyFit {
        homography: full,
        reprojection_rms_px: (sq / n as f64).sqrt(),
    })
}

/// Pixels-per-meter constant from a known length seen in the image.
pub fn pixels_per_meter(l_pixel: f64, l_world: f64) -> Result<f64, GeometryError> {
    if !(l_pixel > 0.0 && l_world > 0.0) {
        return Err(GeometryError::NonPositiveLength { l_pixel, l_world });
    }
    Ok(l_pixel / l_world)
}

/// Seconds elapsed between two consecutive sampled frames.
pub fn seconds_per_step(frame_skip: f64, fps: f64) -> Result<f64, GeometryError> {
    if !(frame_skip > 0.0 && fps > 0.0) {
        return Err(GeometryError::NonPositiveRate { frame_skip, fps });
    }
    Ok(frame_skip / fps)
}

/// Immutable per-spot calibration.
///
/// World coordinates come from the homography when one was fitted. Spots
/// configured only with a crosswalk pixel length fall back to a scalar
/// conversion, `world = pixel / pixels_per_meter`.
#[derive(Debug, Clone)]
pub struct Calibration {
    homography: Option<Homography>,
    inverse: Option<Homography>,
    pub pixels_per_meter: f64,
    pub seconds_per_step: f64,
    pub fps: f64,
    pub frame_skip: u32,
    pub reprojection_rms_px: Option<f64>,
}

impl Calibration {
    pub fn with_homography(
        homography: Homography,
        pixels_per_meter: f64,
        frame_skip: u32,
        fps: f64,
    ) -> Result<Self, GeometryError> {
        let inverse = homography.inverse()?;
        Ok(Self {
            homography: Some(homography),
            inverse: Some(inverse),
            pixels_per_meter,
            seconds_per_step: seconds_per_step(frame_skip as f64, fps)?,
            fps,
            frame_skip,
            reprojection_rms_px: None,
        })
    }

    pub fn scalar(pixels_per_meter: f64, frame_skip: u32, fps: f64) -> Result<Self, GeometryError> {
        if !(pixels_per_meter > 0.0) {
            return Err(GeometryError::NonPositiveLength {
                l_pixel: pixels_per_meter,
                l_world: 1.0,
            });
        }
        Ok(Self {
            homography: None,
            inverse: None,
            pixels_per_meter,
            seconds_per_step: seconds_per_step(frame_skip as f64, fps)?,
            fps,
            frame_skip,
            reprojection_rms_px: None,
        })
    }

    pub fn from_spot(spot: &SpotConfig) -> Result<Self, GeometryError> {
        let scalar_ppm = spot
            .crosswalk_length_px
            .map(|px| pixels_per_meter(px, spot.crosswalk_length_m))
            .transpose()?;
        if spot.calibration.is_empty() {
            let ppm = scalar_ppm.ok_or_else(|| {
                GeometryError::DegenerateCalibration(
                    "no correspondences and no crosswalk pixel length".into(),
                )
            })?;
            return Self::scalar(ppm, spot.frame_skip, spot.fps);
        }
        let fit = fit_homography(&spot.calibration)?;
        let ppm = match scalar_ppm {
            Some(p) => p,
            None => local_pixels_per_meter(&fit.homography, spot)?,
        };
        let mut calib = Self::with_homography(fit.homography, ppm, spot.frame_skip, spot.fps)?;
        calib.reprojection_rms_px = Some(fit.reprojection_rms_px);
        Ok(calib)
    }

    pub fn homography(&self) -> Option<&Homography> {
        self.homography.as_ref()
    }

    pub fn has_homography(&self) -> bool {
        self.homography.is_some()
    }

    pub fn frame_time(&self, frame_index: u64) -> f64 {
        frame_index as f64 / self.fps
    }

    /// Ground-plane position of a pixel, without a timestamp.
    pub fn to_world(&self, px: PixelPoint) -> Result<[f64; 2], GeometryError> {
        match &self.homography {
            Some(h) => h.apply([px.x, px.y]),
            None => Ok([px.x / self.pixels_per_meter, px.y / self.pixels_per_meter]),
        }
    }

    /// Image position of a ground-plane point.
    pub fn to_pixel(&self, world: [f64; 2]) -> Result<PixelPoint, GeometryError> {
        match &self.inverse {
            Some(h) => h.apply(world).map(|[x, y]| PixelPoint::new(x, y)),
            None => Ok(PixelPoint::new(
                world[0] * self.pixels_per_meter,
                world[1] * self.pixels_per_meter,
            )),
        }
    }

    pub fn project(&self, px: PixelPoint, frame_index: u64) -> Result<WorldPoint, GeometryError> {
        let [x, y] = self.to_world(px)?;
        Ok(WorldPoint {
            x,
            y,
            t: self.frame_time(frame_index),
        })
    }
}

/// Pixel length of one meter along the approach direction at the crosswalk
/// center, for spots that only supply correspondences.
fn local_pixels_per_meter(h: &Homography, spot: &SpotConfig) -> Result<f64, GeometryError> {
    let pts: Vec<[f64; 2]> = if spot.crosswalk_polygon_world.is_empty() {
        spot.calibration.iter().map(|c| c.world).collect()
    } else {
        spot.crosswalk_polygon_world.clone()
    };
    let n = pts.len() as f64;
    let c = [
        pts.iter().map(|p| p[0]).sum::<f64>() / n,
        pts.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let [dx, dy] = spot.approach_direction_world.unwrap_or([1.0, 0.0]);
    let norm = dx.hypot(dy);
    let inv = h.inverse()?;
    let a = inv.apply([c[0] - 0.5 * dx / norm, c[1] - 0.5 * dy / norm])?;
    let b = inv.apply([c[0] + 0.5 * dx / norm, c[1] + 0.5 * dy / norm])?;
    let ppm = (a[0] - b[0]).hypot(a[1] - b[1]);
    if !(ppm > 0.0) {
        return Err(GeometryError::DegenerateCalibration(
            "zero local pixel scale".into(),
        ));
    }
    Ok(ppm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square(offset: [f64; 2]) -> Vec<Correspondence> {
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
            .iter()
            .map(|&p| Correspondence::new(p, [p[0] + offset[0], p[1] + offset[1]]))
            .collect()
    }

    fn assert_proportional(h: &Homography, expected: [[f64; 3]; 3]) {
        let m = h.0 / h.0[(2, 2)];
        for r in 0..3 {
            for c in 0..3 {
                assert!((m[(r, c)] - expected[r][c]).abs() < 1e-12, "{m}");
            }
        }
    }

    #[test]
    fn unit_square_fits_identity() {
        let fit = fit_homography(&square([0.0, 0.0])).unwrap();
        assert_proportional(&fit.homography, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(fit.reprojection_rms_px < 1e-12);
    }

    #[test]
    fn translated_square_fits_translation() {
        let fit = fit_homography(&square([5.0, 0.0])).unwrap();
        assert_proportional(&fit.homography, [[1.0, 0.0, 5.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let calib = Calibration::with_homography(fit.homography, 1.0, 1, 25.0).unwrap();
        let [x, y] = calib.to_world(PixelPoint::new(1.0, 1.0)).unwrap();
        assert_relative_eq!(x, 6.0, epsilon = 1e-12);
        assert_relative_eq!(y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn collinear_world_points_are_degenerate() {
        let c = vec![
            Correspondence::new([0.0, 0.0], [0.0, 0.0]),
            Correspondence::new([1.0, 0.0], [1.0, 0.0]),
            Correspondence::new([2.0, 0.1], [2.0, 0.0]),
            Correspondence::new([0.0, 1.0], [0.0, 1.0]),
        ];
        assert!(matches!(fit_homography(&c), Err(GeometryError::DegenerateCalibration(_))));
        assert!(matches!(
            fit_homography(&c[..3]),
            Err(GeometryError::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn identity_projection() {
        let calib = Calibration::with_homography(Homography::identity(), 1.0, 1, 25.0).unwrap();
        let w = calib.project(PixelPoint::new(3.0, 4.0), 50).unwrap();
        assert_eq!((w.x, w.y), (3.0, 4.0));
        assert_relative_eq!(w.t, 2.0);
    }

    #[test]
    fn vanishing_line_maps_to_infinity() {
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]);
        assert!(matches!(h.apply([-1.0, 5.0]), Err(GeometryError::PointAtInfinity(..))));
        assert!(h.apply([1.0, 5.0]).is_ok());
    }

    #[test]
    fn pixel_per_meter_quotient() {
        assert_eq!(pixels_per_meter(960.0, 15.0).unwrap(), 64.0);
        assert_eq!(pixels_per_meter(100.0, 100.0).unwrap(), 1.0);
        assert!(matches!(
            pixels_per_meter(100.0, 0.0),
            Err(GeometryError::NonPositiveLength { .. })
        ));
    }

    #[test]
    fn step_interval() {
        assert_relative_eq!(seconds_per_step(5.0, 11.0).unwrap(), 5.0 / 11.0);
        assert_relative_eq!(seconds_per_step(1.0, 25.0).unwrap(), 0.04);
        assert!(matches!(
            seconds_per_step(1.0, 0.0),
            Err(GeometryError::NonPositiveRate { .. })
        ));
    }

    #[test]
    fn oblique_fit_reproduces_inputs() {
        let truth = Homography::from_rows([
            [0.04, 0.01, -20.0],
            [0.002, 0.09, -30.0],
            [0.00001, 0.0009, 1.0],
        ]);
        let pixels = [
            [100.0, 200.0],
            [1100.0, 210.0],
            [1200.0, 700.0],
            [50.0, 690.0],
            [640.0, 400.0],
            [300.0, 500.0],
        ];
        let corr: Vec<_> = pixels
            .iter()
            .map(|&p| Correspondence::new(p, truth.apply(p).unwrap()))
            .collect();
        let fit = fit_homography(&corr).unwrap();
        assert!(fit.reprojection_rms_px < 1e-9, "{}", fit.reprojection_rms_px);
        for &p in &pixels {
            let a = fit.homography.apply(p).unwrap();
            let b = truth.apply(p).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }
}
