//! Constant-velocity Kalman filter over (x, y, vx, vy), pixels and pixels per
//! sampled step, with position-only measurements.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanModel {
    /// Acceleration noise spectral density, px^2 per step^4 scale.
    pub process_noise: f64,
    /// Measurement variance, px^2.
    pub measurement_noise: f64,
}

impl Default for KalmanModel {
    fn default() -> Self {
        Self {
            process_noise: 1.0,
            measurement_noise: 2.0,
        }
    }
}

/// Initial velocity variance for a freshly spawned track, (px/step)^2.
const SPAWN_VELOCITY_VARIANCE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

fn measurement_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

impl KalmanState {
    pub fn new(mean: Vector4<f64>, covariance: Matrix4<f64>) -> Self {
        Self { mean, covariance }
    }

    /// State for a track seen once: known position, unknown velocity.
    pub fn spawn(x: f64, y: f64, model: &KalmanModel) -> Self {
        let r = model.measurement_noise;
        Self {
            mean: Vector4::new(x, y, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::new(
                r,
                r,
                SPAWN_VELOCITY_VARIANCE,
                SPAWN_VELOCITY_VARIANCE,
            )),
        }
    }

    /// Two-point initiation: velocity from the displacement between the
    /// first two measurements taken `dt` steps apart.
    pub fn from_two_points(first: [f64; 2], second: [f64; 2], dt: f64, model: &KalmanModel) -> Self {
        let r = model.measurement_noise;
        let vx = (second[0] - first[0]) / dt;
        let vy = (second[1] - first[1]) / dt;
        let (pv, cross) = (2.0 * r / (dt * dt), r / dt);
        let mut p = Matrix4::zeros();
        for axis in 0..2 {
            p[(axis, axis)] = r;
            p[(axis + 2, axis + 2)] = pv;
            p[(axis, axis + 2)] = cross;
            p[(axis + 2, axis)] = cross;
        }
        Self {
            mean: Vector4::new(second[0], second[1], vx, vy),
            covariance: p,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.mean[0], self.mean[1]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.mean[2], self.mean[3]]
    }

    /// Propagates `dt` steps under constant velocity.
    pub fn predict(&self, model: &KalmanModel, dt: f64) -> KalmanState {
        let f = Matrix4::new(
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let q = model.process_noise;
        let (a, b, c) = (dt.powi(4) / 4.0, dt.powi(3) / 2.0, dt * dt);
        let noise = Matrix4::new(
            a, 0.0, b, 0.0, //
            0.0, a, 0.0, b, //
            b, 0.0, c, 0.0, //
            0.0, b, 0.0, c,
        ) * q;
        KalmanState {
            mean: f * self.mean,
            covariance: symmetrize(&(f * self.covariance * f.transpose() + noise)),
        }
    }

    /// Measurement update on position, Joseph form.
    pub fn update(&self, measurement: [f64; 2], model: &KalmanModel) -> KalmanState {
        let h = measurement_matrix();
        let r = Matrix2::identity() * model.measurement_noise;
        let s = h * self.covariance * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return *self;
        };
        let k: Matrix4x2<f64> = self.covariance * h.transpose() * s_inv;
        let innovation = Vector2::new(measurement[0], measurement[1]) - h * self.mean;
        let i_kh = Matrix4::identity() - k * h;
        KalmanState {
            mean: self.mean + k * innovation,
            covariance: symmetrize(&(i_kh * self.covariance * i_kh.transpose() + k * r * k.transpose())),
        }
    }
}
