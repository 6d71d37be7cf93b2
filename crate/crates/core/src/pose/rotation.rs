//! Axis-angle and Tait-Bryan conversions.
//!
//! Head angles use `R = Rx(pitch) · Ry(yaw) · Rz(roll)`: pitch about the
//! lateral x axis (nodding), yaw about the vertical y axis (turning) and roll
//! about the optical z axis (tilting). Yaw is confined to [−90°, 90°].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PoseError;

/// Below this |cos(yaw)| the decomposition takes the gimbal-lock branch.
const GIMBAL_EPS: f64 = 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl EulerAngles {
    pub const fn new(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Self {
        Self {
            yaw_deg,
            pitch_deg,
            roll_deg,
        }
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(self.yaw_deg, self.pitch_deg, self.roll_deg)
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Composes head angles (degrees) into a rotation matrix.
pub fn euler_to_rotation(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Matrix3<f64> {
    rot_x(pitch_deg.to_radians()) * rot_y(yaw_deg.to_radians()) * rot_z(roll_deg.to_radians())
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle vector to rotation matrix.
pub fn rodrigues(rvec: &Vector3<f64>) -> Matrix3<f64> {
    let theta = rvec.norm();
    if theta < 1e-12 {
        return Matrix3::identity();
    }
    let k = skew(&(rvec / theta));
    Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Inverse of [`rodrigues`]; returns an angle in [0, π].
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) / 2.0;
    let sin_t = w.norm();
    let cos_t = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = sin_t.atan2(cos_t);
    if sin_t > 1e-4 {
        return w * (theta / sin_t);
    }
    if cos_t > 0.0 {
        // near identity: theta ≈ sin theta
        return w;
    }
    // near π the skew part vanishes; recover the axis from the symmetric part,
    // (R + Rᵀ)/2 − cos θ·I = (1 − cos θ)·a·aᵀ
    let s = (r + r.transpose()) / 2.0 - Matrix3::identity() * cos_t;
    let i = (0..3)
        .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = s.column(i).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Decomposes a rotation into yaw/pitch/roll in degrees.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Result<EulerAngles, PoseError> {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if !(ortho <= ORTHONORMAL_TOL) || !((det - 1.0).abs() <= ORTHONORMAL_TOL) {
        return Err(PoseError::NotARotation);
    }
    let yaw = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let (pitch, roll) = if yaw.cos().abs() > GIMBAL_EPS {
        (
            (-r[(1, 2)]).atan2(r[(2, 2)]),
            (-r[(0, 1)]).atan2(r[(0, 0)]),
        )
    } else if yaw > 0.0 {
        // only pitch + roll is observable; attribute it all to pitch
        (r[(1, 0)].atan2(r[(1, 1)]), 0.0)
    } else {
        // only pitch − roll is observable
        ((-r[(1, 0)]).atan2(r[(1, 1)]), 0.0)
    };
    Ok(EulerAngles::new(
        yaw.to_degrees(),
        pitch.to_degrees(),
        roll.to_degrees(),
    ))
}
