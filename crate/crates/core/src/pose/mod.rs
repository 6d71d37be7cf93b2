//! Head pose from six image landmarks.

mod model;
mod rotation;
mod solver;

pub use model::{default_camera, project, project_points, CameraModel, FaceModel3D};
pub use rotation::{
    euler_to_rotation, rodrigues, rot_x, rot_y, rot_z, rotation_log, rotation_to_euler, skew,
    EulerAngles,
};
pub use solver::{solve_pnp, ChinModel, PnpSolver, Refinement, ReprojectionProblem, SolverParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Estimated head pose in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    /// Axis-angle rotation, radians.
    pub rvec: [f64; 3],
    /// Translation, millimetres.
    pub tvec: [f64; 3],
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub reproj_rms_px: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl HeadPose {
    pub fn angles(&self) -> EulerAngles {
        EulerAngles::new(self.yaw_deg, self.pitch_deg, self.roll_deg)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("image dimensions must be positive")]
    InvalidDimensions,
    #[error("camera intrinsics out of range")]
    InvalidCamera,
    #[error("invalid face model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid solver input: {0}")]
    InvalidInput(&'static str),
    #[error("point projects from behind the camera")]
    BehindCamera,
    #[error("estimated pose places the face behind the camera")]
    SolutionBehindCamera(Box<HeadPose>),
    #[error("matrix is not a proper rotation")]
    NotARotation,
    /// Carries the best iterate when there was one to report.
    #[error("pose solver did not converge")]
    NoConvergence(Option<Box<HeadPose>>),
}
