use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PoseError;
use crate::geometry::{ImageSize, LandmarkSet6, Point2};

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image: ImageSize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image: ImageSize) -> Result<Self, PoseError> {
        let w = image.width as f64;
        let h = image.height as f64;
        if image.width == 0 || image.height == 0 {
            return Err(PoseError::InvalidDimensions);
        }
        if !(fx > 0.0 && fy > 0.0) || !(0.0..=w).contains(&cx) || !(0.0..=h).contains(&cy) {
            return Err(PoseError::InvalidCamera);
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            image,
        })
    }

    /// Maps a camera-frame point to pixels. Model y is up, image y is down.
    #[inline]
    pub fn to_pixel(&self, x: &Vector3<f64>) -> Point2 {
        Point2::new(
            self.fx * x.x / x.z + self.cx,
            -self.fy * x.y / x.z + self.cy,
        )
    }
}

/// Uncalibrated camera: focal length equal to the image width, principal
/// point at the image center.
pub fn default_camera(width: u32, height: u32) -> Result<CameraModel, PoseError> {
    if width == 0 || height == 0 {
        return Err(PoseError::InvalidDimensions);
    }
    CameraModel::new(
        width as f64,
        width as f64,
        width as f64 / 2.0,
        height as f64 / 2.0,
        ImageSize::new(width, height),
    )
}

/// Six face points in millimetres, nose tip at the origin, y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceModel3D {
    pub left_eye: [f64; 3],
    pub right_eye: [f64; 3],
    pub nose: [f64; 3],
    pub mouth_left: [f64; 3],
    pub mouth_right: [f64; 3],
    pub chin: [f64; 3],
}

impl Default for FaceModel3D {
    fn default() -> Self {
        Self::canonical()
    }
}

impl FaceModel3D {
    /// Generic adult face with eye centres rather than eye corners.
    pub const fn canonical() -> Self {
        Self {
            left_eye: [-135.0, 170.0, -135.0],
            right_eye: [135.0, 170.0, -135.0],
            nose: [0.0, 0.0, 0.0],
            mouth_left: [-150.0, -150.0, -125.0],
            mouth_right: [150.0, -150.0, -125.0],
            chin: [0.0, -330.0, -65.0],
        }
    }

    /// Builds a model from rows in solver order and validates it.
    pub fn from_rows(rows: [[f64; 3]; 6]) -> Result<Self, PoseError> {
        let m = Self {
            left_eye: rows[0],
            right_eye: rows[1],
            nose: rows[2],
            mouth_left: rows[3],
            mouth_right: rows[4],
            chin: rows[5],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn rows(&self) -> [[f64; 3]; 6] {
        [
            self.left_eye,
            self.right_eye,
            self.nose,
            self.mouth_left,
            self.mouth_right,
            self.chin,
        ]
    }

    pub fn points(&self) -> [Vector3<f64>; 6] {
        self.rows().map(Vector3::from)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let pts = self.points();
        if pts.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(PoseError::InvalidModel("non-finite coordinate"));
        }
        let mirrored = |a: [f64; 3], b: [f64; 3]| {
            (a[0] + b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9 && (a[2] - b[2]).abs() < 1e-9
        };
        if !mirrored(self.left_eye, self.right_eye) || !mirrored(self.mouth_left, self.mouth_right) {
            return Err(PoseError::InvalidModel(
                "left and right points must mirror across x = 0",
            ));
        }
        let mean = pts.iter().sum::<Vector3<f64>>() / 6.0;
        let mut scatter = Matrix3::zeros();
        for p in &pts {
            let d = p - mean;
            scatter += d * d.transpose();
        }
        let eig = scatter.symmetric_eigenvalues();
        let max = eig.amax();
        if eig.iter().any(|&e| e <= 1e-9 * max) {
            return Err(PoseError::InvalidModel("points are coplanar"));
        }
        Ok(())
    }
}

/// Projects arbitrary model points under a pose.
pub fn project_points(
    points: &[Vector3<f64>],
    rotation: &Matrix3<f64>,
    tvec: &Vector3<f64>,
    cam: &CameraModel,
) -> Result<Vec<Point2>, PoseError> {
    points
        .iter()
        .map(|p| {
            let x = rotation * p + tvec;
            if x.z <= 0.0 {
                Err(PoseError::BehindCamera)
            } else {
                Ok(cam.to_pixel(&x))
            }
        })
        .collect()
}

/// Forward pinhole model for the six face points.
pub fn project(
    model: &FaceModel3D,
    rvec: &Vector3<f64>,
    tvec: &Vector3<f64>,
    cam: &CameraModel,
) -> Result<LandmarkSet6, PoseError> {
    let r = super::rotation::rodrigues(rvec);
    let p = project_points(&model.points(), &r, tvec, cam)?;
    Ok(LandmarkSet6::from_points([p[0], p[1], p[2], p[3], p[4], p[5]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_camera_definition() {
        let c = default_camera(640, 480).unwrap();
        assert_eq!((c.fx, c.fy, c.cx, c.cy), (640.0, 640.0, 320.0, 240.0));
        let c = default_camera(1920, 1080).unwrap();
        assert_eq!((c.fx, c.fy, c.cx, c.cy), (1920.0, 1920.0, 960.0, 540.0));
        assert!(matches!(default_camera(0, 480), Err(PoseError::InvalidDimensions)));
    }

    #[test]
    fn nose_projects_to_principal_point() {
        let cam = default_camera(640, 480).unwrap();
        let six = project(
            &FaceModel3D::canonical(),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1000.0),
            &cam,
        )
        .unwrap();
        assert_eq!(six.nose, Point2::new(320.0, 240.0));
        let six = project(
            &FaceModel3D::canonical(),
            &Vector3::zeros(),
            &Vector3::new(100.0, 0.0, 1000.0),
            &cam,
        )
        .unwrap();
        assert_eq!(six.nose, Point2::new(384.0, 240.0));
        // model y up maps to image y down
        assert!(six.chin.y > six.nose.y && six.left_eye.y < six.nose.y);
    }

    #[test]
    fn behind_camera() {
        let cam = default_camera(640, 480).unwrap();
        let r = project(
            &FaceModel3D::canonical(),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 100.0),
            &cam,
        );
        assert!(matches!(r, Err(PoseError::BehindCamera)));
    }

    #[test]
    fn canonical_model_is_valid() {
        FaceModel3D::canonical().validate().unwrap();
        let mut flat = FaceModel3D::canonical().rows();
        for r in flat.iter_mut() {
            r[2] = 0.0;
        }
        assert!(FaceModel3D::from_rows(flat).is_err());
        let mut asym = FaceModel3D::canonical().rows();
        asym[0][1] += 3.0;
        assert!(FaceModel3D::from_rows(asym).is_err());
    }

    #[test]
    fn doubling_depth_halves_extent_for_fronto_parallel_points() {
        // exact only when every point sits at the same depth
        let cam = default_camera(640, 480).unwrap();
        let pts: Vec<Vector3<f64>> = FaceModel3D::canonical()
            .points()
            .iter()
            .map(|p| Vector3::new(p.x, p.y, 0.0))
            .collect();
        let extent = |z: f64| {
            let p = project_points(&pts, &Matrix3::identity(), &Vector3::new(0.0, 0.0, z), &cam).unwrap();
            let xs = p.iter().map(|q| q.x);
            let ys = p.iter().map(|q| q.y);
            (
                xs.clone().fold(f64::MIN, f64::max) - xs.fold(f64::MAX, f64::min),
                ys.clone().fold(f64::MIN, f64::max) - ys.fold(f64::MAX, f64::min),
            )
        };
        for z in [600.0, 1000.0, 1500.0] {
            let (w1, h1) = extent(z);
            let (w2, h2) = extent(2.0 * z);
            assert!((w1 - 2.0 * w2).abs() < 1e-9 * w1);
            assert!((h1 - 2.0 * h2).abs() < 1e-9 * h1);
        }
    }
}
