//! Face observations, the derived chin landmark and eye/mouth regions of interest.
//!
//! ROI sizes are fixed fractions of the face bounding box: an eye covers
//! 20% of the face width and 15% of its height, the mouth 30% and 15%.
//! Because the fractions are relative to the box, the crops scale with the
//! subject's distance from the camera.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eye ROI width as a fraction of the face bounding box width.
pub const EYE_WIDTH_FRACTION: f64 = 0.20;
/// Eye ROI height as a fraction of the face bounding box height.
pub const EYE_HEIGHT_FRACTION: f64 = 0.15;
/// Mouth ROI width as a fraction of the face bounding box width.
pub const MOUTH_WIDTH_FRACTION: f64 = 0.30;
/// Mouth ROI height as a fraction of the face bounding box height.
pub const MOUTH_HEIGHT_FRACTION: f64 = 0.15;

/// Extrapolation factor from the eye-line/mouth-line midpoints to the chin.
///
/// Taken from the canonical 3D face model: eye line at y=+170, mouth line at
/// y=−150 and chin at y=−330, so (330 − 150) / (170 + 150).
pub const DEFAULT_CHIN_K: f64 = 0.5625;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate face: eye and mouth midpoints are {0:.3} px apart")]
    DegenerateFace(f64),
    #[error("degenerate ROI: clamping to the image left zero area")]
    DegenerateRoi,
    #[error("invalid observation: {0}")]
    InvalidObservation(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    fn clamp(self, p: Point2) -> Point2 {
        Point2::new(
            p.x.clamp(0.0, self.width as f64),
            p.y.clamp(0.0, self.height as f64),
        )
    }
}

/// Axis-aligned face box, top-left origin, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// The five detector landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks5 {
    pub left_eye: Point2,
    pub right_eye: Point2,
    pub nose: Point2,
    pub mouth_left: Point2,
    pub mouth_right: Point2,
}

impl Landmarks5 {
    pub fn points(&self) -> [Point2; 5] {
        [
            self.left_eye,
            self.right_eye,
            self.nose,
            self.mouth_left,
            self.mouth_right,
        ]
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Landmarks5 {
        Landmarks5 {
            left_eye: f(self.left_eye),
            right_eye: f(self.right_eye),
            nose: f(self.nose),
            mouth_left: f(self.mouth_left),
            mouth_right: f(self.mouth_right),
        }
    }

    pub fn eye_midpoint(&self) -> Point2 {
        self.left_eye.midpoint(self.right_eye)
    }

    pub fn mouth_midpoint(&self) -> Point2 {
        self.mouth_left.midpoint(self.mouth_right)
    }
}

/// One detected face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceObservation {
    pub bbox: BBox,
    pub landmarks: Landmarks5,
    pub confidence: f64,
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

impl FaceObservation {
    /// Validates the box and confidence and clamps landmarks into the image.
    pub fn new(
        bbox: BBox,
        landmarks: Landmarks5,
        confidence: f64,
        frame_index: u64,
        timestamp_ms: u64,
        image: ImageSize,
    ) -> Result<Self, GeometryError> {
        if !(bbox.width > 0.0 && bbox.height > 0.0) || !bbox.x.is_finite() || !bbox.y.is_finite()
        {
            return Err(GeometryError::InvalidObservation(
                "bbox width and height must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidObservation(
                "confidence must lie in [0, 1]",
            ));
        }
        if !landmarks.points().iter().all(|p| p.is_finite()) {
            return Err(GeometryError::InvalidObservation(
                "landmarks must be finite",
            ));
        }
        Ok(Self {
            bbox,
            landmarks: landmarks.map(|p| image.clamp(p)),
            confidence,
            frame_index,
            timestamp_ms,
        })
    }
}

/// The six image points handed to the pose solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet6 {
    pub left_eye: Point2,
    pub right_eye: Point2,
    pub nose: Point2,
    pub mouth_left: Point2,
    pub mouth_right: Point2,
    pub chin: Point2,
}

impl LandmarkSet6 {
    /// Points in solver order: left eye, right eye, nose, mouth left, mouth right, chin.
    pub fn points(&self) -> [Point2; 6] {
        [
            self.left_eye,
            self.right_eye,
            self.nose,
            self.mouth_left,
            self.mouth_right,
            self.chin,
        ]
    }

    pub fn from_points(p: [Point2; 6]) -> Self {
        Self {
            left_eye: p[0],
            right_eye: p[1],
            nose: p[2],
            mouth_left: p[3],
            mouth_right: p[4],
            chin: p[5],
        }
    }

    pub fn five(&self) -> Landmarks5 {
        Landmarks5 {
            left_eye: self.left_eye,
            right_eye: self.right_eye,
            nose: self.nose,
            mouth_left: self.mouth_left,
            mouth_right: self.mouth_right,
        }
    }
}

/// Chin extrapolated along the eye-to-mouth axis: `m + k·(m − e)`.
pub fn chin_from_midpoints(eye_mid: Point2, mouth_mid: Point2, k: f64) -> Point2 {
    Point2::new(
        mouth_mid.x + k * (mouth_mid.x - eye_mid.x),
        mouth_mid.y + k * (mouth_mid.y - eye_mid.y),
    )
}

/// Adds the calculated chin point to the five detected landmarks.
pub fn derive_chin(obs: &FaceObservation, k: f64) -> Result<LandmarkSet6, GeometryError> {
    derive_chin_from(&obs.landmarks, k)
}

pub fn derive_chin_from(lm: &Landmarks5, k: f64) -> Result<LandmarkSet6, GeometryError> {
    let e = lm.eye_midpoint();
    let m = lm.mouth_midpoint();
    let axis = e.distance(m);
    if !(axis >= 1.0) {
        return Err(GeometryError::DegenerateFace(axis));
    }
    Ok(LandmarkSet6 {
        left_eye: lm.left_eye,
        right_eye: lm.right_eye,
        nose: lm.nose,
        mouth_left: lm.mouth_left,
        mouth_right: lm.mouth_right,
        chin: chin_from_midpoints(e, m, k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiKind {
    Eye,
    Mouth,
}

impl RoiKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RoiKind::Eye => "eye",
            RoiKind::Mouth => "mouth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EyeSide {
    #[default]
    Left,
    Right,
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub kind: RoiKind,
}

impl RoiRect {
    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    fn clamped(self, image: ImageSize) -> Result<RoiRect, GeometryError> {
        let w = image.width as i64;
        let h = image.height as i64;
        let r = RoiRect {
            x0: self.x0.clamp(0, w),
            y0: self.y0.clamp(0, h),
            x1: self.x1.clamp(0, w),
            y1: self.y1.clamp(0, h),
            kind: self.kind,
        };
        if r.x1 > r.x0 && r.y1 > r.y0 {
            Ok(r)
        } else {
            Err(GeometryError::DegenerateRoi)
        }
    }
}

/// Rounds to the nearest integer, halves toward +∞.
fn round_px(v: f64) -> i64 {
    let f = v.floor();
    (if v - f >= 0.5 { f + 1.0 } else { f }) as i64
}

fn centered_rect(center: Point2, width: i64, height: i64, kind: RoiKind) -> RoiRect {
    let hw = width as f64 / 2.0;
    let hh = height as f64 / 2.0;
    RoiRect {
        x0: round_px(center.x - hw),
        y0: round_px(center.y - hh),
        x1: round_px(center.x + hw),
        y1: round_px(center.y + hh),
        kind,
    }
}

/// Eye rectangle before clamping to the image.
pub fn eye_roi_unclamped(obs: &FaceObservation, which: EyeSide) -> RoiRect {
    let center = match which {
        EyeSide::Left => obs.landmarks.left_eye,
        EyeSide::Right => obs.landmarks.right_eye,
    };
    centered_rect(
        center,
        round_px(EYE_WIDTH_FRACTION * obs.bbox.width),
        round_px(EYE_HEIGHT_FRACTION * obs.bbox.height),
        RoiKind::Eye,
    )
}

/// Mouth rectangle before clamping to the image.
pub fn mouth_roi_unclamped(obs: &FaceObservation) -> RoiRect {
    centered_rect(
        obs.landmarks.mouth_midpoint(),
        round_px(MOUTH_WIDTH_FRACTION * obs.bbox.width),
        round_px(MOUTH_HEIGHT_FRACTION * obs.bbox.height),
        RoiKind::Mouth,
    )
}

pub fn eye_roi(
    obs: &FaceObservation,
    which: EyeSide,
    image: ImageSize,
) -> Result<RoiRect, GeometryError> {
    eye_roi_unclamped(obs, which).clamped(image)
}

pub fn mouth_roi(obs: &FaceObservation, image: ImageSize) -> Result<RoiRect, GeometryError> {
    mouth_roi_unclamped(obs).clamped(image)
}

/// Picks the single face to track: highest confidence, then larger box,
/// then earliest in the list.
pub fn select_face(candidates: &[FaceObservation]) -> Option<&FaceObservation> {
    let mut best: Option<&FaceObservation> = None;
    for c in candidates {
        best = match best {
            None => Some(c),
            Some(b) => {
                let better = c.confidence > b.confidence
                    || (c.confidence == b.confidence && c.bbox.area() > b.bbox.area());
                Some(if better { c } else { b })
            }
        };
    }
    best
}
