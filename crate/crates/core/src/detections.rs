//! Per-frame face detections, one JSON object per line.
//!
//! Each face may carry pre-cropped grayscale patches under `"roi"` keyed by
//! `"le"`, `"re"` and `"mouth"`; a detector front-end that owns the video
//! frame fills them using this crate's ROI geometry.

use std::io::BufRead;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::RoiImage;
use crate::geometry::{BBox, FaceObservation, GeometryError, ImageSize, Landmarks5, Point2, RoiKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("read error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarksJson {
    pub le: [f64; 2],
    pub re: [f64; 2],
    pub nose: [f64; 2],
    pub ml: [f64; 2],
    pub mr: [f64; 2],
}

impl From<&LandmarksJson> for Landmarks5 {
    fn from(l: &LandmarksJson) -> Self {
        let p = |a: [f64; 2]| Point2::new(a[0], a[1]);
        Landmarks5 {
            left_eye: p(l.le),
            right_eye: p(l.re),
            nose: p(l.nose),
            mouth_left: p(l.ml),
            mouth_right: p(l.mr),
        }
    }
}

impl From<&Landmarks5> for LandmarksJson {
    fn from(l: &Landmarks5) -> Self {
        let a = |p: Point2| [p.x, p.y];
        LandmarksJson {
            le: a(l.left_eye),
            re: a(l.right_eye),
            nose: a(l.nose),
            ml: a(l.mouth_left),
            mr: a(l.mouth_right),
        }
    }
}

/// Row-major 8-bit grayscale crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub w: usize,
    pub h: usize,
    pub px_b64: String,
}

impl Patch {
    pub fn from_image(img: &RoiImage) -> Self {
        Self {
            w: img.width,
            h: img.height,
            px_b64: base64::engine::general_purpose::STANDARD.encode(&img.pixels),
        }
    }

    pub fn decode(&self, kind: RoiKind) -> Result<RoiImage, String> {
        let px = base64::engine::general_purpose::STANDARD
            .decode(&self.px_b64)
            .map_err(|e| format!("bad px_b64: {e}"))?;
        RoiImage::new(kind, self.w, self.h, px).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiPatches {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub le: Option<Patch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<Patch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mouth: Option<Patch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceDetection {
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub conf: f64,
    pub lm: LandmarksJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<RoiPatches>,
}

impl FaceDetection {
    pub fn to_observation(
        &self,
        frame: u64,
        t_ms: u64,
        image: ImageSize,
    ) -> Result<FaceObservation, GeometryError> {
        let [x, y, w, h] = self.bbox;
        FaceObservation::new(
            BBox::new(x, y, w, h),
            Landmarks5::from(&self.lm),
            self.conf,
            frame,
            t_ms,
            image,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFrame {
    pub frame: u64,
    pub t_ms: u64,
    pub faces: Vec<FaceDetection>,
}

impl DetectionFrame {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("detection frame serializes")
    }
}

pub fn parse_line(line: &str, line_no: usize) -> Result<DetectionFrame, DetectionError> {
    serde_json::from_str(line).map_err(|e| DetectionError::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

/// Streams frames from a reader, skipping blank lines. Line numbers are 1-based.
pub fn read_detections<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, DetectionFrame), DetectionError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(DetectionError::Io(e.to_string()))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_line(&l, i + 1).map(|f| (i + 1, f))),
        })
}
