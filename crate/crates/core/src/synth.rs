//! Scripted detection streams with exact ground truth.
//!
//! The canonical face model is posed per frame, projected, and reported as a
//! five-landmark detection (the chin is withheld) with a box around the
//! projected model. Eye and mouth crops are drawn as two-band (open) or flat
//! (closed) patches at the ROI geometry the pipeline computes.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{OpenState, RoiImage};
use crate::config::CameraSpec;
use crate::detections::{DetectionFrame, FaceDetection, LandmarksJson, Patch, RoiPatches};
use crate::geometry::{eye_roi, mouth_roi, EyeSide, ImageSize, Landmarks5, Point2, RoiRect};
use crate::pose::{euler_to_rotation, project_points, FaceModel3D, PoseError};

const DETECTION_CONF: f64 = 0.99;
const CLOSED_GRAY: u8 = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("frame {frame} (t={t_ms} ms): {source}")]
    Projection { frame: u64, t_ms: u64, source: PoseError },
}

fn zero2() -> [f64; 2] {
    [0.0, 0.0]
}

fn open() -> OpenState {
    OpenState::Open
}

fn closed() -> OpenState {
    OpenState::Closed
}

/// Angles move linearly from the first to the second value over the segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default = "zero2")]
    pub yaw: [f64; 2],
    #[serde(default = "zero2")]
    pub pitch: [f64; 2],
    #[serde(default = "zero2")]
    pub roll: [f64; 2],
    #[serde(default = "open")]
    pub eye: OpenState,
    #[serde(default = "closed")]
    pub mouth: OpenState,
}

impl Segment {
    pub fn still(start_ms: u64, end_ms: u64) -> Self {
        Self {
            start_ms,
            end_ms,
            yaw: zero2(),
            pitch: zero2(),
            roll: zero2(),
            eye: OpenState::Open,
            mouth: OpenState::Closed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub fps: f64,
    pub duration_ms: u64,
    #[serde(default = "default_image_size")]
    pub image_size: [u32; 2],
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default = "default_tvec")]
    pub base_tvec: [f64; 3],
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub noise_px: f64,
    #[serde(default)]
    pub dropout: Vec<[u64; 2]>,
    #[serde(default)]
    pub seed: u64,
    /// Box margin added on every side, as a fraction of the projected extent.
    #[serde(default = "default_inflation")]
    pub bbox_inflation: f64,
}

fn default_image_size() -> [u32; 2] {
    [640, 480]
}

fn default_tvec() -> [f64; 3] {
    [0.0, 0.0, 1000.0]
}

fn default_inflation() -> f64 {
    0.25
}

/// Exact pose and states of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub frame: u64,
    pub t_ms: u64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub eye: OpenState,
    pub mouth: OpenState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub detections: Vec<DetectionFrame>,
    pub truth: Vec<TruthFrame>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let s: Self = serde_json::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn image(&self) -> ImageSize {
        ImageSize::new(self.image_size[0], self.image_size[1])
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive".into());
        }
        if self.duration_ms == 0 {
            return bad("duration_ms must be positive".into());
        }
        if !(self.noise_px >= 0.0 && self.noise_px.is_finite()) {
            return bad("noise_px must be ≥ 0".into());
        }
        if !(self.bbox_inflation >= 0.0 && self.bbox_inflation.is_finite()) {
            return bad("bbox_inflation must be ≥ 0".into());
        }
        if self.base_tvec.iter().any(|v| !v.is_finite()) {
            return bad("base_tvec must be finite".into());
        }
        self.camera
            .resolve(self.image())
            .map_err(|e| SynthError::Invalid(e.to_string()))?;
        let mut cursor = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.end_ms <= s.start_ms {
                return bad(format!("segment {i} is empty"));
            }
            if s.start_ms < cursor {
                return bad(format!("segment {i} overlaps the previous segment"));
            }
            if s.start_ms > cursor {
                return bad(format!("gap before segment {i} ({cursor}..{} ms)", s.start_ms));
            }
            if [s.yaw, s.pitch, s.roll].iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("segment {i} has non-finite angles"));
            }
            cursor = s.end_ms;
        }
        if cursor != self.duration_ms {
            return bad(format!("segments cover 0..{cursor} ms, duration is {} ms", self.duration_ms));
        }
        if let Some(d) = self.dropout.iter().find(|d| d[1] <= d[0]) {
            return bad(format!("dropout {d:?} is empty"));
        }
        Ok(())
    }

    /// Timestamps `round(i · 1000 / fps)` below the duration.
    pub fn frame_times(&self) -> Vec<u64> {
        (0u64..)
            .map(|i| (i as f64 * 1000.0 / self.fps).round() as u64)
            .take_while(|&t| t < self.duration_ms)
            .collect()
    }

    fn truth_at(&self, frame: u64, t: u64) -> TruthFrame {
        let s = self
            .segments
            .iter()
            .find(|s| (s.start_ms..s.end_ms).contains(&t))
            .expect("validated segments cover the stream");
        let a = (t - s.start_ms) as f64 / (s.end_ms - s.start_ms) as f64;
        let lerp = |v: [f64; 2]| v[0] + (v[1] - v[0]) * a;
        TruthFrame {
            frame,
            t_ms: t,
            yaw: lerp(s.yaw),
            pitch: lerp(s.pitch),
            roll: lerp(s.roll),
            eye: s.eye,
            mouth: s.mouth,
        }
    }

    fn in_dropout(&self, t: u64) -> bool {
        self.dropout.iter().any(|d| (d[0]..d[1]).contains(&t))
    }
}

fn patch_for(roi: Option<RoiRect>, state: OpenState) -> Option<Patch> {
    let r = roi?;
    let (w, h) = (r.width() as usize, r.height() as usize);
    let img = match state {
        OpenState::Open => RoiImage::two_band(r.kind, w, h, 0, 255),
        _ => RoiImage::uniform(r.kind, w, h, CLOSED_GRAY),
    };
    Some(Patch::from_image(&img))
}

/// Renders the scenario. Deterministic for a given scenario and seed.
pub fn generate(scn: &Scenario) -> Result<SynthOutput, SynthError> {
    scn.validate()?;
    let image = scn.image();
    let cam = scn.camera.resolve(image).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let model = FaceModel3D::canonical().points();
    let tvec = Vector3::from(scn.base_tvec);
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let noise = Normal::new(0.0, scn.noise_px).map_err(|e| SynthError::Invalid(e.to_string()))?;

    let mut out = SynthOutput {
        detections: Vec::new(),
        truth: Vec::new(),
    };
    for (i, t) in scn.frame_times().into_iter().enumerate() {
        let frame = i as u64;
        let truth = scn.truth_at(frame, t);
        let r = euler_to_rotation(truth.yaw, truth.pitch, truth.roll);
        let px = project_points(&model, &r, &tvec, &cam).map_err(|source| SynthError::Projection {
            frame,
            t_ms: t,
            source,
        })?;
        // draw noise for every frame so dropouts do not shift later frames
        let mut jitter = || Point2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        let mut noisy = |p: Point2| {
            let j = jitter();
            Point2::new(p.x + j.x, p.y + j.y)
        };
        let lm = Landmarks5 {
            left_eye: noisy(px[0]),
            right_eye: noisy(px[1]),
            nose: noisy(px[2]),
            mouth_left: noisy(px[3]),
            mouth_right: noisy(px[4]),
        };

        let faces = if scn.in_dropout(t) {
            Vec::new()
        } else {
            let (x0, x1) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.x), a.1.max(p.x)));
            let (y0, y1) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.y), a.1.max(p.y)));
            let (w, h) = (x1 - x0, y1 - y0);
            let m = scn.bbox_inflation;
            let mut face = FaceDetection {
                bbox: [x0 - m * w, y0 - m * h, w * (1.0 + 2.0 * m), h * (1.0 + 2.0 * m)],
                conf: DETECTION_CONF,
                lm: LandmarksJson::from(&lm),
                roi: None,
            };
            if let Ok(obs) = face.to_observation(frame, t, image) {
                face.roi = Some(RoiPatches {
                    le: patch_for(eye_roi(&obs, EyeSide::Left, image).ok(), truth.eye),
                    re: patch_for(eye_roi(&obs, EyeSide::Right, image).ok(), truth.eye),
                    mouth: patch_for(mouth_roi(&obs, image).ok(), truth.mouth),
                });
            }
            vec![face]
        };
        out.detections.push(DetectionFrame { frame, t_ms: t, faces });
        out.truth.push(truth);
    }
    Ok(out)
}

pub fn truth_line(t: &TruthFrame) -> String {
    serde_json::to_string(t).expect("truth frame serializes")
}
