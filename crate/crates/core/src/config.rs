//! Pipeline configuration file (JSON). Every key is optional.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::EventConfig;
use crate::geometry::{EyeSide, ImageSize, DEFAULT_CHIN_K};
use crate::pose::{default_camera, CameraModel, FaceModel3D, SolverParams};
use crate::recorder::{Format, HoldPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// `"auto"` for the default camera of the image size, or explicit intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraSpec {
    Named(String),
    Intrinsics(Intrinsics),
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec::Named("auto".into())
    }
}

impl CameraSpec {
    pub fn resolve(&self, image: ImageSize) -> Result<CameraModel, ConfigError> {
        let cam = match self {
            CameraSpec::Named(n) if n == "auto" => default_camera(image.width, image.height),
            CameraSpec::Named(n) => return invalid(format!("unknown camera {n:?} (expected \"auto\" or intrinsics)")),
            CameraSpec::Intrinsics(i) => CameraModel::new(i.fx, i.fy, i.cx, i.cy, image),
        };
        cam.map_err(|e| ConfigError::Invalid(format!("camera: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClassifierSpec {
    Baseline,
    External {
        command: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    200
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::Baseline
    }
}

impl ClassifierSpec {
    pub fn timeout(&self) -> Duration {
        match self {
            ClassifierSpec::Baseline => Duration::ZERO,
            ClassifierSpec::External { timeout_ms, .. } => Duration::from_millis(*timeout_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `[width, height]` of the frames the detections came from.
    pub image_size: [u32; 2],
    pub camera: CameraSpec,
    /// Rows: left eye, right eye, nose, mouth left, mouth right, chin.
    pub face_model_mm: [[f64; 3]; 6],
    pub solver: SolverParams,
    pub chin_k: f64,
    pub eye_side: EyeSide,
    pub classifier: ClassifierSpec,
    pub hold: HoldPolicy,
    pub events: EventConfig,
    pub format: Format,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            image_size: [640, 480],
            camera: CameraSpec::default(),
            face_model_mm: FaceModel3D::canonical().rows(),
            solver: SolverParams::default(),
            chin_k: DEFAULT_CHIN_K,
            eye_side: EyeSide::Left,
            classifier: ClassifierSpec::Baseline,
            hold: HoldPolicy::default(),
            events: EventConfig::default(),
            format: Format::Csv,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn image(&self) -> ImageSize {
        ImageSize::new(self.image_size[0], self.image_size[1])
    }

    pub fn camera_model(&self) -> Result<CameraModel, ConfigError> {
        if self.image_size.contains(&0) {
            return invalid("image_size must be positive");
        }
        self.camera.resolve(self.image())
    }

    pub fn face_model(&self) -> Result<FaceModel3D, ConfigError> {
        FaceModel3D::from_rows(self.face_model_mm).map_err(|e| ConfigError::Invalid(format!("face_model_mm: {e}")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.camera_model()?;
        self.face_model()?;
        let s = &self.solver;
        if s.max_iters == 0 || !(s.tol > 0.0 && s.tol.is_finite()) || !(s.lambda0 > 0.0 && s.lambda0.is_finite()) {
            return invalid("solver: max_iters, tol and lambda0 must be positive");
        }
        if !(self.chin_k > 0.0 && self.chin_k.is_finite()) {
            return invalid("chin_k must be positive");
        }
        if let ClassifierSpec::External { command, timeout_ms } = &self.classifier {
            if command.trim().is_empty() {
                return invalid("classifier: external backend needs a command");
            }
            if *timeout_ms == 0 {
                return invalid("classifier: timeout_ms must be positive");
            }
        }
        self.events.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
