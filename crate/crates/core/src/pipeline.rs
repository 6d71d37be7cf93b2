//! Per-frame extraction: face selection, chin, ROIs, open/closed states,
//! head pose, then the recorder's hold policy.

use thiserror::Error;

use crate::classify::{
    classify_roi, BaselineClassifier, Classifier, ClassifyError, ExternalClassifier, RoiImage,
    StateVerdict,
};
use crate::config::{ClassifierSpec, ConfigError, PipelineConfig};
use crate::detections::{DetectionFrame, Patch};
use crate::geometry::{derive_chin, eye_roi, mouth_roi, EyeSide, FaceObservation, ImageSize, RoiKind, RoiRect};
use crate::pose::{CameraModel, ChinModel, FaceModel3D, PnpSolver};
use crate::recorder::{FrameRecord, FrameResult, PoseSample, Recorder, RecorderError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("frame {frame}: {message}")]
    Input { frame: u64, message: String },
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error(transparent)]
    Classifier(#[from] ClassifyError),
}

pub struct Pipeline {
    image: ImageSize,
    camera: CameraModel,
    model: FaceModel3D,
    solver: PnpSolver,
    chin_k: f64,
    eye_side: EyeSide,
    eye_backend: Box<dyn Classifier>,
    mouth_backend: Box<dyn Classifier>,
    recorder: Recorder,
}

fn backend(spec: &ClassifierSpec) -> Result<Box<dyn Classifier>, ClassifyError> {
    Ok(match spec {
        ClassifierSpec::Baseline => Box::new(BaselineClassifier),
        ClassifierSpec::External { command, .. } => Box::new(ExternalClassifier::spawn(command, spec.timeout())?),
    })
}

impl Pipeline {
    /// Builds the pipeline; an external backend gets one process per ROI kind.
    pub fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let eye = backend(&cfg.classifier)?;
        let mouth = backend(&cfg.classifier)?;
        Self::with_backends(cfg, eye, mouth)
    }

    pub fn with_backends(
        cfg: &PipelineConfig,
        eye_backend: Box<dyn Classifier>,
        mouth_backend: Box<dyn Classifier>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self {
            image: cfg.image(),
            camera: cfg.camera_model()?,
            model: cfg.face_model()?,
            solver: PnpSolver::new(cfg.solver, ChinModel::Derived { k: cfg.chin_k }),
            chin_k: cfg.chin_k,
            eye_side: cfg.eye_side,
            eye_backend,
            mouth_backend,
            recorder: Recorder::new(cfg.hold),
        })
    }

    fn classify(
        &mut self,
        roi: Result<RoiRect, crate::geometry::GeometryError>,
        patch: Option<&Patch>,
        frame: u64,
    ) -> StateVerdict {
        let kind = match &roi {
            Ok(r) => r.kind,
            Err(e) => {
                log::debug!("frame {frame}: {e}");
                return StateVerdict::unknown();
            }
        };
        let Some(patch) = patch else {
            return StateVerdict::unknown();
        };
        let img: RoiImage = match patch.decode(kind) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("frame {frame}: {} patch unusable: {e}", kind.as_str());
                return StateVerdict::unknown();
            }
        };
        let backend = match kind {
            RoiKind::Eye => &mut self.eye_backend,
            RoiKind::Mouth => &mut self.mouth_backend,
        };
        match classify_roi(&img, backend.as_mut()) {
            Ok(v) => v,
            Err(e) => {
                log::error!("frame {frame}: {e}");
                StateVerdict::unknown()
            }
        }
    }

    fn pose(&self, obs: &FaceObservation) -> Option<PoseSample> {
        let six = match derive_chin(obs, self.chin_k) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("frame {}: {e}", obs.frame_index);
                return None;
            }
        };
        match self.solver.solve(&six, &self.model, &self.camera) {
            Ok(p) => Some(PoseSample {
                angles: p.angles(),
                reproj_rms_px: Some(p.reproj_rms_px),
            }),
            Err(e) => {
                log::warn!("frame {}: {e}", obs.frame_index);
                None
            }
        }
    }

    /// Processes one detection frame into one record.
    pub fn process(&mut self, frame: &DetectionFrame) -> Result<FrameRecord, PipelineError> {
        let mut observations = Vec::with_capacity(frame.faces.len());
        for f in &frame.faces {
            let obs = f
                .to_observation(frame.frame, frame.t_ms, self.image)
                .map_err(|e| PipelineError::Input {
                    frame: frame.frame,
                    message: e.to_string(),
                })?;
            observations.push(obs);
        }
        let selected = crate::geometry::select_face(&observations)
            .and_then(|o| observations.iter().position(|x| std::ptr::eq(x, o)));
        let result = match selected {
            None => FrameResult::NoDetection,
            Some(i) => {
                let obs = &observations[i];
                let patches = frame.faces[i].roi.as_ref();
                let eye_patch = patches.and_then(|p| match self.eye_side {
                    EyeSide::Left => p.le.as_ref(),
                    EyeSide::Right => p.re.as_ref(),
                });
                let eye = self.classify(eye_roi(obs, self.eye_side, self.image), eye_patch, frame.frame);
                let mouth = self.classify(
                    mouth_roi(obs, self.image),
                    patches.and_then(|p| p.mouth.as_ref()),
                    frame.frame,
                );
                FrameResult::Detected {
                    eye,
                    mouth,
                    pose: self.pose(obs),
                }
            }
        };
        Ok(self.recorder.record(frame.frame, frame.t_ms, result)?)
    }
}

/// Convenience for in-memory streams.
pub fn run(cfg: &PipelineConfig, frames: &[DetectionFrame]) -> Result<Vec<FrameRecord>, PipelineError> {
    let mut p = Pipeline::new(cfg)?;
    frames.iter().map(|f| p.process(f)).collect()
}
