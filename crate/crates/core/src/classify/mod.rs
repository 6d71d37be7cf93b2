//! Open/closed state classification for eye and mouth crops.
//!
//! Any backend implementing [`Classifier`] can fill the slot. Two ship here:
//! the built-in contrast heuristic and a client for an external classifier
//! process speaking a line-delimited JSON protocol.

mod dataset;
mod external;
mod metrics;

pub use dataset::{
    evaluate_dataset, load_manifest, read_pgm, split_indices, write_pgm, EvaluationReport,
    LabeledRoi, ManifestEntry,
};
pub use external::{serve, ExternalClassifier, DEFAULT_TIMEOUT};
pub use metrics::{
    compute_metrics, format_model_comparison, ConfusionMatrix, Metrics, ModelReportRow,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RoiKind;

/// Baseline decision threshold on contrast energy for eye crops.
pub const EYE_THRESHOLD: f64 = 0.15;
/// Baseline decision threshold on contrast energy for mouth crops.
pub const MOUTH_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("classifier backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("classifier backend timed out")]
    Timeout,
    #[error("classifier protocol error: {0}")]
    ProtocolError(String),
    #[error("failed to start classifier backend: {0}")]
    Spawn(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpenState {
    Open,
    Closed,
    #[default]
    Unknown,
}

impl OpenState {
    pub fn as_str(self) -> &'static str {
        match self {
            OpenState::Open => "open",
            OpenState::Closed => "closed",
            OpenState::Unknown => "unknown",
        }
    }

    pub fn is_known(self) -> bool {
        self != OpenState::Unknown
    }
}

impl fmt::Display for OpenState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpenState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(OpenState::Open),
            "closed" => Ok(OpenState::Closed),
            "unknown" => Ok(OpenState::Unknown),
            other => Err(format!("unknown state {other:?}")),
        }
    }
}

/// 8-bit grayscale crop, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage {
    pub kind: RoiKind,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RoiImage {
    pub fn new(kind: RoiKind, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ClassifyError> {
        if width == 0 || height == 0 {
            return Err(ClassifyError::InvalidImage("zero-sized ROI".into()));
        }
        if pixels.len() != width * height {
            return Err(ClassifyError::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            kind,
            width,
            height,
            pixels,
        })
    }

    pub fn uniform(kind: RoiKind, width: usize, height: usize, value: u8) -> Self {
        Self {
            kind,
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Top half `top`, bottom half `bottom`.
    pub fn two_band(kind: RoiKind, width: usize, height: usize, top: u8, bottom: u8) -> Self {
        let split = height / 2;
        let pixels = (0..height)
            .flat_map(|row| std::iter::repeat_n(if row < split { top } else { bottom }, width))
            .collect();
        Self {
            kind,
            width,
            height,
            pixels,
        }
    }

    fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.pixels.chunks_exact(self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVerdict {
    pub state: OpenState,
    pub confidence: f64,
}

impl StateVerdict {
    pub fn new(state: OpenState, confidence: f64) -> Self {
        if state == OpenState::Unknown {
            return Self::unknown();
        }
        Self {
            state,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub const fn unknown() -> Self {
        Self {
            state: OpenState::Unknown,
            confidence: 0.0,
        }
    }
}

pub trait Classifier {
    fn classify(&mut self, img: &RoiImage) -> Result<StateVerdict, ClassifyError>;

    /// Optional training hook; receives the training split only.
    fn fit(&mut self, _train: &[LabeledRoi]) {}
}

/// Runs a backend, turning transport failures into an `unknown` verdict.
///
/// A dead or hung backend never stalls the caller past its timeout; a
/// malformed reply is surfaced as [`ClassifyError::ProtocolError`].
pub fn classify_roi(
    img: &RoiImage,
    backend: &mut dyn Classifier,
) -> Result<StateVerdict, ClassifyError> {
    match backend.classify(img) {
        Ok(v) => Ok(v),
        Err(ClassifyError::Timeout) => {
            log::warn!("{} classifier timed out; verdict unknown", img.kind.as_str());
            Ok(StateVerdict::unknown())
        }
        Err(e @ ClassifyError::BackendUnavailable(_)) => {
            log::error!("{e}; {} verdict unknown", img.kind.as_str());
            Ok(StateVerdict::unknown())
        }
        Err(e) => Err(e),
    }
}

/// Vertical contrast energy: variance of row means over variance of all
/// pixels. Zero for a constant image.
pub fn contrast_energy(img: &RoiImage) -> f64 {
    let n = img.pixels.len() as f64;
    let mean = img.pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
    let total_var = img
        .pixels
        .iter()
        .map(|&p| (p as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    if total_var == 0.0 {
        return 0.0;
    }
    let row_means: Vec<f64> = img
        .rows()
        .map(|r| r.iter().map(|&p| p as f64).sum::<f64>() / img.width as f64)
        .collect();
    let rows_var = row_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / img.height as f64;
    rows_var / total_var
}

pub fn threshold_for(kind: RoiKind) -> f64 {
    match kind {
        RoiKind::Eye => EYE_THRESHOLD,
        RoiKind::Mouth => MOUTH_THRESHOLD,
    }
}

/// Horizontal structure means open: an open eye shows a dark iris band
/// between lids, an open mouth a dark cavity between lips.
pub fn baseline_classify(img: &RoiImage) -> StateVerdict {
    let tau = threshold_for(img.kind);
    let e = contrast_energy(img);
    let state = if e >= tau {
        OpenState::Open
    } else {
        OpenState::Closed
    };
    StateVerdict::new(state, ((e - tau).abs() / tau).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineClassifier;

impl Classifier for BaselineClassifier {
    fn classify(&mut self, img: &RoiImage) -> Result<StateVerdict, ClassifyError> {
        Ok(baseline_classify(img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straightforward two-pass evaluation of the rule, written independently.
    fn energy_oracle(w: usize, h: usize, px: &[u8]) -> f64 {
        let vals: Vec<f64> = px.iter().map(|&p| p as f64).collect();
        let n = vals.len() as f64;
        let mu = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        if var == 0.0 {
            return 0.0;
        }
        let mut rv = 0.0;
        for r in 0..h {
            let m = vals[r * w..(r + 1) * w].iter().sum::<f64>() / w as f64;
            rv += (m - mu) * (m - mu);
        }
        (rv / h as f64) / var
    }

    #[test]
    fn constant_image_is_closed() {
        let img = RoiImage::uniform(RoiKind::Eye, 40, 30, 128);
        assert_eq!(contrast_energy(&img), 0.0);
        let v = baseline_classify(&img);
        assert_eq!(v.state, OpenState::Closed);
        assert_eq!(v.confidence, 1.0);
    }

    #[test]
    fn two_band_image_is_open() {
        let img = RoiImage::two_band(RoiKind::Mouth, 30, 20, 0, 255);
        assert_eq!(contrast_energy(&img), 1.0);
        assert_eq!(baseline_classify(&img).state, OpenState::Open);
    }

    #[test]
    fn synthetic_open_eye() {
        // 40x30: bright sclera rows, a dark band of 12 rows (40%) whose
        // centre 16 columns are iris (20) and sides sclera (230)
        let (w, h) = (40usize, 30usize);
        let mut px = vec![230u8; w * h];
        for r in 9..21 {
            for c in 0..w {
                px[r * w + c] = if (12..28).contains(&c) { 20 } else { 120 };
            }
        }
        let img = RoiImage::new(RoiKind::Eye, w, h, px.clone()).unwrap();
        let e = contrast_energy(&img);
        // hand evaluation of the rule, frozen
        assert!((e - 0.849_056_603_8).abs() < 1e-9, "{e}");
        assert!((e - energy_oracle(w, h, &px)).abs() < 1e-12);
        assert_eq!(baseline_classify(&img).state, OpenState::Open);
    }

    #[test]
    fn mid_gray_is_closed() {
        let img = RoiImage::uniform(RoiKind::Eye, 24, 18, 127);
        assert_eq!(baseline_classify(&img).state, OpenState::Closed);
    }

    #[test]
    fn random_noise_rarely_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut open = 0;
        for i in 0..1000 {
            let kind = if i % 2 == 0 { RoiKind::Eye } else { RoiKind::Mouth };
            let w = rng.random_range(20..=60);
            let h = rng.random_range(15..=45);
            let px: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
            let img = RoiImage::new(kind, w, h, px.clone()).unwrap();
            let oracle_open = energy_oracle(w, h, &px) >= threshold_for(kind);
            let v = baseline_classify(&img);
            assert_eq!(v.state == OpenState::Open, oracle_open);
            open += oracle_open as usize;
        }
        assert!(open <= 50, "{open} of 1000 noise images classified open");
    }

    #[test]
    fn brightness_offset_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let px: Vec<u8> = (0..20 * 10).map(|_| rng.random_range(0..200)).collect();
            let shifted: Vec<u8> = px.iter().map(|p| p + 55).collect();
            let a = RoiImage::new(RoiKind::Eye, 20, 10, px).unwrap();
            let b = RoiImage::new(RoiKind::Eye, 20, 10, shifted).unwrap();
            assert!((contrast_energy(&a) - contrast_energy(&b)).abs() < 1e-12);
            assert_eq!(baseline_classify(&a).state, baseline_classify(&b).state);
        }
    }

    #[test]
    fn unknown_verdict_has_zero_confidence() {
        assert_eq!(StateVerdict::new(OpenState::Unknown, 0.8).confidence, 0.0);
    }

    struct Failing(ClassifyError);

    impl Classifier for Failing {
        fn classify(&mut self, _: &RoiImage) -> Result<StateVerdict, ClassifyError> {
            Err(self.0.clone())
        }
    }

    #[test]
    fn transport_failures_become_unknown() {
        let img = RoiImage::uniform(RoiKind::Eye, 4, 4, 0);
        for e in [ClassifyError::Timeout, ClassifyError::BackendUnavailable("gone".into())] {
            assert_eq!(classify_roi(&img, &mut Failing(e)).unwrap(), StateVerdict::unknown());
        }
        let bad = ClassifyError::ProtocolError("x".into());
        assert_eq!(classify_roi(&img, &mut Failing(bad.clone())), Err(bad));
    }

    #[test]
    fn roi_image_validates_length() {
        assert!(RoiImage::new(RoiKind::Eye, 3, 3, vec![0; 8]).is_err());
        assert!(RoiImage::new(RoiKind::Eye, 0, 3, vec![]).is_err());
    }
}
