use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageReader};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    classify_roi, compute_metrics, ClassifyError, Classifier, ConfusionMatrix, Metrics, OpenState,
    RoiImage,
};
use crate::geometry::RoiKind;

const TEST_FRACTION: f64 = 0.10;
const MIN_ITEMS: usize = 10;

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: RoiKind,
    pub label: OpenState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRoi {
    pub image: RoiImage,
    pub label: OpenState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub n_total: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_indices: Vec<usize>,
    pub confusion: ConfusionMatrix,
    /// Test items the backend could not decide; excluded from the matrix.
    pub unknown: usize,
    /// `None` when every test verdict was unknown.
    pub metrics: Option<Metrics>,
}

/// Reads a JSON-lines manifest. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ClassifyError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ClassifyError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                ClassifyError::InvalidImage(format!("{}:{}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Loads an 8-bit grayscale PGM.
pub fn read_pgm(path: &Path, kind: RoiKind) -> Result<RoiImage, ClassifyError> {
    let img = ImageReader::open(path)
        .map_err(|e| ClassifyError::Io(format!("{}: {e}", path.display())))?
        .with_guessed_format()
        .map_err(|e| ClassifyError::Io(format!("{}: {e}", path.display())))?
        .decode()
        .map_err(|e| ClassifyError::InvalidImage(format!("{}: {e}", path.display())))?;
    if img.color() != ColorType::L8 {
        return Err(ClassifyError::InvalidImage(format!(
            "{}: expected 8-bit grayscale, got {:?}",
            path.display(),
            img.color()
        )));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    RoiImage::new(kind, w, h, img.into_luma8().into_raw())
}

/// Writes a binary (P5) PGM.
pub fn write_pgm(path: &Path, img: &RoiImage) -> Result<(), ClassifyError> {
    let io_err = |e: &dyn std::fmt::Display| ClassifyError::Io(format!("{}: {e}", path.display()));
    let file = fs::File::create(path).map_err(|e| io_err(&e))?;
    let mut out = BufWriter::new(file);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&img.pixels, img.width as u32, img.height as u32, ExtendedColorType::L8)
        .map_err(|e| io_err(&e))?;
    out.flush().map_err(|e| io_err(&e))
}

/// Seeded shuffle of `0..n`; the last `round(0.1·n)` indices are the test split.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * TEST_FRACTION).round() as usize;
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Fits the backend on the training split and scores it on the test split.
pub fn evaluate_dataset(
    items: &[LabeledRoi],
    backend: &mut dyn Classifier,
    split_seed: u64,
) -> Result<EvaluationReport, ClassifyError> {
    if items.len() < MIN_ITEMS {
        return Err(ClassifyError::InsufficientData(format!(
            "{} items, need at least {MIN_ITEMS}",
            items.len()
        )));
    }
    if let Some(bad) = items.iter().find(|i| !i.label.is_known()) {
        return Err(ClassifyError::InsufficientData(format!("label {} is not usable", bad.label)));
    }
    for label in [OpenState::Open, OpenState::Closed] {
        if !items.iter().any(|i| i.label == label) {
            return Err(ClassifyError::InsufficientData(format!("no {label} items")));
        }
    }

    let (train_idx, test_idx) = split_indices(items.len(), split_seed);
    let train: Vec<LabeledRoi> = train_idx.iter().map(|&i| items[i].clone()).collect();
    backend.fit(&train);

    let mut cm = ConfusionMatrix::default();
    let mut unknown = 0;
    for &i in &test_idx {
        let item = &items[i];
        let v = classify_roi(&item.image, backend)?;
        match (v.state, item.label) {
            (OpenState::Unknown, _) => unknown += 1,
            (OpenState::Open, OpenState::Open) => cm.tp += 1,
            (OpenState::Open, _) => cm.fp += 1,
            (OpenState::Closed, OpenState::Closed) => cm.tn += 1,
            (OpenState::Closed, _) => cm.fn_ += 1,
        }
    }
    Ok(EvaluationReport {
        n_total: items.len(),
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        test_indices: test_idx,
        confusion: cm,
        unknown,
        metrics: compute_metrics(&cm).ok(),
    })
}
