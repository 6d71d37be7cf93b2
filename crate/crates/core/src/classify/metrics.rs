use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::ClassifyError;

/// Binary confusion counts with "open" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
    /// `None` when there are no positive samples.
    pub recall: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics, ClassifyError> {
    let total = cm.total();
    if total == 0 {
        return Err(ClassifyError::EmptyMatrix);
    }
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision: ratio(cm.tp, cm.tp + cm.fp),
        recall: ratio(cm.tp, cm.tp + cm.fn_),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReportRow {
    pub model_name: String,
    pub accuracy: f64,
    pub loss: f64,
}

impl ModelReportRow {
    pub fn new(model_name: impl Into<String>, accuracy: f64, loss: f64) -> Self {
        Self {
            model_name: model_name.into(),
            accuracy,
            loss,
        }
    }
}

/// Fixed-width comparison table, best accuracy first; equal accuracies are
/// ordered by lower loss.
pub fn format_model_comparison(rows: &[ModelReportRow]) -> String {
    let mut sorted: Vec<&ModelReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(a.loss.total_cmp(&b.loss))
    });
    let name_w = sorted
        .iter()
        .map(|r| r.model_name.chars().count())
        .max()
        .unwrap_or(0)
        .max("Model".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_w$}  {:>8}  {:>8}", "Model", "Accuracy", "Loss");
    for r in sorted {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>8.3}  {:>8.3}",
            r.model_name, r.accuracy, r.loss
        );
    }
    out
}
