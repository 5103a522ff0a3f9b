//! Classification metrics and their CSV/JSON rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    /// Recall per class; `None` for classes absent from the evaluated set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub head_accuracy: Option<f64>,
    pub tail_accuracy: Option<f64>,
    pub edge_homophily_mean: Option<f64>,
    pub edge_homophily_std: Option<f64>,
}

/// Metric columns in emission order.
pub const METRIC_COLUMNS: [&str; 7] = [
    "accuracy",
    "balanced_accuracy",
    "macro_f1",
    "head_accuracy",
    "tail_accuracy",
    "edge_homophily_mean",
    "edge_homophily_std",
];

impl MetricsReport {
    /// Values in [`METRIC_COLUMNS`] order; missing entries are NaN.
    pub fn values(&self) -> [f64; 7] {
        let o = |v: Option<f64>| v.unwrap_or(f64::NAN);
        [
            self.accuracy,
            self.balanced_accuracy,
            self.macro_f1,
            o(self.head_accuracy),
            o(self.tail_accuracy),
            o(self.edge_homophily_mean),
            o(self.edge_homophily_std),
        ]
    }
}

fn accuracy_of(pred: &[usize], truth: &[usize], idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    let hit = idx.iter().filter(|&&i| pred[i] == truth[i]).count();
    Some(hit as f64 / idx.len() as f64)
}

/// Accuracy, balanced accuracy (mean recall over classes present in
/// `truth`), macro-F1 over all `num_classes` (a class with no predicted and
/// no actual members scores F1 = 0), and accuracy on the `head_idx` /
/// `tail_idx` positions.
pub fn compute_metrics(
    predictions: &[usize],
    truth: &[usize],
    num_classes: usize,
    head_idx: &[usize],
    tail_idx: &[usize],
) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(Error::Shape(format!("class {bad} outside {num_classes}")));
    }
    if let Some(&bad) = head_idx.iter().chain(tail_idx).find(|&&i| i >= truth.len()) {
        return Err(Error::Shape(format!("head/tail position {bad} outside {}", truth.len())));
    }
    // confusion[actual][predicted]
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let n = truth.len() as f64;
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(num_classes);
    let mut f1_sum = 0.0;
    for c in 0..num_classes {
        let tp = confusion[c][c] as f64;
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        per_class.push((actual > 0).then(|| tp / actual as f64));
        let denom = (actual + predicted) as f64;
        if denom > 0.0 {
            f1_sum += 2.0 * tp / denom;
        }
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(MetricsReport {
        accuracy: correct as f64 / n,
        balanced_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        macro_f1: f1_sum / num_classes as f64,
        per_class_accuracy: per_class,
        head_accuracy: accuracy_of(predictions, truth, head_idx),
        tail_accuracy: accuracy_of(predictions, truth, tail_idx),
        edge_homophily_mean: None,
        edge_homophily_std: None,
    })
}

/// Population mean and sample standard deviation (0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
