//! Classification metrics, confusion matrices and cross-run confusion ranking.

use serde::{Deserialize, Serialize};

use crate::annotation::{CountMatrix, WindowAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Unweighted mean of per-class F1 over the whole label space.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true labels, columns predictions.
    pub confusion: CountMatrix,
    pub confusion_normalized: Vec<Vec<f64>>,
    pub n_test: usize,
    pub excluded_transition_windows: usize,
}

fn index_all(labels: &[String], space: &[String]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            space
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| Error::invalid(format!("label {l:?} outside the evaluation label space")))
        })
        .collect()
}

/// Counts of (true, predicted) pairs, optionally with row-normalized rates.
pub fn confusion_matrix(y_true: &[String], y_pred: &[String], label_space: &[String]) -> Result<CountMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch { expected: y_true.len(), actual: y_pred.len() });
    }
    let n = label_space.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (t, p) in index_all(y_true, label_space)?.into_iter().zip(index_all(y_pred, label_space)?) {
        counts[t][p] += 1;
    }
    Ok(CountMatrix { labels: label_space.to_vec(), counts })
}

/// Precision or recall with an empty denominator counts as 0, so classes that
/// are never predicted (or never present) contribute F1 = 0.
pub fn evaluate(y_true: &[String], y_pred: &[String], label_space: &[String]) -> Result<MetricsReport> {
    if y_true.is_empty() {
        return Err(Error::invalid("evaluation needs at least one prediction"));
    }
    let cm = confusion_matrix(y_true, y_pred, label_space)?;
    let n = label_space.len();
    let total = cm.total();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let predicted: u64 = (0..n).map(|r| cm.counts[r][c]).sum();
            let support: u64 = cm.counts[c].iter().sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassMetrics { label: label_space[c].clone(), precision, recall, f1, support }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_f1,
        per_class,
        confusion_normalized: cm.row_normalized(),
        confusion: cm,
        n_test: y_true.len(),
        excluded_transition_windows: 0,
    })
}

/// Annotations with neither transition flag set.
pub fn filter_clean<'a>(annotations: impl IntoIterator<Item = &'a WindowAnnotation>) -> Vec<&'a WindowAnnotation> {
    annotations.into_iter().filter(|a| a.is_clean()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurringConfusion {
    pub true_label: String,
    pub predicted: String,
    pub per_run: Vec<(String, u64)>,
    pub total: u64,
}

/// Off-diagonal counts summed across runs, largest first; ties keep
/// row-major label order. Pairs absent from every run are omitted.
pub fn recurring_confusions(runs: &[(String, &MetricsReport)]) -> Result<Vec<RecurringConfusion>> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::invalid("no runs to aggregate"));
    };
    let labels = &first.confusion.labels;
    if runs.iter().any(|(_, r)| &r.confusion.labels != labels) {
        return Err(Error::invalid("runs use different label spaces"));
    }
    let n = labels.len();
    let mut out = Vec::new();
    for t in 0..n {
        for p in (0..n).filter(|&p| p != t) {
            let per_run: Vec<(String, u64)> =
                runs.iter().map(|(id, r)| (id.clone(), r.confusion.counts[t][p])).collect();
            let total = per_run.iter().map(|(_, c)| c).sum();
            if total > 0 {
                out.push(RecurringConfusion {
                    true_label: labels[t].clone(),
                    predicted: labels[p].clone(),
                    per_run,
                    total,
                });
            }
        }
    }
    out.sort_by_key(|r| std::cmp::Reverse(r.total));
    Ok(out)
}
