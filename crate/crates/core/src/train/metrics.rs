//! Classification metrics: accuracy, per-class F1, macro F1.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// Rows are true labels, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

fn check_inputs(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<()> {
    if preds.is_empty() || labels.is_empty() {
        return Err(Error::Domain("metrics on empty prediction list".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&v| v >= n_classes) {
        return Err(Error::Domain(format!(
            "class index {bad} outside 0..{n_classes}"
        )));
    }
    Ok(())
}

pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    check_inputs(preds, labels, n_classes)?;
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(labels) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Domain(format!(
            "accuracy over {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn f1_from_confusion(m: &[Vec<usize>]) -> Vec<f64> {
    let n = m.len();
    (0..n)
        .map(|k| {
            let tp = m[k][k];
            let fn_ = m[k].iter().sum::<usize>() - tp;
            let fp = (0..n).map(|t| m[t][k]).sum::<usize>() - tp;
            let denom = 2 * tp + fp + fn_;
            // A class absent from both truth and prediction scores 0 and
            // still counts toward the macro mean.
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 scores.
pub fn macro_f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    let m = confusion_matrix(preds, labels, n_classes)?;
    let per_class = f1_from_confusion(&m);
    Ok(per_class.iter().sum::<f64>() / n_classes as f64)
}

pub fn metrics_report(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<MetricsReport> {
    let confusion = confusion_matrix(preds, labels, n_classes)?;
    let per_class_f1 = f1_from_confusion(&confusion);
    Ok(MetricsReport {
        accuracy: accuracy(preds, labels)?,
        macro_f1: per_class_f1.iter().sum::<f64>() / n_classes as f64,
        per_class_f1,
        confusion,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
