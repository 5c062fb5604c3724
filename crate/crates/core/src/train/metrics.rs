//! Accuracy, F1 and evaluation reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    #[default]
    Macro,
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy and F1 over the classes present in either `labels` or `predictions`.
///
/// A class with no true and no predicted samples is skipped; one with a zero
/// denominator in precision or recall scores F1 = 0.
pub fn compute_metrics(predictions: &[usize], labels: &[usize], average: F1Average) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::input(format!(
            "metrics need equal non-empty inputs, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let classes: BTreeSet<usize> = predictions.iter().chain(labels).copied().collect();
    let mut f1_sum = 0.0;
    let mut weight_sum = 0.0;
    for &c in &classes {
        let tp = predictions.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count() as f64;
        let pred_c = predictions.iter().filter(|&&p| p == c).count() as f64;
        let true_c = labels.iter().filter(|&&l| l == c).count() as f64;
        let f1 = if pred_c + true_c > 0.0 { 2.0 * tp / (pred_c + true_c) } else { 0.0 };
        let w = match average {
            F1Average::Macro => 1.0,
            F1Average::Weighted => true_c,
        };
        f1_sum += w * f1;
        weight_sum += w;
    }
    Ok(Metrics {
        accuracy: correct as f64 / n,
        f1: if weight_sum > 0.0 { f1_sum / weight_sum } else { 0.0 },
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject_id: String,
    pub accuracy: f64,
    pub f1: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Held-out subject contributes a single class.
    pub single_class: bool,
}

/// Per-fold and aggregate results with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_id: String,
    pub dataset_id: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub manifest_hash: String,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub wall_time_s: f64,
}

impl MetricsReport {
    pub fn new(task_id: &str, dataset_id: &str, mode: &str, seed: u64, folds: Vec<FoldResult>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_f1, std_f1) = mean_std(&f1);
        Self {
            task_id: task_id.into(),
            dataset_id: dataset_id.into(),
            mode: mode.into(),
            seed,
            config_hash: String::new(),
            manifest_hash: String::new(),
            folds,
            mean_accuracy,
            std_accuracy,
            mean_f1,
            std_f1,
            wall_time_s: 0.0,
        }
    }

    /// Equality of everything except wall time.
    pub fn same_numbers(&self, other: &MetricsReport) -> bool {
        let mut a = self.clone();
        a.wall_time_s = other.wall_time_s;
        &a == other
    }

    pub fn folds_csv(&self) -> String {
        let mut out = String::from("subject_id,accuracy,f1,n_train,n_test,single_class\n");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                f.subject_id, f.accuracy, f.f1, f.n_train, f.n_test, f.single_class
            );
        }
        out
    }

    /// Summary row: task, mode, accuracy and F1 in percent.
    pub fn summary_csv(&self) -> String {
        format!(
            "task,mode,accuracy,f1,accuracy_std,f1_std,folds\n{},{},{:.2},{:.2},{:.2},{:.2},{}\n",
            self.task_id,
            self.mode,
            100.0 * self.mean_accuracy,
            100.0 * self.mean_f1,
            100.0 * self.std_accuracy,
            100.0 * self.std_f1,
            self.folds.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_anchors() {
        let m = compute_metrics(&[0, 1, 2], &[0, 1, 2], F1Average::Macro).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
        let m = compute_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], F1Average::Macro).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.f1 - 1.0 / 3.0).abs() < 1e-12);
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 7)).collect();
        let m = compute_metrics(&[0; 10], &labels, F1Average::Macro).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.f1 - 0.5 * (2.0 * 0.7 / 1.7)).abs() < 1e-12);
        assert!(compute_metrics(&[], &[], F1Average::Macro).is_err());
    }

    #[test]
    fn weighted_f1_uses_support() {
        let m = compute_metrics(&[0, 0, 0, 0], &[0, 0, 0, 1], F1Average::Weighted).unwrap();
        assert!((m.f1 - 0.75 * (6.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
