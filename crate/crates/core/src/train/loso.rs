//! Leave-one-subject-out evaluation.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::downstream::{labeled_windows, predict_windows, train_downstream, TrainMode};
use super::metrics::{compute_metrics, F1Average, FoldResult, MetricsReport};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Network, NetworkConfig};
use crate::rng::{derive_seed, tag};
use crate::signal::Window;

/// Everything a downstream LOSO run needs besides the windows.
#[derive(Clone, Debug)]
pub struct LosoSpec<'a> {
    pub net: NetworkConfig,
    pub pretrained: Option<&'a Network>,
    pub classes: usize,
    pub mode: TrainMode,
    pub train: TrainConfig,
    pub f1: F1Average,
    /// Worker threads for fold-level parallelism; results do not depend on it.
    pub jobs: usize,
}

pub fn subjects(windows: &[Window]) -> Vec<String> {
    windows
        .iter()
        .map(|w| w.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Training seed of the fold that holds out `subject`.
pub fn fold_seed(seed: u64, subject: &str) -> u64 {
    derive_seed(seed, &[tag("fold"), tag(subject)])
}

/// Hook applied to each fold's (train, test) windows before training.
pub type FoldPrep<'f> = dyn Fn(&str, Vec<Window>, Vec<Window>) -> Result<(Vec<Window>, Vec<Window>)> + Sync + 'f;

pub fn evaluate_loso(windows: &[Window], spec: &LosoSpec<'_>) -> Result<Vec<FoldResult>> {
    evaluate_loso_with(windows, spec, &|_, tr, te| Ok((tr, te)))
}

pub fn evaluate_loso_with(windows: &[Window], spec: &LosoSpec<'_>, prep: &FoldPrep<'_>) -> Result<Vec<FoldResult>> {
    let ids = subjects(windows);
    if ids.len() < 2 {
        return Err(Error::input(format!("LOSO needs at least 2 subjects, found {}", ids.len())));
    }
    let run = |subject: &String| run_fold(windows, subject, spec, prep);
    let results: Vec<Result<FoldResult>> = if spec.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| ids.par_iter().map(run).collect())
    } else {
        ids.iter().map(run).collect()
    };
    results.into_iter().collect()
}

fn run_fold(windows: &[Window], subject: &str, spec: &LosoSpec<'_>, prep: &FoldPrep<'_>) -> Result<FoldResult> {
    let (test, train): (Vec<Window>, Vec<Window>) = windows.iter().cloned().partition(|w| w.subject_id == subject);
    let (train, test) = prep(subject, train, test)?;
    if train.iter().any(|w| w.subject_id == subject) {
        return Err(Error::input(format!("held-out subject {subject} leaked into its training fold")));
    }
    let mut cfg = spec.train.clone();
    cfg.seed = fold_seed(spec.train.seed, subject);
    let net = train_downstream(spec.pretrained, &spec.net, &train, spec.classes, spec.mode, &cfg)?;
    let (test_ws, test_y) = labeled_windows(&test, spec.classes)?;
    if test_ws.is_empty() {
        return Err(Error::input(format!("subject {subject} has no labelled windows")));
    }
    let preds = predict_windows(&net, &test_ws)?;
    let m = compute_metrics(&preds, &test_y, spec.f1)?;
    let single_class = test_y.iter().all(|&y| y == test_y[0]);
    if single_class {
        log::warn!("subject {subject}: held-out windows contain a single class");
    }
    Ok(FoldResult {
        subject_id: subject.to_string(),
        accuracy: m.accuracy,
        f1: m.f1,
        n_train: labeled_windows(&train, spec.classes)?.0.len(),
        n_test: test_ws.len(),
        single_class,
    })
}

/// LOSO run wrapped in a report with wall time and provenance hashes.
pub fn loso_report(
    windows: &[Window],
    spec: &LosoSpec<'_>,
    task_id: &str,
    dataset_id: &str,
    config_hash: &str,
    manifest_hash: &str,
) -> Result<MetricsReport> {
    let start = std::time::Instant::now();
    let folds = evaluate_loso(windows, spec)?;
    let mut report = MetricsReport::new(task_id, dataset_id, spec.mode.name(), spec.train.seed, folds);
    report.config_hash = config_hash.to_string();
    report.manifest_hash = manifest_hash.to_string();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
