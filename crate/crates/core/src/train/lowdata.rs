//! Per-class subsampling study: LOSO repeated over random training subsets.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loso::{evaluate_loso_with, LosoSpec};
use super::metrics::mean_std;
use crate::error::{Error, Result};
use crate::rng::{substream, tag, Rng};
use crate::signal::{Window, IGNORED_LABEL};

/// Training windows kept per class, or all of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSize {
    PerClass(usize),
    Full,
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::PerClass(n) => write!(f, "{n}"),
            SampleSize::Full => f.write_str("full"),
        }
    }
}

impl FromStr for SampleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(SampleSize::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(SampleSize::PerClass(n)),
            _ => Err(Error::config(format!("sample size must be a positive integer or `full`, got `{s}`"))),
        }
    }
}

impl Serialize for SampleSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SampleSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) if n > 0 => Ok(SampleSize::PerClass(n)),
            Raw::N(_) => Err(serde::de::Error::custom("sample size must be positive")),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowDataRow {
    pub size: SampleSize,
    pub repeat: usize,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowDataSummary {
    pub size: SampleSize,
    pub repeats: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowDataReport {
    pub rows: Vec<LowDataRow>,
    pub summary: Vec<LowDataSummary>,
}

impl LowDataReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("size,repeats,accuracy,accuracy_std,f1,f1_std\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.size, s.repeats, s.mean_accuracy, s.std_accuracy, s.mean_f1, s.std_f1
            ));
        }
        out
    }
}

/// Keep at most `n` randomly chosen labelled windows per class; unlabelled windows are dropped.
pub fn subsample_per_class(windows: Vec<Window>, n: usize, rng: &mut Rng) -> Vec<Window> {
    let mut by_class: std::collections::BTreeMap<u32, Vec<Window>> = Default::default();
    for w in windows {
        if let Some(l) = w.label.filter(|&l| l != IGNORED_LABEL) {
            by_class.entry(l).or_default().push(w);
        }
    }
    let mut out = Vec::new();
    for (class, mut ws) in by_class {
        if ws.len() < n {
            log::warn!("class {class}: only {} windows available, wanted {n}", ws.len());
        }
        ws.shuffle(rng);
        ws.truncate(n);
        out.extend(ws);
    }
    out
}

/// LOSO per (size, repeat); each fold's training windows are subsampled per class.
///
/// The training seed does not depend on the repeat, so `Full` reproduces plain LOSO.
pub fn run_low_data_study(windows: &[Window], spec: &LosoSpec<'_>, sizes: &[SampleSize], repeats: usize) -> Result<LowDataReport> {
    if repeats == 0 {
        return Err(Error::config("low-data study needs at least one repeat"));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &size in sizes {
        let mut accs = Vec::with_capacity(repeats);
        let mut f1s = Vec::with_capacity(repeats);
        for repeat in 0..repeats {
            let seed = spec.train.seed;
            let prep = move |subject: &str, train: Vec<Window>, test: Vec<Window>| -> Result<(Vec<Window>, Vec<Window>)> {
                let train = match size {
                    SampleSize::Full => train,
                    SampleSize::PerClass(n) => {
                        let mut rng = substream(seed, &[tag("lowdata"), n as u64, repeat as u64, tag(subject)]);
                        subsample_per_class(train, n, &mut rng)
                    }
                };
                Ok((train, test))
            };
            let folds = evaluate_loso_with(windows, spec, &prep)?;
            let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
            let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
            let row = LowDataRow {
                size,
                repeat,
                accuracy: mean_std(&acc).0,
                f1: mean_std(&f1).0,
            };
            log::info!("low-data size {size} repeat {repeat}: acc {:.4} f1 {:.4}", row.accuracy, row.f1);
            accs.push(row.accuracy);
            f1s.push(row.f1);
            rows.push(row);
        }
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        let (mean_f1, std_f1) = mean_std(&f1s);
        summary.push(LowDataSummary {
            size,
            repeats,
            mean_accuracy,
            std_accuracy,
            mean_f1,
            std_f1,
        });
    }
    Ok(LowDataReport { rows, summary })
}
