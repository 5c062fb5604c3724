//! Deterministic signal conditioning: filter, normalise, resample, segment.
//!
//! The order is fixed and enforced through the [`Stage`] tag on each
//! [`Recording`]:
//!
//! ```text
//! raw ─ lowpass ─▶ filtered ─ zscore ─▶ normalized ─ resample ─▶ resampled ─ segment ─▶ windows
//! ```

mod butterworth;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use butterworth::{butterworth_lowpass, Butterworth};

use crate::error::{Error, Result};
use crate::signal::{Modality, Recording, Stage, Window, IGNORED_LABEL};

/// Streams with a standard deviation below this are treated as constant.
pub const ZERO_VARIANCE_EPS: f64 = 1e-8;

/// Per-recording z-score with population statistics; near-constant input maps to zeros.
pub fn zscore_normalize(samples: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return Vec::new();
    }
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZERO_VARIANCE_EPS {
        return vec![0.0; samples.len()];
    }
    samples.iter().map(|v| (v - mean) / std).collect()
}

/// Linear interpolation of `x` at fractional index `pos`, clamped to the ends.
fn interp_at(x: &[f64], pos: f64) -> f64 {
    let last = x.len() - 1;
    if pos <= 0.0 {
        return x[0];
    }
    if pos >= last as f64 {
        return x[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 {
        x[i]
    } else {
        x[i] + frac * (x[i + 1] - x[i])
    }
}

/// Resize to `len` samples by linear interpolation, mapping first to first and last to last.
pub fn resize_linear(x: &[f64], len: usize) -> Vec<f64> {
    if x.is_empty() || len == 0 {
        return Vec::new();
    }
    if len == 1 || x.len() == 1 {
        return vec![x[0]; len];
    }
    if len == x.len() {
        return x.to_vec();
    }
    let scale = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len).map(|j| interp_at(x, j as f64 * scale)).collect()
}

/// Downsample onto the `dst_fs` time grid by linear interpolation.
///
/// Output sample `j` sits at time `j / dst_fs`; output length is
/// `round(len * dst_fs / src_fs)`.
pub fn resample_to(samples: &[f64], src_fs: f64, dst_fs: f64) -> Result<Vec<f64>> {
    if !(dst_fs > 0.0) || !(src_fs > 0.0) {
        return Err(Error::config("sampling rates must be positive"));
    }
    if dst_fs > src_fs {
        return Err(Error::config(format!(
            "upsampling from {src_fs} Hz to {dst_fs} Hz is not supported"
        )));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    if dst_fs == src_fs {
        return Ok(samples.to_vec());
    }
    let out_len = (samples.len() as f64 * dst_fs / src_fs).round() as usize;
    let ratio = src_fs / dst_fs;
    Ok((0..out_len).map(|j| interp_at(samples, j as f64 * ratio)).collect())
}

/// Most frequent class id; ties go to the smallest id.
pub fn majority_label(labels: &[u32]) -> Result<u32> {
    if labels.is_empty() {
        return Err(Error::input("majority_label on an empty sequence"));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    Ok(counts
        .into_iter()
        .find(|&(_, c)| c == best)
        .map(|(l, _)| l)
        .unwrap_or(labels[0]))
}

/// Window hop in samples for a given overlap fraction.
pub fn window_step(window_len: usize, overlap_frac: f64) -> usize {
    (((1.0 - overlap_frac) * window_len as f64).round() as usize).max(1)
}

/// Number of left-aligned windows that fit into `total` samples.
pub fn window_count(total: usize, window_len: usize, step: usize) -> usize {
    if total < window_len || window_len == 0 {
        0
    } else {
        (total - window_len) / step + 1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segmentation {
    pub windows: Vec<Window>,
    /// Set when the recording is shorter than one window.
    pub too_short: bool,
}

/// Cut a resampled recording into `[N, 3]` windows with the given overlap.
pub fn segment_windows(rec: &Recording, window_s: f64, overlap_frac: f64) -> Result<Segmentation> {
    if rec.stage() != Stage::Resampled {
        return Err(Error::config(format!(
            "{}: segmentation requires a resampled recording (stage is {:?})",
            rec.subject_id,
            rec.stage()
        )));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::config(format!("overlap fraction {overlap_frac} not in [0, 1)")));
    }
    let fs = rec.stream(Modality::Eda).fs;
    if Modality::ALL.iter().any(|&m| (rec.stream(m).fs - fs).abs() > 1e-9) {
        return Err(Error::config("segmentation requires a common sampling rate"));
    }
    let n_f = window_s * fs;
    let n = n_f.round() as usize;
    if n == 0 || (n_f - n as f64).abs() > 1e-9 {
        return Err(Error::config(format!(
            "window of {window_s} s at {fs} Hz is not a whole number of samples"
        )));
    }
    let total = Modality::ALL
        .iter()
        .map(|&m| rec.stream(m).samples.len())
        .min()
        .unwrap_or(0);
    let step = window_step(n, overlap_frac);
    let count = window_count(total, n, step);
    if count == 0 {
        log::warn!(
            "{}: recording of {total} samples is shorter than one window ({n})",
            rec.subject_id
        );
        return Ok(Segmentation {
            windows: Vec::new(),
            too_short: true,
        });
    }

    let track: Option<Vec<u32>> = rec.labels.as_ref().map(|_| {
        (0..total)
            .map(|i| rec.label_at(i as f64 / fs).unwrap_or(IGNORED_LABEL))
            .collect()
    });

    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * step;
        let mut values = Array2::zeros((n, Modality::ALL.len()));
        for m in Modality::ALL {
            let s = &rec.stream(m).samples[start..start + n];
            for (t, &v) in s.iter().enumerate() {
                values[[t, m.index()]] = v;
            }
        }
        let label = match &track {
            Some(track) => {
                let l = majority_label(&track[start..start + n])?;
                (l != IGNORED_LABEL).then_some(l)
            }
            None => None,
        };
        windows.push(Window {
            values,
            subject_id: rec.subject_id.clone(),
            label,
            t_start: start as f64 / fs,
        });
    }
    Ok(Segmentation {
        windows,
        too_short: false,
    })
}

/// Preprocessing constants for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub filter_order: usize,
    pub cutoff_hz: BTreeMap<Modality, f64>,
    pub target_fs: f64,
    pub window_s: f64,
    pub overlap_frac: f64,
}

impl Default for PreprocessConfig {
    /// WESAD/PRESAGE protocol: 0.5 Hz EDA/TEMP, 2 Hz BVP, 4 Hz, 60 s windows, 99.5 % overlap.
    fn default() -> Self {
        Self {
            filter_order: 4,
            cutoff_hz: BTreeMap::from([
                (Modality::Eda, 0.5),
                (Modality::Bvp, 2.0),
                (Modality::Temp, 0.5),
            ]),
            target_fs: 4.0,
            window_s: 60.0,
            overlap_frac: 0.995,
        }
    }
}

impl PreprocessConfig {
    pub fn window_len(&self) -> usize {
        (self.window_s * self.target_fs).round() as usize
    }

    fn cutoff(&self, m: Modality) -> Result<f64> {
        self.cutoff_hz
            .get(&m)
            .copied()
            .ok_or_else(|| Error::config(format!("no low-pass cutoff configured for {m}")))
    }
}

impl Recording {
    pub fn lowpass(mut self, cfg: &PreprocessConfig) -> Result<Recording> {
        self.advance(Stage::Raw, Stage::Filtered)?;
        for (m, s) in self.streams.iter_mut() {
            s.samples = butterworth_lowpass(&s.samples, s.fs, cfg.cutoff(*m)?, cfg.filter_order)?;
        }
        Ok(self)
    }

    pub fn normalize(mut self) -> Result<Recording> {
        self.advance(Stage::Filtered, Stage::Normalized)?;
        for s in self.streams.values_mut() {
            s.samples = zscore_normalize(&s.samples);
        }
        Ok(self)
    }

    pub fn resample(mut self, target_fs: f64) -> Result<Recording> {
        self.advance(Stage::Normalized, Stage::Resampled)?;
        for s in self.streams.values_mut() {
            s.samples = resample_to(&s.samples, s.fs, target_fs)?;
            s.fs = target_fs;
        }
        Ok(self)
    }
}

/// Full pipeline for one recording: filter, z-score, resample, segment.
pub fn preprocess_recording(rec: Recording, cfg: &PreprocessConfig) -> Result<Segmentation> {
    let rec = rec.lowpass(cfg)?.normalize()?.resample(cfg.target_fs)?;
    segment_windows(&rec, cfg.window_s, cfg.overlap_frac)
}
