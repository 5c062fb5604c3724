//! Recordings, modalities and fixed-length windows.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrist-sensor modalities, in stacking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eda,
    Bvp,
    Temp,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Eda, Modality::Bvp, Modality::Temp];

    pub fn index(self) -> usize {
        match self {
            Modality::Eda => 0,
            Modality::Bvp => 1,
            Modality::Temp => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Eda => "eda",
            Modality::Bvp => "bvp",
            Modality::Temp => "temp",
        }
    }

    /// Native sampling rate of the wrist sensor.
    pub fn native_fs(self) -> f64 {
        match self {
            Modality::Eda | Modality::Temp => 4.0,
            Modality::Bvp => 64.0,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eda" => Ok(Modality::Eda),
            "bvp" => Ok(Modality::Bvp),
            "temp" => Ok(Modality::Temp),
            other => Err(Error::config(format!("unknown modality `{other}`"))),
        }
    }
}

/// Class id used for label samples that a task mapping discards.
pub const IGNORED_LABEL: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub samples: Vec<f64>,
    pub fs: f64,
}

/// Preprocessing stage reached by a [`Recording`]. Stages only move forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Raw,
    Filtered,
    Normalized,
    Resampled,
}

/// One subject's continuous multimodal streams.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub streams: BTreeMap<Modality, Stream>,
    /// `(t_sec, class)` change points, sorted by time. A class holds until the next entry.
    pub labels: Option<Vec<(f64, u32)>>,
    stage: Stage,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        streams: BTreeMap<Modality, Stream>,
        labels: Option<Vec<(f64, u32)>>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        for m in Modality::ALL {
            let s = streams
                .get(&m)
                .ok_or_else(|| Error::input(format!("{subject_id}: missing modality {m}")))?;
            if s.samples.is_empty() {
                return Err(Error::input(format!("{subject_id}: empty {m} stream")));
            }
            if !(s.fs > 0.0 && s.fs.is_finite()) {
                return Err(Error::input(format!("{subject_id}: {m} sampling rate must be > 0")));
            }
            if let Some(i) = s.samples.iter().position(|v| !v.is_finite()) {
                return Err(Error::input(format!("{subject_id}: non-finite {m} sample at index {i}")));
            }
        }
        if let Some(labels) = &labels {
            if labels.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::input(format!("{subject_id}: label timestamps not sorted")));
            }
        }
        Ok(Self {
            subject_id,
            streams,
            labels,
            stage: Stage::Raw,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn stream(&self, m: Modality) -> &Stream {
        &self.streams[&m]
    }

    pub(crate) fn advance(&mut self, expected: Stage, next: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::config(format!(
                "{}: preprocessing out of order, expected stage {expected:?} but recording is {:?}",
                self.subject_id, self.stage
            )));
        }
        self.stage = next;
        Ok(())
    }

    /// Duration of the shortest stream in seconds.
    pub fn duration_s(&self) -> f64 {
        self.streams
            .values()
            .map(|s| s.samples.len() as f64 / s.fs)
            .fold(f64::INFINITY, f64::min)
    }

    /// Class id at time `t`, following the step-function reading of the label track.
    pub fn label_at(&self, t: f64) -> Option<u32> {
        let labels = self.labels.as_ref()?;
        let idx = labels.partition_point(|&(ts, _)| ts <= t + 1e-9);
        (idx > 0).then(|| labels[idx - 1].1)
    }

    /// Replace raw class ids through `map`; ids mapped to `None` become [`IGNORED_LABEL`].
    pub fn map_labels(&self, map: impl Fn(u32) -> Option<u32>) -> Recording {
        let mut out = self.clone();
        if let Some(labels) = &mut out.labels {
            for (_, c) in labels.iter_mut() {
                *c = map(*c).unwrap_or(IGNORED_LABEL);
            }
        }
        out
    }
}

/// A fixed-length multimodal segment, `values` has shape `[N, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub values: Array2<f64>,
    pub subject_id: String,
    pub label: Option<u32>,
    pub t_start: f64,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_modalities(&self) -> usize {
        self.values.ncols()
    }
}
