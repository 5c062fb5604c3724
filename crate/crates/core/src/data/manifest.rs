//! Dataset manifests and CSV signal loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::PreprocessConfig;
use crate::error::{Error, Result};
use crate::signal::{Modality, Recording, Stream};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub eda: PathBuf,
    pub bvp: PathBuf,
    pub temp: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

impl SubjectEntry {
    pub fn path(&self, m: Modality) -> &Path {
        match m {
            Modality::Eda => &self.eda,
            Modality::Bvp => &self.bvp,
            Modality::Temp => &self.temp,
        }
    }
}

/// Mapping from raw label ids to task classes; `-1` drops the raw label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDef {
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
    pub mapping: BTreeMap<String, i64>,
}

impl TaskDef {
    fn parsed(&self, task_id: &str) -> Result<BTreeMap<u32, Option<u32>>> {
        let mut out = BTreeMap::new();
        for (raw, &class) in &self.mapping {
            let raw: u32 = raw
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("task {task_id}: raw label `{raw}` is not a non-negative integer")))?;
            let class = match class {
                -1 => None,
                c if c >= 0 && (c as usize) < self.classes => Some(c as u32),
                c => {
                    return Err(Error::config(format!(
                        "task {task_id}: class {c} outside 0..{} (use -1 to ignore)",
                        self.classes
                    )))
                }
            };
            out.insert(raw, class);
        }
        Ok(out)
    }

    /// Map the raw labels of `rec`; every raw label present must be covered.
    pub fn apply(&self, task_id: &str, rec: &Recording) -> Result<Recording> {
        let map = self.parsed(task_id)?;
        if let Some(labels) = &rec.labels {
            if let Some((_, raw)) = labels.iter().find(|(_, raw)| !map.contains_key(raw)) {
                return Err(Error::config(format!(
                    "task {task_id}: raw label {raw} of subject {} has no mapping",
                    rec.subject_id
                )));
            }
        }
        Ok(rec.map_labels(|raw| map[&raw]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub dataset_id: String,
    pub target_fs: f64,
    pub window_s: f64,
    pub overlap_frac: f64,
    pub cutoff_hz: BTreeMap<Modality, f64>,
    /// Sampling rate of each stream file; native wrist-sensor rates when omitted.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fs: BTreeMap<Modality, f64>,
    #[serde(default)]
    pub subjects: Vec<SubjectEntry>,
    #[serde(default)]
    pub tasks: BTreeMap<String, TaskDef>,
    /// Directory that relative paths resolve against; set on load.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn from_toml(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: DatasetManifest = toml::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))?;
        m.root = root.into();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, root).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("manifest: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "manifest version {} unsupported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        for m in Modality::ALL {
            if !self.cutoff_hz.contains_key(&m) {
                return Err(Error::config(format!("manifest lacks a cutoff for {m}")));
            }
        }
        if !(self.target_fs > 0.0) || !(self.window_s > 0.0) || !(0.0..1.0).contains(&self.overlap_frac) {
            return Err(Error::config("manifest needs target_fs > 0, window_s > 0 and overlap_frac in [0, 1)"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(&s.id) {
                return Err(Error::config(format!("duplicate subject id {}", s.id)));
            }
        }
        for (id, t) in &self.tasks {
            t.parsed(id)?;
        }
        Ok(())
    }

    pub fn fs(&self, m: Modality) -> f64 {
        self.fs.get(&m).copied().unwrap_or_else(|| m.native_fs())
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskDef> {
        self.tasks.get(task_id).ok_or_else(|| {
            Error::config(format!(
                "unknown task `{task_id}`; manifest defines {:?}",
                self.tasks.keys().collect::<Vec<_>>()
            ))
        })
    }

    pub fn preprocess_config(&self, filter_order: usize) -> PreprocessConfig {
        PreprocessConfig {
            filter_order,
            cutoff_hz: self.cutoff_hz.clone(),
            target_fs: self.target_fs,
            window_s: self.window_s,
            overlap_frac: self.overlap_frac,
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Parse a two-column CSV with a header; rejects malformed rows and non-finite values.
pub fn read_two_column_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", rec.len())));
        }
        let mut vals = [0.0; 2];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = rec[j].parse::<f64>().map_err(|_| parse_err(format!("not a number: `{}`", &rec[j])))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value `{}`", &rec[j])));
            }
        }
        rows.push((vals[0], vals[1]));
    }
    Ok(rows)
}

fn load_stream(path: &Path, fs: f64) -> Result<Stream> {
    let rows = read_two_column_csv(path)?;
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no samples".into(),
        });
    }
    for (i, w) in rows.windows(2).enumerate() {
        let dt = w[1].0 - w[0].0;
        if (dt * fs - 1.0).abs() > 0.01 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 3,
                msg: format!("time step {dt} s does not match the declared {fs} Hz"),
            });
        }
    }
    Ok(Stream {
        samples: rows.into_iter().map(|(_, v)| v).collect(),
        fs,
    })
}

fn load_labels(path: &Path) -> Result<Vec<(f64, u32)>> {
    read_two_column_csv(path)?
        .into_iter()
        .enumerate()
        .map(|(i, (t, c))| {
            if c < 0.0 || c.fract() != 0.0 || c > u32::MAX as f64 - 1.0 {
                Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: format!("label `{c}` is not a non-negative integer"),
                })
            } else {
                Ok((t, c as u32))
            }
        })
        .collect()
}

/// Load every subject's streams (native rates) and raw labels.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<Recording>> {
    manifest
        .subjects
        .par_iter()
        .map(|s| {
            let mut streams = BTreeMap::new();
            for m in Modality::ALL {
                streams.insert(m, load_stream(&manifest.resolve(s.path(m)), manifest.fs(m))?);
            }
            let labels = s.labels.as_ref().map(|p| load_labels(&manifest.resolve(p))).transpose()?;
            Recording::new(s.id.clone(), streams, labels)
        })
        .collect()
}

/// Manifest for the WESAD wrist data laid out by `scripts/wesad_to_csv.py`.
pub fn wesad_template() -> DatasetManifest {
    let subjects = [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 17]
        .iter()
        .map(|n| {
            let id = format!("S{n}");
            SubjectEntry {
                eda: format!("{id}/EDA.csv").into(),
                bvp: format!("{id}/BVP.csv").into(),
                temp: format!("{id}/TEMP.csv").into(),
                labels: Some(format!("{id}/labels.csv").into()),
                id,
            }
        })
        .collect();
    let raw = |pairs: &[(u32, i64)]| -> BTreeMap<String, i64> {
        (0..=7u32)
            .map(|r| (r.to_string(), pairs.iter().find(|(k, _)| *k == r).map(|(_, v)| *v).unwrap_or(-1)))
            .collect()
    };
    let mut tasks = BTreeMap::new();
    tasks.insert(
        "stress2".to_string(),
        TaskDef {
            classes: 2,
            class_names: vec!["non-stress".into(), "stress".into()],
            mapping: raw(&[(1, 0), (2, 1), (3, 0)]),
        },
    );
    tasks.insert(
        "emotion3".to_string(),
        TaskDef {
            classes: 3,
            class_names: vec!["baseline".into(), "stress".into(), "amusement".into()],
            mapping: raw(&[(1, 0), (2, 1), (3, 2)]),
        },
    );
    DatasetManifest {
        version: MANIFEST_VERSION,
        dataset_id: "wesad".into(),
        target_fs: 4.0,
        window_s: 60.0,
        overlap_frac: 0.995,
        cutoff_hz: [(Modality::Eda, 0.5), (Modality::Bvp, 2.0), (Modality::Temp, 0.5)].into_iter().collect(),
        fs: BTreeMap::new(),
        subjects,
        tasks,
        root: PathBuf::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_round_trips() {
        let t = wesad_template();
        assert_eq!(t.subjects.len(), 15);
        let back = DatasetManifest::from_toml(&t.to_toml().unwrap(), "").unwrap();
        assert_eq!(back, t);
        assert_eq!(t.task("stress2").unwrap().classes, 2);
        assert_eq!(t.task("emotion3").unwrap().classes, 3);
    }

    #[test]
    fn shipped_template_matches() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/wesad.toml");
        let mut shipped = DatasetManifest::load(&path).unwrap();
        shipped.root = PathBuf::new();
        assert_eq!(shipped, wesad_template());
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        let mut text = wesad_template().to_toml().unwrap();
        text = text.replacen("version = 1", "version = 2", 1);
        assert!(DatasetManifest::from_toml(&text, "").is_err());
        let text = format!("bogus = 1\n{}", wesad_template().to_toml().unwrap());
        assert!(DatasetManifest::from_toml(&text, "").is_err());
    }

    #[test]
    fn empty_subject_list_loads_nothing() {
        let mut m = wesad_template();
        m.subjects.clear();
        assert!(load_dataset(&m).unwrap().is_empty());
    }
}
