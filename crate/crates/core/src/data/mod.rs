//! Dataset manifests, file formats and the synthetic corpus.

pub mod checkpoint;
pub mod manifest;
pub mod store;
pub mod synthetic;

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dsp::{preprocess_recording, PreprocessConfig};
use crate::error::{Error, Result};
use crate::signal::{Recording, Window};

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint, ModelStage};
pub use manifest::{load_dataset, read_two_column_csv, wesad_template, DatasetManifest, SubjectEntry, TaskDef};
pub use store::{read_pretext, read_windows, write_pretext, write_windows};
pub use synthetic::{generate_corpus, generate_recording, synth_task, write_corpus, write_recordings, SynthConfig, SYNTH_TASK};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to a sibling temp file under an exclusive lock, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.lock().map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::input(format!("json: {e}")))?;
    write_atomic(path, format!("{text}\n").as_bytes())
}

/// Preprocess every recording; subjects shorter than one window contribute nothing.
pub fn preprocess_dataset(recordings: Vec<Recording>, cfg: &PreprocessConfig) -> Result<Vec<Window>> {
    let per_subject: Vec<Vec<Window>> = recordings
        .into_par_iter()
        .map(|r| preprocess_recording(r, cfg).map(|s| s.windows))
        .collect::<Result<_>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}

/// Load, label-map and preprocess a manifest's subjects. Without a task the labels are dropped.
pub fn load_windows(manifest: &DatasetManifest, task: Option<&str>, cfg: &PreprocessConfig) -> Result<Vec<Window>> {
    let recs = load_dataset(manifest)?;
    let recs = match task {
        Some(t) => {
            let def = manifest.task(t)?;
            recs.iter().map(|r| def.apply(t, r)).collect::<Result<Vec<_>>>()?
        }
        None => recs
            .into_iter()
            .map(|mut r| {
                r.labels = None;
                r
            })
            .collect(),
    };
    preprocess_dataset(recs, cfg)
}

/// Pick `requested`, or the manifest's only task; returns the task id and its class count.
pub fn resolve_task(manifest: &DatasetManifest, requested: Option<&str>) -> Result<(String, usize)> {
    let id = match requested {
        Some(t) => t.to_string(),
        None if manifest.tasks.len() == 1 => manifest.tasks.keys().next().cloned().expect("one task"),
        None => {
            return Err(Error::config(format!(
                "manifest defines {} tasks; choose one with eval.task",
                manifest.tasks.len()
            )))
        }
    };
    let classes = manifest.task(&id)?.classes;
    Ok((id, classes))
}
