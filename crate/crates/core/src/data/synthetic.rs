//! Synthetic wrist recordings with class-dependent structure.
//!
//! Each subject alternates between labelled blocks. The class shifts the BVP
//! pulse rate, the EDA level and the skin temperature; per-subject offsets,
//! slow drift and sensor noise sit on top. A short unlabelled lead-in uses raw
//! label 0, classes use raw labels `1..=n_classes`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, SubjectEntry, TaskDef, MANIFEST_VERSION};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::signal::{Modality, Recording, Stream};

/// Name of the task that every synthetic manifest defines.
pub const SYNTH_TASK: &str = "synthetic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_classes: usize,
    /// Length of each labelled block in seconds.
    pub block_s: f64,
    /// Labelled blocks per class and subject.
    pub blocks_per_class: usize,
    /// Unlabelled lead-in in seconds.
    pub lead_in_s: f64,
    /// Pulse-rate offset between neighbouring classes in Hz.
    pub bvp_class_step_hz: f64,
    /// Half-width of the uniform per-subject pulse-rate offset in Hz.
    pub bvp_subject_jitter_hz: f64,
    /// EDA level shift per class step (before the subject gain).
    pub eda_class_shift: f64,
    /// Skin-temperature drop per class step in degrees.
    pub temp_class_shift: f64,
    pub bvp_noise: f64,
    pub eda_noise: f64,
    pub temp_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 6,
            n_classes: 2,
            block_s: 60.0,
            blocks_per_class: 2,
            lead_in_s: 10.0,
            bvp_class_step_hz: 0.3,
            bvp_subject_jitter_hz: 0.1,
            eda_class_shift: 0.6,
            temp_class_shift: 0.25,
            bvp_noise: 0.2,
            eda_noise: 0.05,
            temp_noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_classes == 0 || self.blocks_per_class == 0 {
            return Err(Error::config("synthetic corpus needs >= 1 subject, class and block"));
        }
        if !(self.block_s > 0.0) || self.lead_in_s < 0.0 {
            return Err(Error::config("block_s must be > 0 and lead_in_s >= 0"));
        }
        for (name, v) in [
            ("bvp_noise", self.bvp_noise),
            ("eda_noise", self.eda_noise),
            ("temp_noise", self.temp_noise),
            ("bvp_subject_jitter_hz", self.bvp_subject_jitter_hz),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.lead_in_s + self.block_s * (self.n_classes * self.blocks_per_class) as f64
    }

    /// Centre pulse rate of `class` before the subject offset.
    pub fn bvp_hz(&self, class: usize) -> f64 {
        0.9 + self.bvp_class_step_hz * class as f64
    }

    pub fn subject_id(i: usize) -> String {
        format!("syn{i:02}")
    }
}

/// Raw label track: lead-in (raw 0) then shuffled class blocks (raw `class + 1`).
fn block_schedule(cfg: &SynthConfig, rng: &mut crate::rng::Rng) -> Vec<(f64, u32)> {
    let mut classes: Vec<u32> = (0..cfg.n_classes as u32)
        .flat_map(|c| std::iter::repeat(c).take(cfg.blocks_per_class))
        .collect();
    classes.shuffle(rng);
    let mut track = Vec::with_capacity(classes.len() + 1);
    if cfg.lead_in_s > 0.0 {
        track.push((0.0, 0));
    }
    for (i, c) in classes.into_iter().enumerate() {
        track.push((cfg.lead_in_s + i as f64 * cfg.block_s, c + 1));
    }
    track
}

fn class_at(track: &[(f64, u32)], t: f64) -> Option<usize> {
    let idx = track.partition_point(|&(ts, _)| ts <= t);
    match track[..idx].last() {
        Some(&(_, raw)) if raw > 0 => Some(raw as usize - 1),
        _ => None,
    }
}

/// One subject's raw recording at native sensor rates, with raw labels.
pub fn generate_recording(cfg: &SynthConfig, subject: usize) -> Result<Recording> {
    cfg.validate()?;
    let id = SynthConfig::subject_id(subject);
    let mut rng = substream(cfg.seed, &[tag("synth"), subject as u64]);
    let track = block_schedule(cfg, &mut rng);
    let duration = cfg.duration_s();

    let hz_offset = if cfg.bvp_subject_jitter_hz > 0.0 {
        rng.gen_range(-cfg.bvp_subject_jitter_hz..cfg.bvp_subject_jitter_hz)
    } else {
        0.0
    };
    let eda_base = rng.gen_range(1.0..4.0);
    let eda_gain = rng.gen_range(0.8..1.2);
    let eda_drift = rng.gen_range(-0.3..0.3);
    let temp_base = rng.gen_range(32.0..34.5);
    let temp_drift = rng.gen_range(-0.2..0.2);
    let bvp_amp = rng.gen_range(0.8..1.2);
    let mut phase = rng.gen_range(0.0..2.0 * PI);

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut streams = BTreeMap::new();

    // BVP: integrate the instantaneous pulse rate so block changes stay phase-continuous.
    let fs = Modality::Bvp.native_fs();
    let n = (duration * fs).round() as usize;
    let mut bvp = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        let class = class_at(&track, t).unwrap_or(0);
        let hz = cfg.bvp_hz(class) + hz_offset + 0.03 * (2.0 * PI * t / 30.0).sin();
        phase += 2.0 * PI * hz / fs;
        bvp.push(bvp_amp * phase.sin() + cfg.bvp_noise * unit.sample(&mut rng));
    }
    streams.insert(Modality::Bvp, Stream { samples: bvp, fs });

    let fs = Modality::Eda.native_fs();
    let n = (duration * fs).round() as usize;
    let mut level = eda_base;
    let mut eda = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        let class = class_at(&track, t).unwrap_or(0) as f64;
        let target = eda_base + cfg.eda_class_shift * eda_gain * class + eda_drift * t / duration;
        // first-order response with a 5 s time constant
        level += (target - level) / (5.0 * fs);
        let scr = 0.1 * (2.0 * PI * (0.05 + 0.03 * class) * t).sin().max(0.0);
        eda.push(level + scr + cfg.eda_noise * unit.sample(&mut rng));
    }
    streams.insert(Modality::Eda, Stream { samples: eda, fs });

    let fs = Modality::Temp.native_fs();
    let n = (duration * fs).round() as usize;
    let mut level = temp_base;
    let mut temp = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        let class = class_at(&track, t).unwrap_or(0) as f64;
        let target = temp_base - cfg.temp_class_shift * class + temp_drift * t / duration;
        level += (target - level) / (20.0 * fs);
        temp.push(level + cfg.temp_noise * unit.sample(&mut rng));
    }
    streams.insert(Modality::Temp, Stream { samples: temp, fs });

    Recording::new(id, streams, Some(track))
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    (0..cfg.n_subjects).map(|s| generate_recording(cfg, s)).collect()
}

/// Identity mapping from raw labels `1..=k` to classes `0..k`; raw 0 is ignored.
pub fn synth_task(n_classes: usize) -> TaskDef {
    let mut mapping = BTreeMap::from([("0".to_string(), -1)]);
    for c in 0..n_classes {
        mapping.insert((c + 1).to_string(), c as i64);
    }
    TaskDef {
        classes: n_classes,
        class_names: Vec::new(),
        mapping,
    }
}

fn csv_bytes(header: &str, rows: impl Iterator<Item = (f64, String)>) -> Vec<u8> {
    let mut s = format!("{header}\n");
    for (t, v) in rows {
        s.push_str(&format!("{t},{v}\n"));
    }
    s.into_bytes()
}

/// Write each recording as `<id>/{EDA,BVP,TEMP}.csv` plus `<id>/labels.csv` under `dir`.
pub fn write_recordings(dir: &Path, recordings: &[Recording]) -> Result<Vec<SubjectEntry>> {
    let mut subjects = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let id = &rec.subject_id;
        let rel = |f: &str| PathBuf::from(format!("{id}/{f}"));
        for m in Modality::ALL {
            let s = rec.stream(m);
            let rows = s.samples.iter().enumerate().map(|(i, v)| (i as f64 / s.fs, v.to_string()));
            write_atomic(&dir.join(rel(&format!("{}.csv", m.name().to_uppercase()))), &csv_bytes("t_sec,value", rows))?;
        }
        let labels = rec.labels.as_ref().map(|l| {
            write_atomic(&dir.join(rel("labels.csv")), &csv_bytes("t_sec,class", l.iter().map(|&(t, c)| (t, c.to_string()))))
                .map(|_| rel("labels.csv"))
        });
        subjects.push(SubjectEntry {
            id: id.clone(),
            eda: rel("EDA.csv"),
            bvp: rel("BVP.csv"),
            temp: rel("TEMP.csv"),
            labels: labels.transpose()?,
        });
    }
    Ok(subjects)
}

/// Write the corpus as per-subject CSV files plus `manifest.toml`; returns the manifest path.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig, window_s: f64, overlap_frac: f64) -> Result<PathBuf> {
    let subjects = write_recordings(dir, &generate_corpus(cfg)?)?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        dataset_id: "synthetic".into(),
        target_fs: 4.0,
        window_s,
        overlap_frac,
        cutoff_hz: [(Modality::Eda, 0.5), (Modality::Bvp, 2.0), (Modality::Temp, 0.5)].into_iter().collect(),
        fs: BTreeMap::new(),
        subjects,
        tasks: BTreeMap::from([(SYNTH_TASK.to_string(), synth_task(cfg.n_classes))]),
        root: dir.to_path_buf(),
    };
    manifest.validate()?;
    let path = dir.join("manifest.toml");
    write_atomic(&path, manifest.to_toml()?.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { n_subjects: 2, ..SynthConfig::default() };
        assert_eq!(generate_corpus(&cfg).unwrap(), generate_corpus(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_corpus(&cfg).unwrap(), generate_corpus(&other).unwrap());
    }

    #[test]
    fn native_rates_and_durations() {
        let cfg = SynthConfig { n_subjects: 1, n_classes: 3, ..SynthConfig::default() };
        let rec = generate_recording(&cfg, 0).unwrap();
        for m in Modality::ALL {
            let s = rec.stream(m);
            assert_eq!(s.fs, m.native_fs());
            assert_eq!(s.samples.len(), (cfg.duration_s() * s.fs).round() as usize);
        }
    }

    #[test]
    fn every_class_gets_its_blocks() {
        let cfg = SynthConfig { n_subjects: 1, n_classes: 3, blocks_per_class: 2, ..SynthConfig::default() };
        let rec = generate_recording(&cfg, 0).unwrap();
        let labels = rec.labels.unwrap();
        for raw in 1..=3 {
            assert_eq!(labels.iter().filter(|(_, c)| *c == raw).count(), 2);
        }
        assert_eq!(labels[0], (0.0, 0));
    }

    #[test]
    fn single_class_labels_are_identical() {
        let cfg = SynthConfig { n_subjects: 2, n_classes: 1, lead_in_s: 0.0, ..SynthConfig::default() };
        for rec in generate_corpus(&cfg).unwrap() {
            assert!(rec.labels.unwrap().iter().all(|(_, c)| *c == 1));
        }
    }
}
