//! Run configuration: one versioned TOML file plus dotted-key overrides.
//!
//! Loading starts from the built-in defaults, merges the file on top, then
//! applies `key.path=value` overrides. The merged tree is deserialised
//! strictly, so a misspelt key anywhere is an error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::data::{sha256_hex, DatasetManifest, SynthConfig};
use crate::dsp::PreprocessConfig;
use crate::error::{Error, Result};
use crate::model::{NetworkConfig, PositionalEncoding};
use crate::train::{AblationOptions, F1Average, SampleSize, TrainConfig, TrainMode};
use crate::transforms::PretextSpec;

pub const CONFIG_VERSION: u32 = 1;

/// Preprocessing knobs; windowing falls back to the dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessOptions {
    pub filter_order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_frac: Option<f64>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            filter_order: 4,
            window_s: None,
            overlap_frac: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Task id in the dataset manifest; the only task is used when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub mode: TrainMode,
    pub f1: F1Average,
    /// Fraction of pretext samples held out for the accuracy estimate.
    pub pretext_holdout: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            task: None,
            mode: TrainMode::Finetuned,
            f1: F1Average::Macro,
            pretext_holdout: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowDataOptions {
    pub sizes: Vec<SampleSize>,
    pub repeats: usize,
}

impl Default for LowDataOptions {
    fn default() -> Self {
        Self {
            sizes: vec![
                SampleSize::PerClass(1),
                SampleSize::PerClass(50),
                SampleSize::PerClass(100),
                SampleSize::PerClass(500),
                SampleSize::PerClass(1000),
            ],
            repeats: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub preprocess: PreprocessOptions,
    pub synth: SynthConfig,
    pub network: NetworkConfig,
    pub pretext: PretextSpec,
    pub pretrain: TrainConfig,
    pub downstream: TrainConfig,
    pub eval: EvalOptions,
    pub lowdata: LowDataOptions,
    pub ablation: AblationOptions,
}

impl Default for RunConfig {
    /// Published full-scale recipe with the WESAD downstream schedule.
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            preprocess: PreprocessOptions::default(),
            synth: SynthConfig::default(),
            network: NetworkConfig::default(),
            pretext: PretextSpec::default(),
            pretrain: TrainConfig::default(),
            downstream: TrainConfig::wesad(),
            eval: EvalOptions::default(),
            lowdata: LowDataOptions::default(),
            ablation: AblationOptions::default(),
        }
    }
}

impl RunConfig {
    /// Reduced model and 10 s windows so that full experiments fit on one CPU core.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.preprocess.window_s = Some(10.0);
        c.preprocess.overlap_frac = Some(0.9);
        let e = &mut c.network.encoder;
        e.window_len = 40;
        e.d_embed = 16;
        e.n_heads = 2;
        e.ff_dim = 16;
        e.tcn_filters = 8;
        e.positional_encoding = PositionalEncoding::None;
        c.network.pretext_hidden = 32;
        c.network.emotion_hidden = 48;
        c.downstream = TrainConfig {
            lr: 5e-3,
            batch_size: 32,
            epochs: 10,
            ..TrainConfig::default()
        };
        // class evidence only in the pulse rate, so the task is not solved by a level shift
        c.synth = SynthConfig {
            n_subjects: 4,
            blocks_per_class: 3,
            eda_class_shift: 0.0,
            temp_class_shift: 0.0,
            ..SynthConfig::default()
        };
        c.lowdata = LowDataOptions {
            sizes: vec![SampleSize::PerClass(50)],
            repeats: 10,
        };
        c.ablation.missing_repeats = 3;
        c
    }

    /// Defaults, then the optional file, then each `key=value` override.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = Value::try_from(Self::default()).map_err(|e| Error::config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let user: Value = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            merge(&mut tree, user);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg.with_stage_seeds())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg.with_stage_seeds())
    }

    /// Copy the run seed into the per-stage training configs.
    pub fn with_stage_seeds(mut self) -> Self {
        self.pretrain.seed = self.seed;
        self.downstream.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.preprocess.filter_order == 0 {
            return Err(Error::config("preprocess.filter_order must be >= 1"));
        }
        self.synth.validate()?;
        self.network.validate()?;
        self.pretext.validate()?;
        self.pretrain.validate()?;
        self.downstream.validate()?;
        if self.network.pretext_classes != self.pretext.n_classes() {
            return Err(Error::config(format!(
                "network.pretext_classes = {} but pretext.kinds has {} entries",
                self.network.pretext_classes,
                self.pretext.n_classes()
            )));
        }
        if !(0.0..1.0).contains(&self.eval.pretext_holdout) {
            return Err(Error::config("eval.pretext_holdout must lie in [0, 1)"));
        }
        if self.lowdata.repeats == 0 || self.lowdata.sizes.is_empty() {
            return Err(Error::config("lowdata needs >= 1 size and >= 1 repeat"));
        }
        Ok(())
    }

    /// Preprocessing for `manifest` with this run's overrides applied.
    pub fn preprocess_for(&self, manifest: &DatasetManifest) -> Result<PreprocessConfig> {
        let mut p = manifest.preprocess_config(self.preprocess.filter_order);
        if let Some(w) = self.preprocess.window_s {
            p.window_s = w;
        }
        if let Some(o) = self.preprocess.overlap_frac {
            p.overlap_frac = o;
        }
        if p.window_len() != self.network.encoder.window_len {
            return Err(Error::config(format!(
                "windows of {} s at {} Hz give {} samples but network.encoder.window_len = {}",
                p.window_s,
                p.target_fs,
                p.window_len(),
                self.network.encoder.window_len
            )));
        }
        Ok(p)
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key `{key}`")));
    }
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("`{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parse_value(raw.trim()));
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    unreachable!("non-empty key path")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for c in [RunConfig::default(), RunConfig::desk()] {
            let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let c = RunConfig::load(None, &["pretrain.lr=0.01".into(), "eval.mode=scratch".into(), "seed=9".into()]).unwrap();
        assert_eq!(c.pretrain.lr, 0.01);
        assert_eq!(c.eval.mode, TrainMode::Scratch);
        assert_eq!(c.pretrain.seed, 9);
        assert!(RunConfig::load(None, &["pretrain.lr_typo=0.01".into()]).unwrap_err().is_config_error());
        assert!(RunConfig::load(None, &["network.encoder.bogus=1".into()]).is_err());
        assert!(RunConfig::load(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn published_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.pretrain.lr, 5e-3);
        assert_eq!(c.pretrain.batch_size, 32);
        assert_eq!(c.pretrain.weight_decay, 5e-7);
        assert_eq!(c.downstream.lr, 1e-4);
        assert_eq!(c.downstream.batch_size, 128);
        assert_eq!(c.network.encoder.d_embed, 128);
        assert_eq!(c.network.encoder.window_len, 240);
        assert_eq!(c.network.pretext_classes, 6);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.pretrain.epochs += 1;
        assert_eq!(a.hash().unwrap(), RunConfig::default().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn shipped_config_files_match_presets() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        assert_eq!(RunConfig::load(Some(&dir.join("default.toml")), &[]).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::load(Some(&dir.join("desk.toml")), &[]).unwrap(), RunConfig::desk());
    }
}
