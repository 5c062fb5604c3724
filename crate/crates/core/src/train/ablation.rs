//! Ablation harnesses: fusion strategy, modality subsets, missing modalities,
//! encoder components and positional encoding, pretext transform subsets.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::downstream::{select_modalities, zero_modality, TrainMode};
use super::loso::{evaluate_loso_with, FoldPrep, LosoSpec};
use super::metrics::{mean_std, F1Average, FoldResult};
use super::pretrain::pretrain;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Fusion, Network, NetworkConfig, PositionalEncoding};
use crate::rng::{substream, tag};
use crate::signal::{Modality, Window};
use crate::transforms::{PretextDataset, PretextSpec, TransformKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Fusion,
    ModalitySubset,
    MissingModality,
    ComponentsPe,
    TransformSubset,
}

impl AblationKind {
    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Fusion => "fusion",
            AblationKind::ModalitySubset => "modality_subset",
            AblationKind::MissingModality => "missing_modality",
            AblationKind::ComponentsPe => "components_pe",
            AblationKind::TransformSubset => "transform_subset",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "fusion" => Ok(AblationKind::Fusion),
            "modality_subset" => Ok(AblationKind::ModalitySubset),
            "missing_modality" => Ok(AblationKind::MissingModality),
            "components_pe" => Ok(AblationKind::ComponentsPe),
            "transform_subset" => Ok(AblationKind::TransformSubset),
            other => Err(Error::config(format!("unknown ablation kind `{other}`"))),
        }
    }
}

/// Shared inputs of every ablation variant.
#[derive(Clone, Debug)]
pub struct Experiment<'a> {
    pub net: NetworkConfig,
    pub pretext: PretextSpec,
    pub pretrain: TrainConfig,
    pub downstream: TrainConfig,
    /// Downstream mode for pretrained variants.
    pub mode: TrainMode,
    pub classes: usize,
    pub f1: F1Average,
    pub jobs: usize,
    /// Corpus for pretext training.
    pub unlabeled: &'a [Window],
    /// Labelled windows for LOSO evaluation.
    pub labeled: &'a [Window],
}

impl Experiment<'_> {
    /// Pretrain a fresh network on the unlabelled corpus.
    pub fn pretrain_network(&self, net: &NetworkConfig, spec: &PretextSpec, unlabeled: &[Window]) -> Result<Network> {
        let mut cfg = net.clone();
        cfg.pretext_classes = spec.n_classes();
        let mut model = Network::new(cfg, self.pretrain.seed)?;
        let data = PretextDataset::new(unlabeled.to_vec(), spec.clone(), self.pretrain.seed)?;
        pretrain(&mut model, &data, &self.pretrain)?;
        Ok(model)
    }

    fn loso(&self, net: &NetworkConfig, pretrained: Option<&Network>, labeled: &[Window], prep: &FoldPrep<'_>) -> Result<Vec<FoldResult>> {
        let spec = LosoSpec {
            net: net.clone(),
            pretrained,
            classes: self.classes,
            mode: if pretrained.is_some() { self.mode } else { TrainMode::Scratch },
            train: self.downstream.clone(),
            f1: self.f1,
            jobs: self.jobs,
        };
        evaluate_loso_with(labeled, &spec, prep)
    }

    /// Pretrain (unless the mode is scratch) and evaluate with LOSO.
    pub fn run_variant(&self, net: &NetworkConfig, spec: &PretextSpec, unlabeled: &[Window], labeled: &[Window]) -> Result<Vec<FoldResult>> {
        let pretrained = if self.mode.needs_pretrained() {
            Some(self.pretrain_network(net, spec, unlabeled)?)
        } else {
            None
        };
        self.loso(net, pretrained.as_ref(), labeled, &|_, tr, te| Ok((tr, te)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationOptions {
    pub modality_subsets: Vec<Vec<Modality>>,
    pub transform_subsets: Vec<Vec<TransformKind>>,
    pub missing_prob: f64,
    pub missing_repeats: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        use Modality::*;
        use TransformKind::*;
        Self {
            modality_subsets: vec![
                vec![Eda],
                vec![Bvp],
                vec![Temp],
                vec![Eda, Bvp],
                vec![Eda, Temp],
                vec![Bvp, Temp],
                vec![Eda, Bvp, Temp],
            ],
            transform_subsets: vec![
                vec![Noise],
                vec![MagnitudeWarp],
                vec![Permutation],
                vec![TimeWarp],
                vec![Crop],
                vec![Noise, MagnitudeWarp],
                vec![Permutation, TimeWarp, Crop],
                vec![Noise, MagnitudeWarp, Permutation, TimeWarp, Crop],
            ],
            missing_prob: 0.5,
            missing_repeats: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub f1: f64,
    pub f1_std: f64,
    /// Accuracy drop against the unperturbed baseline, in percentage points.
    pub drop: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,accuracy,accuracy_std,f1,f1_std,drop\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant,
                r.accuracy,
                r.accuracy_std,
                r.f1,
                r.f1_std,
                r.drop.map(|d| d.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

fn fold_row(variant: impl Into<String>, folds: &[FoldResult]) -> AblationRow {
    let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
    let (accuracy, accuracy_std) = mean_std(&acc);
    let (f1m, f1_std) = mean_std(&f1);
    AblationRow {
        variant: variant.into(),
        accuracy,
        accuracy_std,
        f1: f1m,
        f1_std,
        drop: None,
    }
}

fn modality_label(ms: &[Modality]) -> String {
    ms.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
}

pub fn run_ablation(kind: AblationKind, exp: &Experiment<'_>, opts: &AblationOptions) -> Result<AblationReport> {
    let mut rows = Vec::new();
    match kind {
        AblationKind::Fusion => {
            for (name, fusion) in [
                ("intermediate", Fusion::Intermediate),
                ("intermediate_overall_loss", Fusion::IntermediateOverallLoss),
                ("early", Fusion::Early),
                ("late", Fusion::Late),
            ] {
                let mut net = exp.net.clone();
                net.encoder.fusion = fusion;
                let folds = exp.run_variant(&net, &exp.pretext, exp.unlabeled, exp.labeled)?;
                rows.push(fold_row(name, &folds));
            }
        }
        AblationKind::ModalitySubset => {
            for subset in &opts.modality_subsets {
                if subset.is_empty() {
                    return Err(Error::config("empty modality subset"));
                }
                let cols: Vec<usize> = subset.iter().map(|m| m.index()).collect();
                let mut net = exp.net.clone();
                net.encoder.n_modalities = cols.len();
                let unl = select_modalities(exp.unlabeled, &cols);
                let lab = select_modalities(exp.labeled, &cols);
                let folds = exp.run_variant(&net, &exp.pretext, &unl, &lab)?;
                rows.push(fold_row(modality_label(subset), &folds));
            }
        }
        AblationKind::ComponentsPe => {
            let variants: [(&str, fn(&mut NetworkConfig)); 5] = [
                ("full", |_| {}),
                ("no_tcn", |n| n.encoder.use_tcn = false),
                ("no_transformer", |n| n.encoder.use_transformer = false),
                ("fixed_pe", |n| n.encoder.positional_encoding = PositionalEncoding::Fixed),
                ("learnable_pe", |n| n.encoder.positional_encoding = PositionalEncoding::Learnable),
            ];
            for (name, apply) in variants {
                let mut net = exp.net.clone();
                apply(&mut net);
                let folds = exp.run_variant(&net, &exp.pretext, exp.unlabeled, exp.labeled)?;
                rows.push(fold_row(name, &folds));
            }
        }
        AblationKind::TransformSubset => {
            for subset in &opts.transform_subsets {
                let mut spec = PretextSpec::with_subset(exp.pretext.transforms.clone(), subset)?;
                spec.independent_per_modality = exp.pretext.independent_per_modality;
                let name = spec.kinds[1..].iter().map(|k| k.code().to_string()).collect::<Vec<_>>().join("+");
                let folds = exp.run_variant(&exp.net, &spec, exp.unlabeled, exp.labeled)?;
                rows.push(fold_row(name, &folds));
            }
        }
        AblationKind::MissingModality => {
            if !(0.0..=1.0).contains(&opts.missing_prob) || opts.missing_repeats == 0 {
                return Err(Error::config("missing_prob must lie in [0, 1] and missing_repeats >= 1"));
            }
            let pretrained = if exp.mode.needs_pretrained() {
                Some(exp.pretrain_network(&exp.net, &exp.pretext, exp.unlabeled)?)
            } else {
                None
            };
            let base = exp.loso(&exp.net, pretrained.as_ref(), exp.labeled, &|_, tr, te| Ok((tr, te)))?;
            let base_row = fold_row("none", &base);
            let base_acc = base_row.accuracy;
            rows.push(AblationRow {
                drop: Some(0.0),
                ..base_row
            });
            let n_mod = exp.net.encoder.n_modalities;
            for m in 0..n_mod {
                let mut accs = Vec::with_capacity(opts.missing_repeats);
                let mut f1s = Vec::with_capacity(opts.missing_repeats);
                for r in 0..opts.missing_repeats {
                    let seed = exp.downstream.seed;
                    let p = opts.missing_prob;
                    let prep = move |subject: &str, mut tr: Vec<Window>, mut te: Vec<Window>| -> Result<(Vec<Window>, Vec<Window>)> {
                        for (part, ws) in [(0u64, &mut tr), (1u64, &mut te)] {
                            let mut rng = substream(seed, &[tag("missing"), m as u64, r as u64, tag(subject), part]);
                            let mask: Vec<bool> = (0..ws.len()).map(|_| rng.gen::<f64>() < p).collect();
                            zero_modality(ws, m, &mask);
                        }
                        Ok((tr, te))
                    };
                    let folds = exp.loso(&exp.net, pretrained.as_ref(), exp.labeled, &prep)?;
                    let row = fold_row("", &folds);
                    accs.push(row.accuracy);
                    f1s.push(row.f1);
                }
                let (accuracy, accuracy_std) = mean_std(&accs);
                let (f1, f1_std) = mean_std(&f1s);
                let name = Modality::ALL.get(m).map(|x| x.name().to_string()).unwrap_or_else(|| format!("modality{m}"));
                rows.push(AblationRow {
                    variant: format!("missing_{name}"),
                    accuracy,
                    accuracy_std,
                    f1,
                    f1_std,
                    drop: Some(100.0 * (base_acc - accuracy)),
                });
            }
        }
    }
    Ok(AblationReport { kind, rows })
}
