//! Emotion-classification training in frozen, fine-tuned and from-scratch modes.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::pretrain::{check_loss, epoch_batches};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Ctx, Network, NetworkConfig, Sgd, Targets, Task};
use crate::rng::{substream, tag};
use crate::signal::{Window, IGNORED_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Pretrained encoder kept fixed; only the emotion head learns.
    Frozen,
    /// Pretrained encoder updated together with the emotion head.
    Finetuned,
    /// Random initialisation, everything trained.
    Scratch,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Frozen => "frozen",
            TrainMode::Finetuned => "finetuned",
            TrainMode::Scratch => "scratch",
        }
    }

    pub fn needs_pretrained(self) -> bool {
        self != TrainMode::Scratch
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "frozen" => Ok(TrainMode::Frozen),
            "finetuned" | "fine-tuned" => Ok(TrainMode::Finetuned),
            "scratch" | "supervised" => Ok(TrainMode::Scratch),
            other => Err(Error::config(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Windows that carry a usable class label, with the label as an index.
pub fn labeled_windows(windows: &[Window], classes: usize) -> Result<(Vec<&Window>, Vec<usize>)> {
    let mut ws = Vec::new();
    let mut ys = Vec::new();
    for w in windows {
        match w.label {
            Some(l) if l != IGNORED_LABEL => {
                if l as usize >= classes {
                    return Err(Error::config(format!(
                        "window of subject {} has class {l} but the task has {classes} classes",
                        w.subject_id
                    )));
                }
                ws.push(w);
                ys.push(l as usize);
            }
            _ => {}
        }
    }
    Ok((ws, ys))
}

fn views<'a>(ws: &'a [&Window], idx: &[usize]) -> Vec<ArrayView2<'a, f64>> {
    idx.iter().map(|&i| ws[i].values.view()).collect()
}

/// Build the starting network for `mode`.
pub fn initial_network(init: Option<&Network>, net_cfg: &NetworkConfig, classes: usize, mode: TrainMode, seed: u64) -> Result<Network> {
    match (mode, init) {
        (TrainMode::Scratch, None) => {
            let mut cfg = net_cfg.clone();
            cfg.emotion_classes = classes;
            Network::new(cfg, seed)
        }
        (TrainMode::Scratch, Some(_)) => Err(Error::config("scratch training does not take a pretrained checkpoint")),
        (_, None) => Err(Error::config(format!("{mode} training requires a pretrained checkpoint"))),
        (_, Some(net)) => net.with_emotion_classes(classes, seed),
    }
}

/// Train an emotion classifier on the labelled `windows`.
pub fn train_downstream(
    init: Option<&Network>,
    net_cfg: &NetworkConfig,
    windows: &[Window],
    classes: usize,
    mode: TrainMode,
    cfg: &TrainConfig,
) -> Result<Network> {
    cfg.validate()?;
    let (ws, ys) = labeled_windows(windows, classes)?;
    if ws.is_empty() {
        return Err(Error::input("no labelled windows to train on"));
    }
    for c in 0..classes {
        if !ys.contains(&c) {
            log::warn!("class {c} absent from the training data");
        }
    }
    let mut net = initial_network(init, net_cfg, classes, mode, cfg.seed)?;
    let mut opt = Sgd::new(cfg.lr, cfg.weight_decay, cfg.momentum);

    let frozen_features = if mode == TrainMode::Frozen {
        let all: Vec<usize> = (0..ws.len()).collect();
        Some(net.features(&views(&ws, &all), &mut Ctx::eval())?)
    } else {
        None
    };

    for epoch in 0..cfg.epochs {
        for (step, idx) in epoch_batches(ws.len(), cfg.batch_size, cfg.seed, "downstream", epoch)
            .into_iter()
            .enumerate()
        {
            let y: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
            let mut ctx = Ctx::train(substream(cfg.seed, &[tag("downstream-dropout"), epoch as u64, step as u64]));
            let out = match &frozen_features {
                Some(f) => net.head_step(&f.select(Axis(0), &idx), Targets::Emotion(&y), &mut ctx)?.0,
                None => net.step(&views(&ws, &idx), Targets::Emotion(&y), &mut ctx)?,
            };
            check_loss(out.loss, epoch, step)?;
            out.grads.check_finite(&net.store)?;
            if frozen_features.is_some() {
                opt.step(&mut net.store, &out.grads, |n| n.starts_with("head.emotion"));
            } else {
                opt.step(&mut net.store, &out.grads, |n| !n.starts_with("head.pretext"));
            }
            for u in &out.bn_updates {
                u.apply(&mut net.store);
            }
        }
    }
    Ok(net)
}

/// Eval-mode class predictions for `windows`.
pub fn predict_windows(net: &Network, windows: &[&Window]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let v: Vec<ArrayView2<f64>> = chunk.iter().map(|w| w.values.view()).collect();
        out.extend(net.predict(Task::Emotion, &v)?.remove(0));
    }
    Ok(out)
}

/// Zero column `modality` in the windows selected by `mask`.
pub fn zero_modality(windows: &mut [Window], modality: usize, mask: &[bool]) {
    for (w, &m) in windows.iter_mut().zip(mask) {
        if m {
            w.values.column_mut(modality).fill(0.0);
        }
    }
}

/// Keep only `columns` of every window.
pub fn select_modalities(windows: &[Window], columns: &[usize]) -> Vec<Window> {
    windows
        .iter()
        .map(|w| Window {
            values: w.values.select(Axis(1), columns),
            ..w.clone()
        })
        .collect()
}
