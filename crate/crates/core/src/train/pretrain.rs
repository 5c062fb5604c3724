//! Transform-recognition pretraining.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Ctx, Network, Sgd, Targets, Task};
use crate::rng::{substream, tag};
use crate::transforms::{PretextDataset, TransformKind};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    /// Training accuracy per pretext head, from the batches as they were trained.
    pub head_accuracy: Vec<f64>,
}

/// Shuffled index batches for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, stage: &str, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, &[tag(stage), epoch as u64]));
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

pub(crate) fn check_loss(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, step, loss })
    }
}

fn check_pretext_compat(net: &Network, data: &PretextDataset) -> Result<()> {
    let e = &net.cfg.encoder;
    if net.cfg.pretext_classes != data.spec().n_classes() {
        return Err(Error::config(format!(
            "network has {} pretext classes, dataset has {}",
            net.cfg.pretext_classes,
            data.spec().n_classes()
        )));
    }
    let w = &data.windows()[0];
    if w.len() != e.window_len || w.n_modalities() != e.n_modalities {
        return Err(Error::ShapeMismatch {
            name: "pretext window".into(),
            expected: vec![e.window_len, e.n_modalities],
            found: vec![w.len(), w.n_modalities()],
        });
    }
    if data.spec().independent_per_modality && e.fusion == crate::model::Fusion::IntermediateOverallLoss {
        return Err(Error::config("a single overall pretext head needs the same label on every modality"));
    }
    Ok(())
}

fn batch(data: &PretextDataset, idx: &[usize]) -> Result<(Vec<Array2<f64>>, Vec<Vec<usize>>)> {
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = data.get(i)?;
        xs.push(s.values);
        ys.push(s.transform_labels);
    }
    Ok((xs, ys))
}

/// Train encoder and pretext heads with SGD on the summed per-modality cross-entropy.
pub fn pretrain(net: &mut Network, data: &PretextDataset, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    check_pretext_compat(net, data)?;
    let mut opt = Sgd::new(cfg.lr, cfg.weight_decay, cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    let heads = net.pretext_heads.len();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut correct = vec![0usize; heads];
        let mut seen = 0usize;
        let batches = epoch_batches(data.len(), cfg.batch_size, cfg.seed, "pretrain", epoch);
        let n_batches = batches.len();
        for (step, idx) in batches.into_iter().enumerate() {
            let (xs, ys) = batch(data, &idx)?;
            let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
            let mut ctx = Ctx::train(substream(cfg.seed, &[tag("pretrain-dropout"), epoch as u64, step as u64]));
            let out = net.step(&views, Targets::Pretext(&ys), &mut ctx)?;
            check_loss(out.loss, epoch, step)?;
            out.grads.check_finite(&net.store)?;
            opt.step(&mut net.store, &out.grads, |n| !n.starts_with("head.emotion"));
            for u in &out.bn_updates {
                u.apply(&mut net.store);
            }
            loss_sum += out.loss;
            for (h, preds) in out.predictions.iter().enumerate() {
                let m = if heads == 1 { 0 } else { h };
                correct[h] += preds.iter().zip(&ys).filter(|(p, y)| **p == y[m]).count();
            }
            seen += idx.len();
        }
        let log = EpochLog {
            epoch,
            loss: loss_sum / n_batches.max(1) as f64,
            head_accuracy: correct.iter().map(|&c| c as f64 / seen.max(1) as f64).collect(),
        };
        log::info!("pretrain epoch {epoch}: loss {:.4} acc {:?}", log.loss, log.head_accuracy);
        history.push(log);
    }
    Ok(history)
}

/// Eval-mode transform-recognition accuracy per head and averaged over heads.
pub fn evaluate_pretext(net: &Network, data: &PretextDataset, batch_size: usize) -> Result<(Vec<f64>, f64)> {
    check_pretext_compat(net, data)?;
    let heads = net.pretext_heads.len();
    let mut correct = vec![0usize; heads];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (xs, ys) = batch(data, chunk)?;
        let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
        let preds = net.predict(Task::Pretext, &views)?;
        for (h, p) in preds.iter().enumerate() {
            let m = if heads == 1 { 0 } else { h };
            correct[h] += p.iter().zip(&ys).filter(|(p, y)| **p == y[m]).count();
        }
    }
    let acc: Vec<f64> = correct.iter().map(|&c| c as f64 / data.len() as f64).collect();
    let mean = acc.iter().sum::<f64>() / heads as f64;
    Ok((acc, mean))
}

/// Per-transform accuracy of the first head, in label order.
pub fn pretext_confusion(net: &Network, data: &PretextDataset) -> Result<Vec<(TransformKind, f64)>> {
    let k = data.spec().n_classes();
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(64) {
        let (xs, ys) = batch(data, chunk)?;
        let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
        let preds = net.predict(Task::Pretext, &views)?;
        for (p, y) in preds[0].iter().zip(&ys) {
            totals[y[0]] += 1;
            hits[y[0]] += usize::from(*p == y[0]);
        }
    }
    Ok(data
        .spec()
        .kinds
        .iter()
        .zip(hits.iter().zip(&totals))
        .map(|(k, (h, t))| (*k, *h as f64 / (*t).max(1) as f64))
        .collect())
}
