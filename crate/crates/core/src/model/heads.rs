//! Classification heads and cross-entropy.

use ndarray::{s, Array2, Axis};

use super::layers::{apply_mask, relu, relu_backward, BatchNorm, BnCache, BnUpdate, Ctx, Linear};
use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Linear, batch-norm, ReLU, dropout, linear; reads columns `input.0..input.1` of the pooled features.
#[derive(Clone, Debug)]
pub struct ClassHead {
    pub l1: Linear,
    pub bn: BatchNorm,
    pub l2: Linear,
    pub dropout: f64,
    pub input: (usize, usize),
}

pub struct HeadCache {
    x: Array2<f64>,
    bn: BnCache,
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
    dropped: Array2<f64>,
}

impl ClassHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: (usize, usize),
        hidden: usize,
        classes: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        let inp = input.1 - input.0;
        Self {
            l1: Linear::new(store, &format!("{name}.l1"), inp, hidden, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), hidden),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, classes, rng),
            dropout,
            input,
        }
    }

    pub fn classes(&self) -> usize {
        self.l2.out
    }

    pub fn forward(&self, s: &ParamStore, features: &Array2<f64>, ctx: &mut Ctx) -> (Array2<f64>, HeadCache, Option<BnUpdate>) {
        let x = features.slice(s![.., self.input.0..self.input.1]).to_owned();
        let h = self.l1.forward(s, &x);
        let (n, bn, update) = self.bn.forward(s, &h, ctx.train);
        let act = relu(&n);
        let mask = ctx.dropout_mask(act.dim(), self.dropout);
        let mut dropped = act.clone();
        apply_mask(&mut dropped, &mask);
        let logits = self.l2.forward(s, &dropped);
        (
            logits,
            HeadCache {
                x,
                bn,
                act,
                mask,
                dropped,
            },
            update,
        )
    }

    /// Adds the gradient with respect to the pooled features into `d_features`.
    pub fn backward(&self, s: &ParamStore, c: &HeadCache, g: &Array2<f64>, grads: &mut Grads, d_features: &mut Array2<f64>) {
        let mut gd = self.l2.backward(s, &c.dropped, g, grads);
        apply_mask(&mut gd, &c.mask);
        let gn = relu_backward(&c.act, &gd);
        let gh = self.bn.backward(s, &c.bn, &gn, grads);
        let gx = self.l1.backward(s, &c.x, &gh, grads);
        let mut dst = d_features.slice_mut(s![.., self.input.0..self.input.1]);
        dst += &gx;
    }
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Batch-mean cross-entropy of `logits` `[B, K]` and the gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, k) = logits.dim();
    if labels.len() != b || b == 0 {
        return Err(Error::input(format!("{} labels for {b} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::input(format!("label {bad} out of range for {k} classes")));
    }
    let mut loss = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    let mut grad = softmax(logits);
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    grad /= b as f64;
    Ok((loss / b as f64, grad))
}

/// Per-modality cross-entropies and their sum.
pub fn pretext_loss(per_modality_logits: &[Array2<f64>], per_modality_labels: &[Vec<usize>]) -> Result<(f64, Vec<f64>)> {
    if per_modality_logits.len() != per_modality_labels.len() {
        return Err(Error::input("one label set per modality head required"));
    }
    let parts = per_modality_logits
        .iter()
        .zip(per_modality_labels)
        .map(|(l, y)| cross_entropy(l, y).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    Ok((parts.iter().sum(), parts))
}

pub fn supervised_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    cross_entropy(logits, labels).map(|(v, _)| v)
}

pub fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.axis_iter(Axis(0))
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_anchors() {
        let (l, _) = cross_entropy(&Array2::zeros((4, 6)), &[0, 1, 2, 5]).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
        let (l, _) = cross_entropy(&array![[0.0, 0.0]], &[0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let mut sat = Array2::zeros((1, 6));
        sat[[0, 3]] = 20.0;
        assert!(cross_entropy(&sat, &[3]).unwrap().0 < 1e-6);
        assert!(cross_entropy(&sat, &[6]).is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax_rows(&array![[1.0, 3.0, 3.0], [0.0, -1.0, -2.0]]), vec![1, 0]);
    }
}
