//! Dense building blocks with explicit forward and backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng as _, SeedableRng};

use super::params::{Grads, ParamId, ParamKind, ParamStore};
use crate::rng::Rng;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode plus the random stream for dropout masks.
pub struct Ctx {
    pub train: bool,
    rng: Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: Rng::seed_from_u64(0),
        }
    }

    pub fn train(rng: Rng) -> Self {
        Self { train: true, rng }
    }

    /// Inverted-dropout mask, or `None` when dropout is inactive.
    pub fn dropout_mask(&mut self, shape: (usize, usize), p: f64) -> Option<Array2<f64>> {
        if !self.train || p <= 0.0 {
            return None;
        }
        let keep = 1.0 - p;
        let rng = &mut self.rng;
        Some(Array2::from_shape_simple_fn(shape, || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }
}

pub fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut d = g.clone();
    d.zip_mut_with(out, |d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    d
}

/// Row-wise affine map `x W + b`, `W` of shape `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[inp, out], inp, rng);
        let b = store.add_const(format!("{name}.b"), ParamKind::Weight, &[out], 0.0);
        Self { w, b, inp, out }
    }

    pub fn forward(&self, s: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&s.v2(self.w)) + &s.v1(self.b)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, s: &ParamStore, x: &Array2<f64>, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        grads.m2(self.w).scaled_add(1.0, &x.t().dot(g));
        grads.m1(self.b).scaled_add(1.0, &g.sum_axis(Axis(0)));
        g.dot(&s.v2(self.w).t())
    }
}

/// Normalisation over the last axis of each row.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add_const(format!("{name}.gamma"), ParamKind::Weight, &[dim], 1.0);
        let beta = store.add_const(format!("{name}.beta"), ParamKind::Weight, &[dim], 0.0);
        Self { gamma, beta, dim }
    }

    pub fn forward(&self, s: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let d = self.dim as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &s.v1(self.gamma) + &s.v1(self.beta);
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, s: &ParamStore, c: &LnCache, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        grads.m1(self.gamma).scaled_add(1.0, &(g * &c.xhat).sum_axis(Axis(0)));
        grads.m1(self.beta).scaled_add(1.0, &g.sum_axis(Axis(0)));
        let gx = g * &s.v1(self.gamma);
        let d = self.dim as f64;
        let sum_g = gx.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_gx = (&gx * &c.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut dx = gx * d - &sum_g - &(&c.xhat * &sum_gx);
        dx *= &(c.inv_std.view().insert_axis(Axis(1)).mapv(|v| v / d));
        dx
    }
}

/// Batch normalisation over the rows of a `[B, F]` batch, with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub dim: usize,
}

pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

/// New running statistics produced by a training-mode batch-norm pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add_const(format!("{name}.gamma"), ParamKind::Weight, &[dim], 1.0);
        let beta = store.add_const(format!("{name}.beta"), ParamKind::Weight, &[dim], 0.0);
        let mean = store.add_const(format!("{name}.running_mean"), ParamKind::Buffer, &[dim], 0.0);
        let var = store.add_const(format!("{name}.running_var"), ParamKind::Buffer, &[dim], 1.0);
        Self {
            gamma,
            beta,
            mean,
            var,
            dim,
        }
    }

    /// Batch statistics are used in training mode when the batch has at least two rows;
    /// otherwise the stored running statistics are.
    pub fn forward(&self, s: &ParamStore, x: &Array2<f64>, train: bool) -> (Array2<f64>, BnCache, Option<BnUpdate>) {
        let b = x.nrows();
        let batch_stats = train && b >= 2;
        let (mean, var, update) = if batch_stats {
            let mean = x.sum_axis(Axis(0)) / b as f64;
            let var = (x - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / b as f64;
            let unbiased = &var * (b as f64 / (b as f64 - 1.0));
            let update = BnUpdate {
                mean_id: self.mean,
                var_id: self.var,
                mean: &s.v1(self.mean) * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM,
                var: &s.v1(self.var) * (1.0 - BN_MOMENTUM) + unbiased * BN_MOMENTUM,
            };
            (mean, var, Some(update))
        } else {
            (s.v1(self.mean).to_owned(), s.v1(self.var).to_owned(), None)
        };
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &s.v1(self.gamma) + &s.v1(self.beta);
        (
            y,
            BnCache {
                xhat,
                inv_std,
                batch_stats,
            },
            update,
        )
    }

    pub fn backward(&self, s: &ParamStore, c: &BnCache, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        grads.m1(self.gamma).scaled_add(1.0, &(g * &c.xhat).sum_axis(Axis(0)));
        grads.m1(self.beta).scaled_add(1.0, &g.sum_axis(Axis(0)));
        let gx = g * &s.v1(self.gamma);
        if !c.batch_stats {
            return gx * &c.inv_std;
        }
        let b = g.nrows() as f64;
        let sum_g = gx.sum_axis(Axis(0));
        let sum_gx = (&gx * &c.xhat).sum_axis(Axis(0));
        let dx = gx * b - &sum_g - &(&c.xhat * &sum_gx);
        dx * &(&c.inv_std / b)
    }
}

impl BnUpdate {
    pub fn apply(&self, store: &mut ParamStore) {
        store.get_mut(self.mean_id).assign(&self.mean.view().into_dyn());
        store.get_mut(self.var_id).assign(&self.var.view().into_dyn());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand2(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((r, c), || rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut s = ParamStore::new();
        let ln = LayerNorm::new(&mut s, "ln", 16);
        let (y, _) = ln.forward(&s, &rand2(10, 16, 1));
        for row in y.rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_eval_is_deterministic_and_single_row_safe() {
        let mut s = ParamStore::new();
        let bn = BatchNorm::new(&mut s, "bn", 4);
        let x = rand2(1, 4, 2);
        let (a, _, u) = bn.forward(&s, &x, true);
        assert!(u.is_none());
        let (b, _, _) = bn.forward(&s, &x, false);
        assert_eq!(a, b);
        let (_, _, u) = bn.forward(&s, &rand2(5, 4, 3), true);
        assert!(u.is_some());
    }

    #[test]
    fn dropout_inactive_in_eval() {
        let mut ctx = Ctx::eval();
        assert!(ctx.dropout_mask((3, 3), 0.5).is_none());
        let mut ctx = Ctx::train(Rng::seed_from_u64(0));
        let m = ctx.dropout_mask((50, 50), 0.5).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
