//! Stochastic gradient descent with L2 weight decay and optional momentum.

use ndarray::ArrayD;

use super::params::{Grads, ParamKind, ParamStore};

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    velocity: Vec<Option<ArrayD<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, weight_decay: f64, momentum: f64) -> Self {
        Self {
            lr,
            weight_decay,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Update every weight accepted by `trainable`; buffers are never touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, trainable: impl Fn(&str) -> bool) {
        if self.velocity.len() != store.len() {
            self.velocity = vec![None; store.len()];
        }
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight && trainable(&p.name))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let mut g = grads.get(id).clone();
            if self.weight_decay != 0.0 {
                g.scaled_add(self.weight_decay, store.get(id));
            }
            if self.momentum != 0.0 {
                let v = self.velocity[id.index()].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
                *v *= self.momentum;
                *v += &g;
                g.assign(v);
            }
            store.get_mut(id).scaled_add(-self.lr, &g);
        }
    }
}
