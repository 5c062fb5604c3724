//! Named parameter arrays and gradient sets aligned with them.

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, Ix3, IxDyn};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Trainable weights versus running statistics that the optimiser never touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayD<f64>,
}

/// Flat, insertion-ordered list of named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, kind, value });
        ParamId(self.params.len() - 1)
    }

    /// Weight drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..bound));
        self.add(name, ParamKind::Weight, value)
    }

    pub fn add_const(&mut self, name: impl Into<String>, kind: ParamKind, shape: &[usize], v: f64) -> ParamId {
        self.add(name, kind, ArrayD::from_elem(IxDyn(shape), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.params[id.0].value
    }

    pub fn v1(&self, id: ParamId) -> ArrayView1<'_, f64> {
        self.get(id).view().into_dimensionality::<Ix1>().expect("rank-1 parameter")
    }

    pub fn v2(&self, id: ParamId) -> ArrayView2<'_, f64> {
        self.get(id).view().into_dimensionality::<Ix2>().expect("rank-2 parameter")
    }

    pub fn v3(&self, id: ParamId) -> ArrayView3<'_, f64> {
        self.get(id).view().into_dimensionality::<Ix3>().expect("rank-3 parameter")
    }

    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copy every array from `other` whose name matches `keep`, checking shapes.
    pub fn copy_from(&mut self, other: &ParamStore, keep: impl Fn(&str) -> bool) -> Result<usize> {
        let mut copied = 0;
        for p in self.params.iter_mut().filter(|p| keep(&p.name)) {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array `{}`", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: src.value.shape().to_vec(),
                });
            }
            p.value.assign(&src.value);
            copied += 1;
        }
        Ok(copied)
    }
}

/// One gradient array per parameter, same order and shapes as the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    arrays: Vec<ArrayD<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            arrays: store
                .params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.arrays[id.0]
    }

    pub fn m1(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        self.arrays[id.0].view_mut().into_dimensionality::<Ix1>().expect("rank-1 gradient")
    }

    pub fn m2(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        self.arrays[id.0].view_mut().into_dimensionality::<Ix2>().expect("rank-2 gradient")
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ArrayD<f64>)> {
        self.arrays.iter().enumerate().map(|(i, a)| (ParamId(i), a))
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.arrays {
            a.mapv_inplace(|v| v * s);
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            *a += b;
        }
    }

    /// Error naming the first parameter with a non-finite gradient entry.
    pub fn check_finite(&self, store: &ParamStore) -> Result<()> {
        for (i, a) in self.arrays.iter().enumerate() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(store.params[i].name.clone()));
            }
        }
        Ok(())
    }
}
