//! Multi-head self-attention and the post-norm transformer block.

use ndarray::{s, Array2, Axis};

use super::layers::{apply_mask, relu, relu_backward, Ctx, LayerNorm, Linear, LnCache};
use super::params::{Grads, ParamStore};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub dim: usize,
}

pub struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax weights per head, each `[T, T]`.
    pub weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, n_heads: usize, rng: &mut Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            n_heads,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn forward(&self, st: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, AttnCache) {
        let q = self.q.forward(st, x);
        let k = self.k.forward(st, x);
        let v = self.v.forward(st, x);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros(x.raw_dim());
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut a);
            concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            weights.push(a);
        }
        let out = self.o.forward(st, &concat);
        (
            out,
            AttnCache {
                q,
                k,
                v,
                weights,
                concat,
            },
        )
    }

    pub fn backward(&self, st: &ParamStore, x: &Array2<f64>, c: &AttnCache, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let dconcat = self.o.backward(st, &c.concat, g, grads);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &c.weights[h];
            let dout = dconcat.slice(cols);
            dv.slice_mut(cols).assign(&a.t().dot(&dout));
            let da = dout.dot(&c.v.slice(cols).t());
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (da - &row_dot) * a * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let mut dx = self.q.backward(st, x, &dq, grads);
        dx += &self.k.backward(st, x, &dk, grads);
        dx += &self.v.backward(st, x, &dv, grads);
        dx
    }
}

/// `LN1(x + drop(MHA(x)))` followed by `LN2(h + drop(FF(h)))`, FF = Linear, ReLU, dropout, Linear.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
    pub dropout: f64,
}

pub struct BlockCache {
    pub attn: AttnCache,
    m_attn: Option<Array2<f64>>,
    ln1: LnCache,
    h1: Array2<f64>,
    f1: Array2<f64>,
    m_ff: Option<Array2<f64>>,
    f1d: Array2<f64>,
    m_out: Option<Array2<f64>>,
    ln2: LnCache,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, n_heads: usize, ff_dim: usize, dropout: f64, rng: &mut Rng) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, n_heads, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ff1: Linear::new(store, &format!("{name}.ff.l1"), dim, ff_dim, rng),
            ff2: Linear::new(store, &format!("{name}.ff.l2"), ff_dim, dim, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            dropout,
        }
    }

    pub fn forward(&self, s: &ParamStore, x: &Array2<f64>, ctx: &mut Ctx) -> (Array2<f64>, BlockCache) {
        let (mut a, attn) = self.attn.forward(s, x);
        let m_attn = ctx.dropout_mask(a.dim(), self.dropout);
        apply_mask(&mut a, &m_attn);
        let (h1, ln1) = self.ln1.forward(s, &(x + &a));
        let f1 = relu(&self.ff1.forward(s, &h1));
        let m_ff = ctx.dropout_mask(f1.dim(), self.dropout);
        let mut f1d = f1.clone();
        apply_mask(&mut f1d, &m_ff);
        let mut f2 = self.ff2.forward(s, &f1d);
        let m_out = ctx.dropout_mask(f2.dim(), self.dropout);
        apply_mask(&mut f2, &m_out);
        let (out, ln2) = self.ln2.forward(s, &(&h1 + &f2));
        (
            out,
            BlockCache {
                attn,
                m_attn,
                ln1,
                h1,
                f1,
                m_ff,
                f1d,
                m_out,
                ln2,
            },
        )
    }

    pub fn backward(&self, s: &ParamStore, x: &Array2<f64>, c: &BlockCache, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let g_r2 = self.ln2.backward(s, &c.ln2, g, grads);
        let mut g_f2 = g_r2.clone();
        apply_mask(&mut g_f2, &c.m_out);
        let mut g_f1 = self.ff2.backward(s, &c.f1d, &g_f2, grads);
        apply_mask(&mut g_f1, &c.m_ff);
        let g_f1 = relu_backward(&c.f1, &g_f1);
        let g_h1 = g_r2 + self.ff1.backward(s, &c.h1, &g_f1, grads);
        let g_r1 = self.ln1.backward(s, &c.ln1, &g_h1, grads);
        let mut g_a = g_r1.clone();
        apply_mask(&mut g_a, &c.m_attn);
        g_r1 + self.attn.backward(s, x, &c.attn, &g_a, grads)
    }
}

/// Sine/cosine positional table `[len, dim]`.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let freq = 1.0 / 10000f64.powf((i - i % 2) as f64 / dim as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
