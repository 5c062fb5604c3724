//! Dilated causal convolutions and residual TCN blocks.

use ndarray::{Array1, Array2, Axis};

use super::layers::{apply_mask, relu, relu_backward, Ctx, Linear};
use super::params::{Grads, ParamId, ParamKind, ParamStore};
use crate::rng::Rng;

/// Causal convolution with weight normalisation: `W = g * v / ||v||` per output filter.
///
/// Tap `i` of the kernel reads the input `d * i` steps back, so the output at
/// step `t` sees only steps `<= t` (left zero padding of `(k - 1) * d`).
#[derive(Clone, Debug)]
pub struct CausalConv {
    /// Direction, shape `[k, in, out]`.
    pub v: ParamId,
    /// Per-filter magnitude, shape `[out]`.
    pub g: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub dilation: usize,
    pub inp: usize,
    pub out: usize,
}

pub struct ConvCache {
    col: Array2<f64>,
    w_eff: Array2<f64>,
    norms: Array1<f64>,
}

impl CausalConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Self {
        let v = store.add_uniform(format!("{name}.v"), &[kernel, inp, out], kernel * inp, rng);
        let norms = filter_norms(&store.v3(v).to_shape((kernel * inp, out)).unwrap().to_owned());
        let g = store.add(format!("{name}.g"), ParamKind::Weight, norms.into_dyn());
        let b = store.add_const(format!("{name}.b"), ParamKind::Weight, &[out], 0.0);
        Self {
            v,
            g,
            b,
            kernel,
            dilation,
            inp,
            out,
        }
    }

    fn v_flat(&self, s: &ParamStore) -> Array2<f64> {
        s.v3(self.v)
            .to_shape((self.kernel * self.inp, self.out))
            .expect("contiguous conv weight")
            .to_owned()
    }

    /// Effective weight `[k * in, out]` and per-filter norms of `v`.
    pub fn effective_weight(&self, s: &ParamStore) -> (Array2<f64>, Array1<f64>) {
        let v = self.v_flat(s);
        let norms = filter_norms(&v);
        let scale = &s.v1(self.g) / &norms;
        (v * &scale, norms)
    }

    pub fn forward(&self, s: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, ConvCache) {
        let t_len = x.nrows();
        let mut col = Array2::zeros((t_len, self.kernel * self.inp));
        for i in 0..self.kernel {
            let lag = self.dilation * i;
            if lag >= t_len {
                break;
            }
            col.slice_mut(ndarray::s![lag.., i * self.inp..(i + 1) * self.inp])
                .assign(&x.slice(ndarray::s![..t_len - lag, ..]));
        }
        let (w_eff, norms) = self.effective_weight(s);
        let y = col.dot(&w_eff) + &s.v1(self.b);
        (y, ConvCache { col, w_eff, norms })
    }

    pub fn backward(&self, s: &ParamStore, c: &ConvCache, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let t_len = g.nrows();
        let dw = c.col.t().dot(g);
        grads.m1(self.b).scaled_add(1.0, &g.sum_axis(Axis(0)));

        let v = self.v_flat(s);
        let gain = s.v1(self.g);
        let mut dv = Array2::zeros(v.raw_dim());
        let mut dg = Array1::zeros(self.out);
        for o in 0..self.out {
            let n = c.norms[o];
            let dwo = dw.column(o);
            let vo = v.column(o);
            let dgo = dwo.dot(&vo) / n;
            dg[o] = dgo;
            let mut col = dv.column_mut(o);
            col.assign(&(&dwo * (gain[o] / n)));
            col.scaled_add(-gain[o] * dgo / (n * n), &vo);
        }
        grads.m1(self.g).scaled_add(1.0, &dg);
        let dv3 = dv.into_shape_with_order((self.kernel, self.inp, self.out)).unwrap();
        *grads.get_mut(self.v) += &dv3.into_dyn();

        let dcol = g.dot(&c.w_eff.t());
        let mut dx = Array2::zeros((t_len, self.inp));
        for i in 0..self.kernel {
            let lag = self.dilation * i;
            if lag >= t_len {
                break;
            }
            let mut dst = dx.slice_mut(ndarray::s![..t_len - lag, ..]);
            dst += &dcol.slice(ndarray::s![lag.., i * self.inp..(i + 1) * self.inp]);
        }
        dx
    }
}

fn filter_norms(v: &Array2<f64>) -> Array1<f64> {
    v.map_axis(Axis(0), |c| c.dot(&c).sqrt().max(1e-12))
}

/// Conv stack (conv, ReLU, dropout per layer) with a residual connection and final ReLU.
#[derive(Clone, Debug)]
pub struct TcnBlock {
    pub convs: Vec<CausalConv>,
    /// 1x1 projection when channel counts differ.
    pub residual: Option<Linear>,
    pub dropout: f64,
}

pub struct BlockCache {
    inputs: Vec<Array2<f64>>,
    convs: Vec<ConvCache>,
    acts: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    out: Array2<f64>,
}

impl TcnBlock {
    pub fn forward(&self, s: &ParamStore, x: &Array2<f64>, ctx: &mut Ctx) -> (Array2<f64>, BlockCache) {
        let mut cache = BlockCache {
            inputs: Vec::new(),
            convs: Vec::new(),
            acts: Vec::new(),
            masks: Vec::new(),
            out: Array2::zeros((0, 0)),
        };
        let mut h = x.clone();
        for conv in &self.convs {
            let (pre, cc) = conv.forward(s, &h);
            let act = relu(&pre);
            let mask = ctx.dropout_mask(act.dim(), self.dropout);
            let mut next = act.clone();
            apply_mask(&mut next, &mask);
            cache.inputs.push(std::mem::replace(&mut h, next));
            cache.convs.push(cc);
            cache.acts.push(act);
            cache.masks.push(mask);
        }
        let res = match &self.residual {
            Some(lin) => lin.forward(s, x),
            None => x.clone(),
        };
        let out = relu(&(h + res));
        cache.out = out.clone();
        (out, cache)
    }

    pub fn backward(&self, s: &ParamStore, x: &Array2<f64>, c: &BlockCache, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let g_sum = relu_backward(&c.out, g);
        let mut gh = g_sum.clone();
        for (i, conv) in self.convs.iter().enumerate().rev() {
            apply_mask(&mut gh, &c.masks[i]);
            gh = relu_backward(&c.acts[i], &gh);
            gh = conv.backward(s, &c.convs[i], &gh, grads);
        }
        let g_res = match &self.residual {
            Some(lin) => lin.backward(s, x, &g_sum, grads),
            None => g_sum,
        };
        gh + g_res
    }
}

/// Blocks with increasing dilation.
#[derive(Clone, Debug)]
pub struct Tcn {
    pub blocks: Vec<TcnBlock>,
    pub out_channels: usize,
}

pub struct TcnCache {
    inputs: Vec<Array2<f64>>,
    blocks: Vec<BlockCache>,
}

impl Tcn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        dilations: &[usize],
        convs_per_block: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut blocks = Vec::with_capacity(dilations.len());
        let mut inp = in_channels;
        for (j, &d) in dilations.iter().enumerate() {
            let convs = (0..convs_per_block)
                .map(|c| {
                    let cin = if c == 0 { inp } else { filters };
                    CausalConv::new(store, &format!("{name}.block{j}.conv{c}"), cin, filters, kernel, d, rng)
                })
                .collect();
            let residual = (inp != filters).then(|| Linear::new(store, &format!("{name}.block{j}.res"), inp, filters, rng));
            blocks.push(TcnBlock {
                convs,
                residual,
                dropout,
            });
            inp = filters;
        }
        Self {
            blocks,
            out_channels: filters,
        }
    }

    /// Number of input steps that can influence one output step.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .flat_map(|b| &b.convs)
            .map(|c| (c.kernel - 1) * c.dilation)
            .sum::<usize>()
    }

    pub fn forward(&self, s: &ParamStore, x: &Array2<f64>, ctx: &mut Ctx) -> (Array2<f64>, TcnCache) {
        let mut cache = TcnCache {
            inputs: Vec::with_capacity(self.blocks.len()),
            blocks: Vec::with_capacity(self.blocks.len()),
        };
        let mut h = x.clone();
        for b in &self.blocks {
            let (out, bc) = b.forward(s, &h, ctx);
            cache.inputs.push(std::mem::replace(&mut h, out));
            cache.blocks.push(bc);
        }
        (h, cache)
    }

    pub fn backward(&self, s: &ParamStore, c: &TcnCache, g: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let mut g = g.clone();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            g = b.backward(s, &c.inputs[i], &c.blocks[i], &g, grads);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};

    #[test]
    fn weight_norm_starts_at_direction_norm() {
        let mut rng = Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let conv = CausalConv::new(&mut s, "c", 2, 3, 6, 1, &mut rng);
        let (w, _) = conv.effective_weight(&s);
        let v = conv.v_flat(&s);
        assert!((w - v).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn receptive_field_counts_every_conv() {
        let mut rng = Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let one = Tcn::new(&mut s, "a", 1, 4, 6, &[1, 2], 1, 0.0, &mut rng);
        let two = Tcn::new(&mut s, "b", 1, 4, 6, &[1, 2], 2, 0.0, &mut rng);
        assert_eq!(one.receptive_field(), 16);
        assert_eq!(two.receptive_field(), 31);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let tcn = Tcn::new(&mut s, "t", 1, 4, 6, &[1, 2], 2, 0.0, &mut rng);
        let (y, _) = tcn.forward(&s, &Array2::zeros((30, 1)), &mut Ctx::eval());
        assert!(y.iter().all(|&v| v == 0.0));
        let x = Array2::from_shape_simple_fn((30, 1), || rng.gen_range(-1.0..1.0));
        let (y, _) = tcn.forward(&s, &x, &mut Ctx::eval());
        assert_eq!(y.dim(), (30, 4));
    }
}
