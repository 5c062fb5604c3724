//! Encoder (per-modality TCN streams plus transformer) with pretext and emotion heads.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::attention::{sinusoidal_encoding, BlockCache as TfCache, TransformerBlock};
use super::heads::{argmax_rows, cross_entropy, softmax, ClassHead};
use super::layers::{BnUpdate, Ctx, LayerNorm, Linear, LnCache};
use super::params::{Grads, ParamId, ParamStore};
use super::tcn::{Tcn, TcnCache};
use crate::error::{Error, Result};
use crate::rng::{substream, tag, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    None,
    Fixed,
    Learnable,
}

/// Where the modalities meet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Separate TCN streams, one shared transformer over the stacked tokens, a head per modality.
    Intermediate,
    /// As `Intermediate` but a single pretext head on the concatenated pooled features.
    IntermediateOverallLoss,
    /// One stream over the multichannel input.
    Early,
    /// Fully separate per-modality encoders; emotion decisions averaged over streams.
    Late,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_embed: usize,
    pub tcn_filters: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub tcn_convs_per_block: usize,
    pub tcn_dropout: f64,
    pub n_heads: usize,
    pub ff_dim: usize,
    /// Dropout inside the transformer block.
    pub attn_dropout: f64,
    pub positional_encoding: PositionalEncoding,
    pub n_modalities: usize,
    pub window_len: usize,
    pub use_tcn: bool,
    pub use_transformer: bool,
    pub fusion: Fusion,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_embed: 128,
            tcn_filters: 16,
            tcn_kernel: 6,
            tcn_dilations: vec![1, 2],
            tcn_convs_per_block: 1,
            tcn_dropout: 0.1,
            n_heads: 4,
            ff_dim: 128,
            attn_dropout: 0.2,
            positional_encoding: PositionalEncoding::None,
            n_modalities: 3,
            window_len: 240,
            use_tcn: true,
            use_transformer: true,
            fusion: Fusion::Intermediate,
        }
    }
}

impl EncoderConfig {
    /// Causal left padding per dilation.
    pub fn tcn_paddings(&self) -> Vec<usize> {
        self.tcn_dilations
            .iter()
            .map(|d| (self.tcn_kernel - 1) * d)
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.tcn_convs_per_block * self.tcn_paddings().iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_embed", self.d_embed),
            ("tcn_filters", self.tcn_filters),
            ("tcn_kernel", self.tcn_kernel),
            ("tcn_convs_per_block", self.tcn_convs_per_block),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("n_modalities", self.n_modalities),
            ("window_len", self.window_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.d_embed % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_embed {} not divisible by n_heads {}",
                self.d_embed, self.n_heads
            )));
        }
        if self.tcn_dilations.is_empty() || self.tcn_dilations.contains(&0) {
            return Err(Error::config("tcn_dilations must be non-empty and positive"));
        }
        for (name, p) in [("tcn_dropout", self.tcn_dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub encoder: EncoderConfig,
    pub pretext_classes: usize,
    pub pretext_hidden: usize,
    pub pretext_dropout: f64,
    pub emotion_classes: usize,
    pub emotion_hidden: usize,
    pub emotion_dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            pretext_classes: 6,
            pretext_hidden: 64,
            pretext_dropout: 0.1,
            emotion_classes: 2,
            emotion_hidden: 192,
            emotion_dropout: 0.2,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.pretext_classes < 2 || self.emotion_classes < 1 {
            return Err(Error::config("need >= 2 pretext classes and >= 1 emotion class"));
        }
        if self.pretext_hidden == 0 || self.emotion_hidden == 0 {
            return Err(Error::config("head widths must be >= 1"));
        }
        for p in [self.pretext_dropout, self.emotion_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config("head dropout must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Modality-specific encoder: `LayerNorm(Linear(TCN(x)))` per time step.
#[derive(Clone, Debug)]
pub struct StreamEncoder {
    pub tcn: Option<Tcn>,
    pub proj: Linear,
    pub ln: LayerNorm,
    /// Input columns read from the window.
    pub columns: Vec<usize>,
}

pub struct StreamCache {
    tcn: Option<TcnCache>,
    proj_in: Array2<f64>,
    ln: LnCache,
}

impl StreamEncoder {
    pub fn forward(&self, s: &ParamStore, x: &ArrayView2<f64>, ctx: &mut Ctx) -> (Array2<f64>, StreamCache) {
        let input = x.select(Axis(1), &self.columns);
        let (proj_in, tcn) = match &self.tcn {
            Some(t) => {
                let (y, c) = t.forward(s, &input, ctx);
                (y, Some(c))
            }
            None => (input.clone(), None),
        };
        let (z, ln) = self.ln.forward(s, &self.proj.forward(s, &proj_in));
        (
            z,
            StreamCache {
                tcn,
                proj_in,
                ln,
            },
        )
    }

    pub fn backward(&self, s: &ParamStore, c: &StreamCache, g: &Array2<f64>, grads: &mut Grads) {
        let g = self.ln.backward(s, &c.ln, g, grads);
        let g = self.proj.backward(s, &c.proj_in, &g, grads);
        if let (Some(t), Some(tc)) = (&self.tcn, &c.tcn) {
            t.backward(s, tc, &g, grads);
        }
    }
}

/// Training targets for one batch.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// Per-sample transform labels, one per modality.
    Pretext(&'a [Vec<usize>]),
    Emotion(&'a [usize]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Pretext,
    Emotion,
}

/// Loss, gradients and batch-norm updates of one batch.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    /// Per-head losses (per modality for pretext).
    pub components: Vec<f64>,
    pub grads: Grads,
    pub bn_updates: Vec<BnUpdate>,
    /// Per-head argmax predictions, `[heads][batch]`.
    pub predictions: Vec<Vec<usize>>,
}

/// Intermediate tensors of one eval-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub z: Vec<Array2<f64>>,
    /// Transformer input per token group (stacked streams plus positional encoding).
    pub z_multi: Vec<Array2<f64>>,
    /// Attention weights per group and head.
    pub attention: Vec<Vec<Array2<f64>>>,
    pub h_multi: Vec<Array2<f64>>,
    pub features: Array1<f64>,
    pub pretext_logits: Vec<Array1<f64>>,
    pub emotion_logits: Vec<Array1<f64>>,
}

struct EncoderCache {
    streams: Vec<StreamCache>,
    groups: Vec<Option<TfCache>>,
    group_inputs: Vec<Array2<f64>>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub store: ParamStore,
    pub streams: Vec<StreamEncoder>,
    /// Token groups: stream indices stacked into one transformer input.
    pub groups: Vec<Vec<usize>>,
    pub transformers: Vec<TransformerBlock>,
    pub pe: Option<ParamId>,
    fixed_pe: Option<Array2<f64>>,
    pub pretext_heads: Vec<ClassHead>,
    pub emotion_heads: Vec<ClassHead>,
}

impl Network {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let e = &cfg.encoder;
        let mut rng = substream(seed, &[tag("init")]);
        let mut store = ParamStore::new();
        let m = e.n_modalities;
        let d = e.d_embed;

        let stream_columns: Vec<Vec<usize>> = match e.fusion {
            Fusion::Early => vec![(0..m).collect()],
            _ => (0..m).map(|i| vec![i]).collect(),
        };
        let streams = stream_columns
            .into_iter()
            .enumerate()
            .map(|(i, columns)| build_stream(&mut store, e, i, columns, &mut rng))
            .collect::<Vec<_>>();
        let n_streams = streams.len();
        let groups: Vec<Vec<usize>> = match e.fusion {
            Fusion::Late => (0..n_streams).map(|i| vec![i]).collect(),
            _ => vec![(0..n_streams).collect()],
        };
        let group_len = groups[0].len() * e.window_len;

        let (pe, fixed_pe) = match e.positional_encoding {
            PositionalEncoding::None => (None, None),
            PositionalEncoding::Fixed => (None, Some(sinusoidal_encoding(group_len, d))),
            PositionalEncoding::Learnable => (Some(store.add_uniform("enc.pe", &[group_len, d], d, &mut rng)), None),
        };
        let transformers = if e.use_transformer {
            (0..groups.len())
                .map(|g| TransformerBlock::new(&mut store, &format!("enc.tf{g}"), d, e.n_heads, e.ff_dim, e.attn_dropout, &mut rng))
                .collect()
        } else {
            Vec::new()
        };

        let feat = n_streams * d;
        let pretext_inputs: Vec<(usize, usize)> = match e.fusion {
            Fusion::Intermediate | Fusion::Late => (0..m).map(|i| (i * d, (i + 1) * d)).collect(),
            Fusion::Early => vec![(0, d); m],
            Fusion::IntermediateOverallLoss => vec![(0, feat)],
        };
        let pretext_heads = pretext_inputs
            .into_iter()
            .enumerate()
            .map(|(i, inp)| ClassHead::new(&mut store, &format!("head.pretext{i}"), inp, cfg.pretext_hidden, cfg.pretext_classes, cfg.pretext_dropout, &mut rng))
            .collect();
        let emotion_inputs: Vec<(usize, usize)> = match e.fusion {
            Fusion::Late => (0..m).map(|i| (i * d, (i + 1) * d)).collect(),
            _ => vec![(0, feat)],
        };
        let emotion_heads = emotion_inputs
            .into_iter()
            .enumerate()
            .map(|(i, inp)| ClassHead::new(&mut store, &format!("head.emotion{i}"), inp, cfg.emotion_hidden, cfg.emotion_classes, cfg.emotion_dropout, &mut rng))
            .collect();

        Ok(Self {
            cfg,
            store,
            streams,
            groups,
            transformers,
            pe,
            fixed_pe,
            pretext_heads,
            emotion_heads,
        })
    }

    /// Width of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.streams.len() * self.cfg.encoder.d_embed
    }

    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("enc.")
    }

    pub fn heads(&self, task: Task) -> &[ClassHead] {
        match task {
            Task::Pretext => &self.pretext_heads,
            Task::Emotion => &self.emotion_heads,
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        let e = &self.cfg.encoder;
        if x.dim() != (e.window_len, e.n_modalities) {
            return Err(Error::ShapeMismatch {
                name: "input window".into(),
                expected: vec![e.window_len, e.n_modalities],
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn encode_one(&self, x: &ArrayView2<f64>, ctx: &mut Ctx) -> (Array1<f64>, EncoderCache, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let s = &self.store;
        let n = self.cfg.encoder.window_len;
        let d = self.cfg.encoder.d_embed;
        let mut zs = Vec::with_capacity(self.streams.len());
        let mut stream_caches = Vec::with_capacity(self.streams.len());
        for st in &self.streams {
            let (z, c) = st.forward(s, x, ctx);
            zs.push(z);
            stream_caches.push(c);
        }
        let mut features = Array1::zeros(self.feature_dim());
        let mut groups = Vec::with_capacity(self.groups.len());
        let mut group_inputs = Vec::with_capacity(self.groups.len());
        let mut outputs = Vec::with_capacity(self.groups.len());
        for (gi, members) in self.groups.iter().enumerate() {
            let mut tokens = Array2::zeros((members.len() * n, d));
            for (slot, &si) in members.iter().enumerate() {
                tokens.slice_mut(s![slot * n..(slot + 1) * n, ..]).assign(&zs[si]);
            }
            if let Some(pe) = self.pe {
                tokens += &s.v2(pe);
            } else if let Some(pe) = &self.fixed_pe {
                tokens += pe;
            }
            let (h, cache) = match self.transformers.get(gi) {
                Some(tf) => {
                    let (h, c) = tf.forward(s, &tokens, ctx);
                    (h, Some(c))
                }
                None => (tokens.clone(), None),
            };
            for (slot, &si) in members.iter().enumerate() {
                let pooled = h.slice(s![slot * n..(slot + 1) * n, ..]).mean_axis(Axis(0)).unwrap();
                features.slice_mut(s![si * d..(si + 1) * d]).assign(&pooled);
            }
            groups.push(cache);
            group_inputs.push(tokens);
            outputs.push(h);
        }
        let inputs = group_inputs.clone();
        (
            features,
            EncoderCache {
                streams: stream_caches,
                groups,
                group_inputs,
            },
            inputs,
            outputs,
        )
    }

    fn encode_backward(&self, c: &EncoderCache, d_features: ArrayView2<f64>, grads: &mut Grads) {
        let s = &self.store;
        let n = self.cfg.encoder.window_len;
        let d = self.cfg.encoder.d_embed;
        let d_features = d_features.row(0);
        for (gi, members) in self.groups.iter().enumerate() {
            let mut dh = Array2::zeros((members.len() * n, d));
            for (slot, &si) in members.iter().enumerate() {
                let g = d_features.slice(s![si * d..(si + 1) * d]).mapv(|v| v / n as f64);
                dh.slice_mut(s![slot * n..(slot + 1) * n, ..]).assign(&g.broadcast((n, d)).unwrap());
            }
            let dtok = match (&self.transformers.get(gi), &c.groups[gi]) {
                (Some(tf), Some(tc)) => tf.backward(s, &c.group_inputs[gi], tc, &dh, grads),
                _ => dh,
            };
            if let Some(pe) = self.pe {
                *grads.get_mut(pe) += &dtok.view().into_dyn();
            }
            for (slot, &si) in members.iter().enumerate() {
                let dz = dtok.slice(s![slot * n..(slot + 1) * n, ..]).to_owned();
                self.streams[si].backward(s, &c.streams[si], &dz, grads);
            }
        }
    }

    /// Pooled features `[B, F]` of a batch.
    pub fn features(&self, xs: &[ArrayView2<f64>], ctx: &mut Ctx) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((xs.len(), self.feature_dim()));
        for (i, x) in xs.iter().enumerate() {
            self.check_input(x)?;
            out.row_mut(i).assign(&self.encode_one(x, ctx).0);
        }
        Ok(out)
    }

    fn head_labels(&self, targets: Targets<'_>) -> Result<(Task, Vec<Vec<usize>>)> {
        match targets {
            Targets::Pretext(labels) => {
                let heads = self.pretext_heads.len();
                let per_head = (0..heads)
                    .map(|h| {
                        labels
                            .iter()
                            .map(|l| {
                                let m = if self.cfg.encoder.fusion == Fusion::IntermediateOverallLoss { 0 } else { h };
                                l.get(m).copied().ok_or_else(|| Error::input("missing per-modality pretext label"))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((Task::Pretext, per_head))
            }
            Targets::Emotion(labels) => Ok((Task::Emotion, vec![labels.to_vec(); self.emotion_heads.len()])),
        }
    }

    /// Loss and gradients of the heads on precomputed features; also returns the feature gradient.
    pub fn head_step(&self, features: &Array2<f64>, targets: Targets<'_>, ctx: &mut Ctx) -> Result<(StepOutput, Array2<f64>)> {
        let (task, labels) = self.head_labels(targets)?;
        let mut grads = Grads::zeros_like(&self.store);
        let mut d_features = Array2::zeros(features.raw_dim());
        let mut components = Vec::new();
        let mut predictions = Vec::new();
        let mut bn_updates = Vec::new();
        for (head, y) in self.heads(task).iter().zip(&labels) {
            let (logits, cache, update) = head.forward(&self.store, features, ctx);
            let (loss, g) = cross_entropy(&logits, y)?;
            head.backward(&self.store, &cache, &g, &mut grads, &mut d_features);
            components.push(loss);
            predictions.push(argmax_rows(&logits));
            bn_updates.extend(update);
        }
        if task == Task::Emotion && self.emotion_heads.len() > 1 {
            predictions = vec![argmax_rows(&self.emotion_probs_from_features(features))];
        }
        let loss = components.iter().sum();
        Ok((
            StepOutput {
                loss,
                components,
                grads,
                bn_updates,
                predictions,
            },
            d_features,
        ))
    }

    /// Full forward and backward pass through encoder and heads.
    pub fn step(&self, xs: &[ArrayView2<f64>], targets: Targets<'_>, ctx: &mut Ctx) -> Result<StepOutput> {
        let mut feats = Array2::zeros((xs.len(), self.feature_dim()));
        let mut caches = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            self.check_input(x)?;
            let (f, c, _, _) = self.encode_one(x, ctx);
            feats.row_mut(i).assign(&f);
            caches.push(c);
        }
        let (mut out, d_features) = self.head_step(&feats, targets, ctx)?;
        for (i, c) in caches.iter().enumerate() {
            self.encode_backward(c, d_features.slice(s![i..i + 1, ..]), &mut out.grads);
        }
        Ok(out)
    }

    /// Loss only, eval mode (used by gradient checks and validation).
    pub fn loss(&self, xs: &[ArrayView2<f64>], targets: Targets<'_>, ctx: &mut Ctx) -> Result<f64> {
        let feats = self.features(xs, ctx)?;
        let (task, labels) = self.head_labels(targets)?;
        let mut total = 0.0;
        for (head, y) in self.heads(task).iter().zip(&labels) {
            let (logits, _, _) = head.forward(&self.store, &feats, ctx);
            total += cross_entropy(&logits, y)?.0;
        }
        Ok(total)
    }

    pub fn logits_from_features(&self, task: Task, features: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut ctx = Ctx::eval();
        self.heads(task)
            .iter()
            .map(|h| h.forward(&self.store, features, &mut ctx).0)
            .collect()
    }

    /// Class probabilities averaged over emotion heads, eval mode.
    pub fn emotion_probs_from_features(&self, features: &Array2<f64>) -> Array2<f64> {
        let logits = self.logits_from_features(Task::Emotion, features);
        let k = logits.len() as f64;
        logits
            .iter()
            .map(softmax)
            .reduce(|a, b| a + b)
            .map(|p| p / k)
            .expect("at least one emotion head")
    }

    /// Eval-mode predictions, `[heads][batch]` for pretext and `[1][batch]` for emotion.
    pub fn predict(&self, task: Task, xs: &[ArrayView2<f64>]) -> Result<Vec<Vec<usize>>> {
        let feats = self.features(xs, &mut Ctx::eval())?;
        Ok(match task {
            Task::Pretext => self
                .logits_from_features(task, &feats)
                .iter()
                .map(argmax_rows)
                .collect(),
            Task::Emotion => vec![argmax_rows(&self.emotion_probs_from_features(&feats))],
        })
    }

    pub fn trace(&self, x: &ArrayView2<f64>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut ctx = Ctx::eval();
        let (features, cache, inputs, outputs) = self.encode_one(x, &mut ctx);
        let z = self
            .streams
            .iter()
            .map(|st| st.forward(&self.store, x, &mut Ctx::eval()).0)
            .collect();
        let attention = cache
            .groups
            .iter()
            .map(|g| g.as_ref().map(|c| c.attn.weights.clone()).unwrap_or_default())
            .collect();
        let f2 = features.clone().insert_axis(Axis(0));
        let row = |v: Vec<Array2<f64>>| v.into_iter().map(|l| l.row(0).to_owned()).collect();
        Ok(ForwardTrace {
            z,
            z_multi: inputs,
            attention,
            h_multi: outputs,
            pretext_logits: row(self.logits_from_features(Task::Pretext, &f2)),
            emotion_logits: row(self.logits_from_features(Task::Emotion, &f2)),
            features,
        })
    }

    /// Rebuild the emotion heads with `classes` outputs, keeping everything else.
    pub fn with_emotion_classes(&self, classes: usize, seed: u64) -> Result<Network> {
        let mut cfg = self.cfg.clone();
        cfg.emotion_classes = classes;
        let mut fresh = Network::new(cfg, seed)?;
        fresh.store.copy_from(&self.store, |n| !n.starts_with("head.emotion"))?;
        Ok(fresh)
    }
}

fn build_stream(store: &mut ParamStore, e: &EncoderConfig, i: usize, columns: Vec<usize>, rng: &mut Rng) -> StreamEncoder {
    let inp = columns.len();
    let tcn = e.use_tcn.then(|| {
        Tcn::new(
            store,
            &format!("enc.tcn{i}"),
            inp,
            e.tcn_filters,
            e.tcn_kernel,
            &e.tcn_dilations,
            e.tcn_convs_per_block,
            e.tcn_dropout,
            rng,
        )
    });
    let proj_in = if e.use_tcn { e.tcn_filters } else { inp };
    StreamEncoder {
        tcn,
        proj: Linear::new(store, &format!("enc.proj{i}"), proj_in, e.d_embed, rng),
        ln: LayerNorm::new(store, &format!("enc.ln{i}"), e.d_embed),
        columns,
    }
}
