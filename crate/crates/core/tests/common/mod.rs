//! Shared oracles for integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use physiossl::model::{Ctx, EncoderConfig, Network, NetworkConfig, PositionalEncoding, Targets};
use physiossl::rng::{substream, Rng};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

pub const FD_STEP: f64 = 1e-4;
fn fd_step() -> f64 { std::env::var("FD_H").ok().and_then(|v| v.parse().ok()).unwrap_or(FD_STEP) }
pub const FD_REL_TOL: f64 = 1e-3;
/// Denominator floor for the relative error so near-zero gradients compare absolutely.
pub const FD_FLOOR: f64 = 1e-5;

/// Reduced configuration used by the gradient checks: N = 16, d = 8, one head, four filters, no dropout.
pub fn gradcheck_config() -> NetworkConfig {
    NetworkConfig {
        encoder: EncoderConfig {
            d_embed: 8,
            tcn_filters: 4,
            n_heads: 1,
            ff_dim: 8,
            window_len: 16,
            tcn_dropout: 0.0,
            attn_dropout: 0.0,
            positional_encoding: PositionalEncoding::Learnable,
            ..EncoderConfig::default()
        },
        pretext_hidden: 8,
        pretext_dropout: 0.0,
        emotion_hidden: 8,
        emotion_dropout: 0.0,
        ..NetworkConfig::default()
    }
}

pub fn random_inputs(n: usize, len: usize, m: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Array2::from_shape_simple_fn((len, m), || rng.gen_range(-2.0..2.0)))
        .collect()
}

/// Move every weight off its initial value so no ReLU sits exactly on its hinge
/// (zero biases feeding fully inactive rows would otherwise give one-sided derivatives).
pub fn jitter(net: &mut Network, seed: u64) {
    let mut rng = Rng::seed_from_u64(seed);
    let ids: Vec<_> = net.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        if net.store.param(id).kind == physiossl::model::ParamKind::Weight {
            net.store.get_mut(id).mapv_inplace(|v| v + rng.gen_range(-0.05..0.05));
        }
    }
}

/// Parameter-name prefixes of each component group.
pub fn param_groups() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("tcn", vec!["enc.tcn"]),
        ("proj", vec!["enc.proj"]),
        ("ln", vec!["enc.ln"]),
        ("attn", vec!["enc.tf0.attn"]),
        ("ff", vec!["enc.tf0.ff", "enc.tf0.ln1", "enc.tf0.ln2"]),
        ("pe", vec!["enc.pe"]),
        ("pretext_head", vec!["head.pretext"]),
        ("emotion_head", vec!["head.emotion"]),
    ]
}

#[derive(Debug)]
pub struct GradCheck {
    pub group: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Central finite differences against the analytic gradient on `per_group` random scalars of each group.
pub fn gradient_check(net: &Network, xs: &[Array2<f64>], targets: Targets<'_>, prefixes: &[&str], per_group: usize, seed: u64) -> GradCheck {
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    let analytic = net
        .step(&views, targets, &mut Ctx::train(substream(seed, &[0])))
        .expect("analytic step");
    let mut coords = Vec::new();
    for (id, p) in net.store.iter() {
        if prefixes.iter().any(|pre| p.name.starts_with(pre)) && p.kind == physiossl::model::ParamKind::Weight {
            coords.extend((0..p.value.len()).map(|i| (id, i)));
        }
    }
    let mut rng = Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(per_group);

    let loss_at = |net: &Network| {
        net.loss(&views, targets, &mut Ctx::train(substream(seed, &[0])))
            .expect("loss")
    };
    let mut max_rel = 0.0f64;
    for &(id, i) in &coords {
        let mut plus = net.clone();
        plus.store.get_mut(id).as_slice_mut().unwrap()[i] += fd_step();
        let mut minus = net.clone();
        minus.store.get_mut(id).as_slice_mut().unwrap()[i] -= fd_step();
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * fd_step());
        let a = analytic.grads.get(id).as_slice().unwrap()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        if std::env::var("FD_DEBUG").is_ok() && rel > FD_REL_TOL {
            eprintln!("{} [{i}] analytic {a:e} numeric {numeric:e} rel {rel:e}", net.store.name(id));
        }
        max_rel = max_rel.max(rel);
    }
    GradCheck {
        group: prefixes.join("|"),
        checked: coords.len(),
        max_rel_err: max_rel,
    }
}
