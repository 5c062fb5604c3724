use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::ArrayView2;
use physiossl::dsp::butterworth_lowpass;
use physiossl::model::{Ctx, Task};
use physiossl::rng::substream;
use physiossl::transforms::apply_transform;
use physiossl::{Network, RunConfig, TransformConfig, TransformKind};
use physiossl_bench::{batch, noise};

fn filtfilt(c: &mut Criterion) {
    let mut g = c.benchmark_group("filtfilt");
    // one minute of BVP at 64 Hz, and ten minutes
    for n in [3_840usize, 38_400] {
        let x = noise(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| butterworth_lowpass(black_box(x), 64.0, 2.0, 4).unwrap())
        });
    }
    g.finish();
}

fn transforms(c: &mut Criterion) {
    let cfg = TransformConfig::default();
    let x = noise(240, 2);
    let mut g = c.benchmark_group("transform");
    for kind in TransformKind::ALL {
        g.bench_function(format!("{kind:?}"), |b| {
            let mut rng = substream(3, &[kind as u64]);
            b.iter(|| apply_transform(kind, black_box(&x), &cfg, &mut rng).unwrap())
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(20);
    for (name, cfg) in [("desk", RunConfig::desk()), ("full", RunConfig::default())] {
        let e = &cfg.network.encoder;
        let xs = batch(32, e.window_len, e.n_modalities);
        let net = Network::new(cfg.network.clone(), 0).unwrap();
        g.bench_function(format!("{name}_batch32"), |b| {
            let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
            b.iter(|| net.predict(Task::Pretext, black_box(&views)).unwrap())
        });
        g.bench_function(format!("{name}_features_batch32"), |b| {
            let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
            b.iter(|| net.features(black_box(&views), &mut Ctx::eval()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, filtfilt, transforms, forward);
criterion_main!(benches);
