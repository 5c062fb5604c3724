//! Shared inputs for the benchmarks.

use ndarray::Array2;
use physiossl::rng::substream;
use rand_distr::{Distribution, StandardNormal};

/// `n` standard-normal samples from a fixed stream.
pub fn noise(n: usize, key: u64) -> Vec<f64> {
    let mut rng = substream(0xbe9c, &[key]);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// A batch of `[len, modalities]` inputs.
pub fn batch(size: usize, len: usize, modalities: usize) -> Vec<Array2<f64>> {
    (0..size)
        .map(|i| Array2::from_shape_vec((len, modalities), noise(len * modalities, i as u64)).expect("shape"))
        .collect()
}
