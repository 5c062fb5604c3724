//! Signal transformations for the transform-recognition pretext task.
//!
//! Label 0 is the untouched signal; labels 1..=5 are noise addition,
//! magnitude warping, permutation, time warping and cropping, in that order.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::resize_linear;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};
use crate::signal::Window;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Original,
    Noise,
    MagnitudeWarp,
    Permutation,
    TimeWarp,
    Crop,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::Original,
        TransformKind::Noise,
        TransformKind::MagnitudeWarp,
        TransformKind::Permutation,
        TransformKind::TimeWarp,
        TransformKind::Crop,
    ];

    /// One-letter code: `N`, `M`, `P`, `T`, `C` (and `O` for the original).
    pub fn code(self) -> char {
        match self {
            TransformKind::Original => 'O',
            TransformKind::Noise => 'N',
            TransformKind::MagnitudeWarp => 'M',
            TransformKind::Permutation => 'P',
            TransformKind::TimeWarp => 'T',
            TransformKind::Crop => 'C',
        }
    }

    /// Parse a `+`-separated list such as `"N+T"` or `"all"`.
    pub fn parse_set(s: &str) -> Result<Vec<TransformKind>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(TransformKind::ALL[1..].to_vec());
        }
        let mut out = s
            .split('+')
            .map(|p| p.parse::<TransformKind>())
            .collect::<Result<Vec<_>>>()?;
        out.sort();
        out.dedup();
        out.retain(|k| *k != TransformKind::Original);
        if out.is_empty() {
            return Err(Error::config(format!("empty transform set `{s}`")));
        }
        Ok(out)
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "O" | "ORIGINAL" => Ok(TransformKind::Original),
            "N" | "NOISE" => Ok(TransformKind::Noise),
            "M" | "MAGNITUDE_WARP" => Ok(TransformKind::MagnitudeWarp),
            "P" | "PERMUTATION" => Ok(TransformKind::Permutation),
            "T" | "TIME_WARP" => Ok(TransformKind::TimeWarp),
            "C" | "CROP" => Ok(TransformKind::Crop),
            other => Err(Error::config(format!("unknown transform `{other}`"))),
        }
    }
}

/// Transformation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    /// Target signal-to-noise ratio in dB; `+inf` disables the noise.
    pub snr_db: f64,
    /// Standard deviation of the magnitude-warp knot values around 1.
    pub mw_sigma: f64,
    /// Interior knots of the magnitude-warp spline.
    pub mw_knots: usize,
    pub perm_segments: usize,
    pub tw_segments: usize,
    pub tw_stretch: f64,
    /// Fraction of the window kept by the crop.
    pub crop_ratio: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            snr_db: 15.0,
            mw_sigma: 0.1,
            mw_knots: 4,
            perm_segments: 9,
            tw_segments: 4,
            tw_stretch: 1.05,
            crop_ratio: 0.2,
        }
    }
}

impl TransformConfig {
    /// Parameters under which every transform is the identity.
    pub fn identity() -> Self {
        Self {
            snr_db: f64::INFINITY,
            mw_sigma: 0.0,
            mw_knots: 4,
            perm_segments: 1,
            tw_segments: 2,
            tw_stretch: 1.0,
            crop_ratio: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() {
            return Err(Error::config("snr_db must not be NaN"));
        }
        if !(self.mw_sigma >= 0.0 && self.mw_sigma.is_finite()) {
            return Err(Error::config("mw_sigma must be finite and >= 0"));
        }
        if self.mw_knots < 2 {
            return Err(Error::config("mw_knots must be >= 2"));
        }
        if self.perm_segments < 1 {
            return Err(Error::config("perm_segments must be >= 1"));
        }
        if self.tw_segments < 2 {
            return Err(Error::config("tw_segments must be >= 2"));
        }
        if !(self.tw_stretch >= 1.0 && self.tw_stretch.is_finite()) {
            return Err(Error::config("tw_stretch must be finite and >= 1"));
        }
        if !(self.crop_ratio > 0.0 && self.crop_ratio <= 1.0) {
            return Err(Error::config("crop_ratio must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Boundaries of `n` near-equal contiguous segments; the first `len % n` get one extra sample.
fn segment_bounds(len: usize, n: usize) -> Vec<(usize, usize)> {
    let n = n.clamp(1, len.max(1));
    let base = len / n;
    let extra = len % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let l = base + usize::from(i < extra);
        out.push((start, start + l));
        start += l;
    }
    out
}

pub fn add_gaussian_noise(x: &[f64], snr_db: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(x.to_vec());
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if !(power > 0.0) {
        return Err(Error::input("noise addition needs a signal with non-zero power"));
    }
    // 10^((P_dB - SNR) / 10) with P_dB = 10 log10(P).
    let variance = 10f64.powf((10.0 * power.log10() - snr_db) / 10.0);
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::input(e.to_string()))?;
    Ok(x.iter().map(|v| v + normal.sample(rng)).collect())
}

/// Natural cubic spline through `(xs[i], ys[i])`, evaluated at integer positions `0..len`.
fn natural_spline(xs: &[f64], ys: &[f64], len: usize) -> Vec<f64> {
    let n = xs.len();
    let mut m = vec![0.0; n];
    if n > 2 {
        // Tridiagonal system for interior second derivatives.
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (0..k).rev() {
            let next = if i + 1 < k { m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - h[i + 1] * next) / diag[i];
        }
    }
    let mut seg = 0;
    (0..len)
        .map(|t| {
            let t = t as f64;
            while seg + 2 < n && t > xs[seg + 1] {
                seg += 1;
            }
            let h = xs[seg + 1] - xs[seg];
            let b = (t - xs[seg]) / h;
            let a = 1.0 - b;
            ys[seg]
                + b * (ys[seg + 1] - ys[seg])
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0
        })
        .collect()
}

/// Smooth random gain curve: a natural spline through `knots + 2` evenly spaced values ~ N(1, σ²).
pub fn magnitude_warp_curve(len: usize, sigma: f64, knots: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let normal = Normal::new(1.0, sigma).map_err(|e| Error::input(e.to_string()))?;
    let points = knots + 2;
    let span = len.saturating_sub(1).max(1) as f64;
    let xs: Vec<f64> = (0..points)
        .map(|i| span * i as f64 / (points - 1) as f64)
        .collect();
    let ys: Vec<f64> = (0..points).map(|_| normal.sample(rng)).collect();
    Ok(natural_spline(&xs, &ys, len))
}

pub fn magnitude_warp(x: &[f64], sigma: f64, knots: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    let curve = magnitude_warp_curve(x.len(), sigma, knots, rng)?;
    Ok(x.iter().zip(&curve).map(|(v, c)| v * c).collect())
}

/// Split into segments and reorder them; the identity order is redrawn.
pub fn permute(x: &[f64], segments: usize, rng: &mut Rng) -> Vec<f64> {
    let bounds = segment_bounds(x.len(), segments);
    if bounds.len() < 2 {
        return x.to_vec();
    }
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    loop {
        order.shuffle(rng);
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            break;
        }
    }
    order
        .iter()
        .flat_map(|&i| x[bounds[i].0..bounds[i].1].iter().copied())
        .collect()
}

/// Stretch `ceil(n/2)` random segments by `stretch`, squeeze the rest, resize back to `len`.
pub fn time_warp(x: &[f64], segments: usize, stretch: f64, rng: &mut Rng) -> Vec<f64> {
    let bounds = segment_bounds(x.len(), segments);
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    order.shuffle(rng);
    let n_stretch = bounds.len().div_ceil(2);
    let mut stretched = vec![false; bounds.len()];
    for &i in &order[..n_stretch] {
        stretched[i] = true;
    }
    let mut warped = Vec::with_capacity(x.len() * 2);
    for (i, &(a, b)) in bounds.iter().enumerate() {
        let seg = &x[a..b];
        let factor = if stretched[i] { stretch } else { 1.0 / stretch };
        let new_len = ((seg.len() as f64 * factor).round() as usize).max(1);
        warped.extend(resize_linear(seg, new_len));
    }
    resize_linear(&warped, x.len())
}

/// Keep one random contiguous stretch of `round(ratio * len)` samples, resized back to `len`.
pub fn crop_resize(x: &[f64], ratio: f64, rng: &mut Rng) -> Vec<f64> {
    let len = x.len();
    let keep = ((ratio * len as f64).round() as usize).clamp(2.min(len), len);
    let start = rng.gen_range(0..=len - keep);
    resize_linear(&x[start..start + keep], len)
}

/// Apply one transform to a single-channel sequence.
pub fn apply_transform(
    kind: TransformKind,
    x: &[f64],
    cfg: &TransformConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    Ok(match kind {
        TransformKind::Original => x.to_vec(),
        TransformKind::Noise => add_gaussian_noise(x, cfg.snr_db, rng)?,
        TransformKind::MagnitudeWarp => magnitude_warp(x, cfg.mw_sigma, cfg.mw_knots, rng)?,
        TransformKind::Permutation => permute(x, cfg.perm_segments, rng),
        TransformKind::TimeWarp => time_warp(x, cfg.tw_segments, cfg.tw_stretch, rng),
        TransformKind::Crop => crop_resize(x, cfg.crop_ratio, rng),
    })
}

/// Label space and parameters of a pretext dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretextSpec {
    pub transforms: TransformConfig,
    /// Label order; `kinds[0]` is always [`TransformKind::Original`].
    pub kinds: Vec<TransformKind>,
    /// Draw a separate label per modality instead of one per window.
    pub independent_per_modality: bool,
}

impl Default for PretextSpec {
    fn default() -> Self {
        Self {
            transforms: TransformConfig::default(),
            kinds: TransformKind::ALL.to_vec(),
            independent_per_modality: false,
        }
    }
}

impl PretextSpec {
    /// Restrict the label space to the original plus `subset`.
    pub fn with_subset(transforms: TransformConfig, subset: &[TransformKind]) -> Result<Self> {
        let mut kinds = vec![TransformKind::Original];
        let mut rest: Vec<_> = subset
            .iter()
            .copied()
            .filter(|k| *k != TransformKind::Original)
            .collect();
        rest.sort();
        rest.dedup();
        if rest.is_empty() {
            return Err(Error::config("transform subset must name at least one transform"));
        }
        kinds.extend(rest);
        let spec = Self {
            transforms,
            kinds,
            independent_per_modality: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_classes(&self) -> usize {
        self.kinds.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.transforms.validate()?;
        if self.kinds.first() != Some(&TransformKind::Original) {
            return Err(Error::config("pretext label 0 must be the original signal"));
        }
        let mut sorted = self.kinds.clone();
        sorted.dedup();
        if sorted.len() != self.kinds.len() || self.kinds.len() < 2 {
            return Err(Error::config("pretext transforms must be distinct and at least two"));
        }
        Ok(())
    }
}

/// A transformed window with one transform label per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct PretextSample {
    pub values: Array2<f64>,
    pub transform_labels: Vec<usize>,
    pub source_window_id: usize,
}

/// Pretext samples generated on demand from a set of windows.
///
/// Sample `i` comes from window `i / K` with slot `i % K`, where `K` is the
/// number of classes. Its randomness is drawn from a substream keyed by
/// `(seed, window_id, slot)`, so any subset can be generated in any order.
#[derive(Clone, Debug)]
pub struct PretextDataset {
    windows: Vec<Window>,
    spec: PretextSpec,
    seed: u64,
}

impl PretextDataset {
    pub fn new(windows: Vec<Window>, spec: PretextSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        if windows.is_empty() {
            return Err(Error::input("pretext dataset needs at least one window"));
        }
        Ok(Self {
            windows,
            spec,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len() * self.spec.n_classes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spec(&self) -> &PretextSpec {
        &self.spec
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn n_modalities(&self) -> usize {
        self.windows[0].n_modalities()
    }

    pub fn labels(&self, index: usize) -> Vec<usize> {
        let k = self.spec.n_classes();
        let (w, slot) = (index / k, index % k);
        let m = self.n_modalities();
        if !self.spec.independent_per_modality {
            return vec![slot; m];
        }
        (0..m)
            .map(|mi| {
                let mut perm: Vec<usize> = (0..k).collect();
                perm.shuffle(&mut substream(self.seed, &[w as u64, u64::MAX, mi as u64]));
                perm[slot]
            })
            .collect()
    }

    pub fn get(&self, index: usize) -> Result<PretextSample> {
        let k = self.spec.n_classes();
        let w = index / k;
        let window = self
            .windows
            .get(w)
            .ok_or_else(|| Error::input(format!("pretext sample {index} out of range")))?;
        let labels = self.labels(index);
        let mut rng = substream(self.seed, &[w as u64, (index % k) as u64]);
        let mut values = window.values.clone();
        for (m, &label) in labels.iter().enumerate() {
            let kind = self.spec.kinds[label];
            if kind == TransformKind::Original {
                continue;
            }
            let col = values.column(m).to_vec();
            let out = apply_transform(kind, &col, &self.spec.transforms, &mut rng)?;
            values.column_mut(m).assign(&ndarray::Array1::from(out));
        }
        Ok(PretextSample {
            values,
            transform_labels: labels,
            source_window_id: w,
        })
    }

    pub fn materialize(&self) -> Result<Vec<PretextSample>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Expand every window into one sample per pretext class.
pub fn build_pretext_dataset(windows: &[Window], spec: &PretextSpec, seed: u64) -> Result<Vec<PretextSample>> {
    PretextDataset::new(windows.to_vec(), spec.clone(), seed)?.materialize()
}
