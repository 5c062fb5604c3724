//! Digital Butterworth low-pass design (bilinear transform) and zero-phase filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Second-order section in transposed direct form II, `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Section {
    b: [f64; 3],
    a: [f64; 2],
}

impl Section {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes the section output `level * dc_gain` for a constant input `level`.
    fn steady_state(&self, level: f64) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1 * level, z2 * level]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z[0];
            z[0] = b1 * xin - a1 * y + z[1];
            z[1] = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// A Butterworth low-pass filter as a cascade of unit-DC-gain sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth {
    sections: Vec<Section>,
    order: usize,
    cutoff: f64,
    fs: f64,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::config("filter order must be >= 1"));
        }
        if !(fs > 0.0) || !(cutoff > 0.0) || cutoff >= fs / 2.0 {
            return Err(Error::config(format!(
                "low-pass cutoff {cutoff} Hz must lie in (0, {}) for fs = {fs} Hz",
                fs / 2.0
            )));
        }
        // Pre-warped analog cutoff.
        let k = 2.0 * fs;
        let wa = k * (PI * cutoff / fs).tan();
        let n = order as f64;
        let bilinear = |s: Complex64| (k + s) / (k - s);

        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            let theta = PI * (2.0 * i as f64 + n + 1.0) / (2.0 * n);
            let p = bilinear(Complex64::from_polar(wa, theta));
            let a1 = -2.0 * p.re;
            let a2 = p.norm_sqr();
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push(Section {
                b: [g, 2.0 * g, g],
                a: [a1, a2],
            });
        }
        if order % 2 == 1 {
            let p = (k - wa) / (k + wa);
            let g = (1.0 - p) / 2.0;
            sections.push(Section {
                b: [g, g, 0.0],
                a: [-p, 0.0],
            });
        }
        Ok(Self {
            sections,
            order,
            cutoff,
            fs,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// `|H(e^{jω})|` of a single pass at frequency `f` Hz.
    pub fn magnitude(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f / self.fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| {
                let num = s.b[0] + s.b[1] * z1 + s.b[2] * z2;
                let den = 1.0 + s.a[0] * z1 + s.a[1] * z2;
                (num / den).norm()
            })
            .product()
    }

    /// Causal single pass, starting from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [0.0, 0.0]);
        }
        y
    }

    /// Number of samples of odd extension added on each side by [`Butterworth::filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }

    /// Forward-backward application: zero phase, squared magnitude response.
    ///
    /// The input is extended by odd reflection and each pass starts from the
    /// steady state of its first sample, so constants pass through unchanged.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.pad_len();
        if x.len() <= pad {
            return Err(Error::input(format!(
                "sequence of length {} too short for order-{} zero-phase filtering (need > {pad})",
                x.len(),
                self.order
            )));
        }
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        self.pass(&mut ext);
        ext.reverse();
        self.pass(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    fn pass(&self, x: &mut [f64]) {
        let mut level = x[0];
        for s in &self.sections {
            s.run(x, s.steady_state(level));
            level *= s.dc_gain();
        }
    }
}

/// Zero-phase Butterworth low-pass of `samples` recorded at `fs` Hz.
pub fn butterworth_lowpass(samples: &[f64], fs: f64, cutoff: f64, order: usize) -> Result<Vec<f64>> {
    Butterworth::lowpass(order, cutoff, fs)?.filtfilt(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Closed form of the bilinear-transformed Butterworth magnitude.
    fn analytic_mag2(f: f64, fc: f64, fs: f64, order: usize) -> f64 {
        let r = (PI * f / fs).tan() / (PI * fc / fs).tan();
        1.0 / (1.0 + r.powi(2 * order as i32))
    }

    #[test]
    fn unit_dc_gain() {
        for order in 1..=6 {
            let f = Butterworth::lowpass(order, 0.5, 4.0).unwrap();
            assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_passes_unchanged() {
        let x = vec![5.0; 200];
        let y = butterworth_lowpass(&x, 4.0, 0.5, 4).unwrap();
        assert!(y.iter().all(|v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn magnitude_matches_closed_form() {
        for order in [1, 2, 3, 4, 5] {
            let f = Butterworth::lowpass(order, 2.0, 64.0).unwrap();
            for freq in [0.3, 1.0, 2.0, 5.0, 20.0] {
                let m2 = f.magnitude(freq).powi(2);
                let oracle = analytic_mag2(freq, 2.0, 64.0, order);
                assert!((m2 - oracle).abs() < 1e-9, "order {order} f {freq}: {m2} vs {oracle}");
            }
        }
    }

    #[test]
    fn stopband_sine_attenuated_per_squared_response() {
        let fs = 4.0;
        let x: Vec<f64> = (0..4000)
            .map(|i| (2.0 * PI * 1.5 * i as f64 / fs).sin() * 2f64.sqrt())
            .collect();
        let y = butterworth_lowpass(&x, fs, 0.5, 4).unwrap();
        let inner = &y[500..3500];
        let ratio = rms(inner) / rms(&x[500..3500]);
        let oracle = analytic_mag2(1.5, 0.5, fs, 4);
        assert!(ratio <= oracle * 1.1, "ratio {ratio} oracle {oracle}");
        assert!(ratio >= oracle * 0.9, "ratio {ratio} oracle {oracle}");
    }

    #[test]
    fn passband_sine_is_not_shifted() {
        let fs = 64.0;
        let x: Vec<f64> = (0..6400)
            .map(|i| (2.0 * PI * 0.7 * i as f64 / fs).sin())
            .collect();
        let y = butterworth_lowpass(&x, fs, 2.0, 4).unwrap();
        let g = analytic_mag2(0.7, 2.0, fs, 4);
        // Zero phase: y is x scaled, with no lag.
        for i in 1000..5400 {
            assert!((y[i] - g * x[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_cutoff_at_nyquist_and_short_input() {
        assert!(matches!(
            Butterworth::lowpass(4, 2.0, 4.0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            butterworth_lowpass(&[1.0; 12], 4.0, 0.5, 4),
            Err(Error::Input(_))
        ));
        assert!(butterworth_lowpass(&[1.0; 13], 4.0, 0.5, 4).is_ok());
    }
}
