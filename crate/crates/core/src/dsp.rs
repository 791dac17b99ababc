//! Butterworth band-pass design as a cascade of second-order sections,
//! causal and forward-backward application, and Welch PSD estimation.
//!
//! The band-pass is designed from the analog Butterworth low-pass prototype:
//! each prototype pole `p` is mapped through `s -> (s^2 + w0^2) / (s * bw)`
//! to a pair of band-pass poles, both band edges are prewarped, and the
//! bilinear transform takes every pole to the z-plane. An order-`n` design
//! has `2n` poles, `n` zeros at DC and `n` at Nyquist, so it factors into
//! exactly `n` biquads of the form `g * (1 - z^-2) / (1 + a1 z^-1 + a2 z^-2)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest order accepted by [`design_butter_bandpass`].
pub const MAX_ORDER: usize = 16;

/// One direct-form-II-transposed second-order section. `a0` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Transfer function at `z = e^{j omega}`.
    pub fn response(&self, omega: f64) -> Complex64 {
        // The real axis points are evaluated exactly so zeros at DC and
        // Nyquist come out as exact zeros.
        let zi = if omega == 0.0 {
            Complex64::new(1.0, 0.0)
        } else if omega == PI {
            Complex64::new(-1.0, 0.0)
        } else {
            Complex64::from_polar(1.0, -omega)
        };
        let zi2 = zi * zi;
        (self.b0 + self.b1 * zi + self.b2 * zi2) / (1.0 + self.a1 * zi + self.a2 * zi2)
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Pole radii of the denominator.
    pub fn pole_radii(&self) -> [f64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (-self.a1 + disc) / 2.0;
        let p2 = (-self.a1 - disc) / 2.0;
        [p1.norm(), p2.norm()]
    }

    /// Steady-state delay-line contents for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b0, self.b2 - self.a2 * g]
    }

    fn run(&self, x: &mut [f64], mut s: [f64; 2]) {
        for v in x.iter_mut() {
            let xi = *v;
            let y = self.b0 * xi + s[0];
            s[0] = self.b1 * xi - self.a1 * y + s[1];
            s[1] = self.b2 * xi - self.a2 * y;
            *v = y;
        }
    }
}

/// A band-pass filter as a cascade of biquads plus its design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl BiquadCascade {
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let omega = if 2.0 * f_hz == self.fs {
            PI
        } else {
            2.0 * PI * f_hz / self.fs
        };
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// Single-pass magnitude response at `f_hz`.
    pub fn magnitude(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm()
    }

    /// Edge padding used by [`filtfilt`].
    pub fn padlen(&self) -> usize {
        9 * self.order
    }

    /// Causal filtering from a zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [0.0; 2]);
        }
        y
    }

    /// Causal filtering with every section started at the steady state for
    /// a constant input equal to `x[0]`.
    fn filter_steady(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut level = x0;
        for s in &self.sections {
            let [z0, z1] = s.step_state();
            s.run(x, [z0 * level, z1 * level]);
            level *= s.dc_gain();
        }
    }
}

/// Designs a digital Butterworth band-pass of the given order.
pub fn design_butter_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs: f64,
) -> Result<BiquadCascade> {
    if order == 0 {
        return Err(Error::invalid("filter order must be at least 1"));
    }
    if order > MAX_ORDER {
        return Err(Error::UnstableFilter(format!(
            "order {order} exceeds the supported maximum of {MAX_ORDER}"
        )));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid(format!(
            "sampling rate must be positive, got {fs}"
        )));
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::invalid(format!(
            "band edges must satisfy 0 < low < high < fs/2, got {low_hz}..{high_hz} at fs {fs}"
        )));
    }

    // Bilinear transform with k = 2 fs; prewarp both edges.
    let k = 2.0 * fs;
    let w1 = k * (PI * low_hz / fs).tan();
    let w2 = k * (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;
    let bilinear = |s: Complex64| (k + s) / (k - s);

    let mut pole_pairs: Vec<(Complex64, Complex64)> = Vec::with_capacity(order);
    // Prototype poles in the upper half plane plus, for odd orders, the real one.
    for i in 0..order.div_ceil(2) {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        let s1 = (pb + disc) / 2.0;
        let s2 = (pb - disc) / 2.0;
        if p.im.abs() < 1e-12 {
            // Real prototype pole: its two band-pass poles form one real quadratic.
            pole_pairs.push((bilinear(s1), bilinear(s2)));
        } else {
            pole_pairs.push((bilinear(s1), bilinear(s1).conj()));
            pole_pairs.push((bilinear(s2), bilinear(s2).conj()));
        }
    }
    debug_assert_eq!(pole_pairs.len(), order);

    // Every section is normalized to unit gain at the prewarped center, where
    // the analog Butterworth band-pass has exactly unit gain.
    let omega_c = 2.0 * (w0sq.sqrt() / k).atan();
    let mut sections = Vec::with_capacity(order);
    for (za, zb) in pole_pairs {
        let a1 = -(za + zb).re;
        let a2 = (za * zb).re;
        let mut sec = Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1,
            a2,
        };
        let radii = sec.pole_radii();
        if radii.iter().any(|r| !r.is_finite() || *r >= 1.0 - 1e-12) {
            return Err(Error::UnstableFilter(format!(
                "section pole radius {:?} is not strictly inside the unit circle",
                radii
            )));
        }
        let g = 1.0 / sec.response(omega_c).norm();
        sec.b0 = g;
        sec.b2 = -g;
        sections.push(sec);
    }

    Ok(BiquadCascade {
        sections,
        order,
        low_hz,
        high_hz,
        fs,
    })
}

/// Zero-phase forward-backward filtering.
///
/// The input is extended at both ends by odd reflection of
/// [`BiquadCascade::padlen`] samples, and each pass starts from the steady
/// state matching its first sample. The effective magnitude response is
/// `|H|^2`.
pub fn filtfilt(cascade: &BiquadCascade, x: &[f64]) -> Result<Vec<f64>> {
    let pad = cascade.padlen();
    if x.len() <= pad {
        return Err(Error::TooShort {
            needed: pad + 1,
            got: x.len(),
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    cascade.filter_steady(&mut ext);
    ext.reverse();
    cascade.filter_steady(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    ZeroPhase,
    Causal,
}

/// Preprocessing band-pass settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub mode: FilterMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            order: 3,
            low_hz: 0.5,
            high_hz: 8.0,
            mode: FilterMode::ZeroPhase,
        }
    }
}

impl FilterConfig {
    pub fn design(&self, fs: f64) -> Result<BiquadCascade> {
        design_butter_bandpass(self.order, self.low_hz, self.high_hz, fs)
    }

    pub fn apply(&self, x: &[f64], fs: f64) -> Result<Vec<f64>> {
        let cascade = self.design(fs)?;
        match self.mode {
            FilterMode::ZeroPhase => filtfilt(&cascade, x),
            FilterMode::Causal => Ok(cascade.filter(x)),
        }
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Psd {
    /// Trapezoidal integral of the density over the bins with
    /// `low_hz <= f < high_hz`.
    pub fn band_power(&self, low_hz: f64, high_hz: f64) -> f64 {
        let idx: Vec<usize> = (0..self.freqs.len())
            .filter(|&i| self.freqs[i] >= low_hz && self.freqs[i] < high_hz)
            .collect();
        idx.windows(2)
            .map(|w| {
                let (i, j) = (w[0], w[1]);
                0.5 * (self.power[i] + self.power[j]) * (self.freqs[j] - self.freqs[i])
            })
            .sum()
    }

    /// Rectangle-rule integral over the whole grid.
    pub fn total_power(&self) -> f64 {
        let df = self.freqs.get(1).copied().unwrap_or(0.0);
        self.power.iter().sum::<f64>() * df
    }

    /// Frequency of the largest bin.
    pub fn peak_freq(&self) -> f64 {
        let i = (0..self.power.len())
            .max_by(|&a, &b| self.power[a].total_cmp(&self.power[b]))
            .unwrap_or(0);
        self.freqs.get(i).copied().unwrap_or(0.0)
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch averaged periodogram with a Hann window and per-segment mean
/// removal, scaled as a density so that it integrates to the variance.
pub fn welch_psd(x: &[f64], fs: f64, segment_len: usize, overlap_frac: f64) -> Result<Psd> {
    if segment_len < 8 {
        return Err(Error::invalid(format!(
            "segment length must be at least 8, got {segment_len}"
        )));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::invalid(format!(
            "overlap fraction must be in [0, 1), got {overlap_frac}"
        )));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid(format!(
            "sampling rate must be positive, got {fs}"
        )));
    }
    if x.len() < segment_len {
        return Err(Error::TooShort {
            needed: segment_len,
            got: x.len(),
        });
    }

    let overlap = (overlap_frac * segment_len as f64).floor() as usize;
    let step = segment_len - overlap;
    let n_segments = (x.len() - segment_len) / step + 1;
    let window = hann(segment_len);
    let scale = 1.0 / (fs * window.iter().map(|w| w * w).sum::<f64>());
    let n_bins = segment_len / 2 + 1;

    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut power = vec![0.0; n_bins];
    for seg in 0..n_segments {
        let chunk = &x[seg * step..seg * step + segment_len];
        let mean = chunk.iter().sum::<f64>() / segment_len as f64;
        for ((b, &v), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }

    let last_doubled = if segment_len.is_multiple_of(2) {
        n_bins - 1
    } else {
        n_bins
    };
    for (k, p) in power.iter_mut().enumerate() {
        *p *= scale / n_segments as f64;
        if k > 0 && k < last_doubled {
            *p *= 2.0;
        }
    }
    let freqs = (0..n_bins)
        .map(|k| k as f64 * fs / segment_len as f64)
        .collect();
    Ok(Psd { freqs, power })
}
