//! Systolic peak detection on band-passed PPG and RR interval screening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{RR_MAX_MS, RR_MIN_MS};

/// Two-moving-average systolic peak detector (Elgendi).
///
/// The filtered signal is clipped at zero and squared. A short moving
/// average tracks the systolic wave, a long one tracks the beat; samples
/// where the short average exceeds the long one plus `beat_offset` times
/// the mean of the squared signal form blocks of interest. Each block wide
/// enough to be a systolic wave contributes one peak at the signal's
/// maximum inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakDetector {
    pub peak_window_s: f64,
    pub beat_window_s: f64,
    pub beat_offset: f64,
    pub min_block_s: f64,
    pub refractory_s: f64,
}

impl Default for PeakDetector {
    fn default() -> Self {
        PeakDetector {
            peak_window_s: 0.111,
            beat_window_s: 0.667,
            beat_offset: 0.02,
            min_block_s: 0.111,
            refractory_s: 0.3,
        }
    }
}

/// Centered moving average; the window shrinks at the edges.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let before = (width - 1) / 2;
    let after = width - 1 - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Sub-sample offset of a local maximum from a three-point parabola.
fn parabolic_offset(y0: f64, y1: f64, y2: f64) -> f64 {
    let denom = y0 - 2.0 * y1 + y2;
    if denom < 0.0 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

impl PeakDetector {
    /// Peak times in seconds. A flat or empty signal yields no peaks.
    pub fn detect(&self, x: &[f64], fs: f64) -> Vec<f64> {
        if x.len() < 3 || !(fs > 0.0) {
            return Vec::new();
        }
        let squared: Vec<f64> = x.iter().map(|v| v.max(0.0).powi(2)).collect();
        let mean_sq = squared.iter().sum::<f64>() / squared.len() as f64;
        if !(mean_sq > 0.0) {
            return Vec::new();
        }
        let width = |s: f64| ((s * fs).round() as usize).max(1);
        let ma_peak = moving_average(&squared, width(self.peak_window_s));
        let ma_beat = moving_average(&squared, width(self.beat_window_s));
        let offset = self.beat_offset * mean_sq;
        let min_len = (self.min_block_s * fs).round() as usize;

        let mut peaks: Vec<f64> = Vec::new();
        let mut i = 0;
        while i < x.len() {
            if ma_peak[i] <= ma_beat[i] + offset {
                i += 1;
                continue;
            }
            let start = i;
            while i < x.len() && ma_peak[i] > ma_beat[i] + offset {
                i += 1;
            }
            if i - start < min_len {
                continue;
            }
            let k = (start..i).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
            let delta = if k > 0 && k + 1 < x.len() {
                parabolic_offset(x[k - 1], x[k], x[k + 1])
            } else {
                0.0
            };
            let t = (k as f64 + delta) / fs;
            if peaks
                .last()
                .is_some_and(|&last| t - last < self.refractory_s)
            {
                continue;
            }
            peaks.push(t);
        }
        peaks
    }
}

/// Systolic peak times of a filtered PPG signal, using default settings.
pub fn detect_peaks(x: &[f64], fs: f64) -> Vec<f64> {
    PeakDetector::default().detect(x, fs)
}

/// Screened RR intervals.
///
/// Interval `i` of the peak sequence ends at `peak_times_s[i + 1]`; intervals
/// outside the physiologic gate are dropped and only their terminating peak
/// index is kept, in `rejected_idx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrSeries {
    pub peak_times_s: Vec<f64>,
    pub rr_ms: Vec<f64>,
    /// Index into `peak_times_s` of each retained interval's terminating peak.
    pub rr_end_idx: Vec<usize>,
    pub rejected_idx: Vec<usize>,
}

impl RrSeries {
    /// Builds a series directly from intervals, with peaks at their
    /// cumulative sums starting from zero. No screening is applied.
    pub fn from_intervals(rr_ms: &[f64]) -> Self {
        let mut peaks = Vec::with_capacity(rr_ms.len() + 1);
        peaks.push(0.0);
        for rr in rr_ms {
            peaks.push(peaks.last().unwrap() + rr / 1000.0);
        }
        RrSeries {
            peak_times_s: peaks,
            rr_ms: rr_ms.to_vec(),
            rr_end_idx: (1..=rr_ms.len()).collect(),
            rejected_idx: Vec::new(),
        }
    }

    pub fn n_rejected(&self) -> usize {
        self.rejected_idx.len()
    }

    pub fn len(&self) -> usize {
        self.rr_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rr_ms.is_empty()
    }

    /// Terminating peak time of each retained interval.
    pub fn rr_end_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.rr_end_idx.iter().map(|&i| self.peak_times_s[i])
    }

    /// Fraction of candidate intervals dropped by screening.
    pub fn rejected_fraction(&self) -> f64 {
        let total = self.rr_ms.len() + self.rejected_idx.len();
        if total == 0 {
            0.0
        } else {
            self.rejected_idx.len() as f64 / total as f64
        }
    }

    /// The intervals (retained and rejected) whose terminating peak lies in
    /// `[start_s, end_s)`, together with the peaks that bound them.
    pub fn window(&self, start_s: f64, end_s: f64) -> RrSeries {
        let lo = self.peak_times_s.partition_point(|&t| t < start_s);
        let hi = self.peak_times_s.partition_point(|&t| t < end_s);
        let first_peak = lo.saturating_sub(1);
        let first_end = lo.max(1);
        let keep = |idx: &[usize]| -> Vec<usize> {
            idx.iter()
                .filter(|&&i| i >= first_end && i < hi)
                .map(|&i| i - first_peak)
                .collect()
        };
        let (rr_ms, rr_end_idx): (Vec<f64>, Vec<usize>) = self
            .rr_ms
            .iter()
            .zip(&self.rr_end_idx)
            .filter(|(_, &i)| i >= first_end && i < hi)
            .map(|(&rr, &i)| (rr, i - first_peak))
            .unzip();
        RrSeries {
            peak_times_s: self.peak_times_s[first_peak..hi.max(first_peak)].to_vec(),
            rr_ms,
            rr_end_idx,
            rejected_idx: keep(&self.rejected_idx),
        }
    }
}

/// Converts peak times to RR intervals, dropping those outside
/// `[300, 2000]` ms. Intervals neighbouring a dropped one are kept as they
/// are; nothing is merged across the gap.
pub fn to_rr(peak_times_s: &[f64]) -> Result<RrSeries> {
    if peak_times_s.len() < 3 {
        return Err(Error::InsufficientBeats(format!(
            "{} peaks, need at least 3",
            peak_times_s.len()
        )));
    }
    if peak_times_s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("peak times must be strictly increasing"));
    }
    let mut rr_ms = Vec::new();
    let mut rr_end_idx = Vec::new();
    let mut rejected_idx = Vec::new();
    for i in 1..peak_times_s.len() {
        let rr = (peak_times_s[i] - peak_times_s[i - 1]) * 1000.0;
        if (RR_MIN_MS..=RR_MAX_MS).contains(&rr) {
            rr_ms.push(rr);
            rr_end_idx.push(i);
        } else {
            rejected_idx.push(i);
        }
    }
    if rr_ms.len() < 2 {
        return Err(Error::InsufficientBeats(format!(
            "{} intervals survive screening, need at least 2",
            rr_ms.len()
        )));
    }
    Ok(RrSeries {
        peak_times_s: peak_times_s.to_vec(),
        rr_ms,
        rr_end_idx,
        rejected_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FilterConfig;
    use crate::signal_io::{beat_times, synth_ppg};

    fn filtered(rr: &[f64], noise: f64, seed: u64) -> Vec<f64> {
        let trace = synth_ppg(rr, 100.0, noise, seed).unwrap();
        FilterConfig::default()
            .apply(&trace.samples, 100.0)
            .unwrap()
    }

    #[test]
    fn constant_rhythm_recovered() {
        let x = filtered(&[1000.0; 120], 0.0, 0);
        let peaks = detect_peaks(&x, 100.0);
        assert!((119..=121).contains(&peaks.len()), "{}", peaks.len());
        for w in peaks.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() < 0.005);
        }
    }

    #[test]
    fn flat_signal_has_no_peaks() {
        assert!(detect_peaks(&[0.0; 1000], 100.0).is_empty());
        assert!(detect_peaks(&[], 100.0).is_empty());
    }

    #[test]
    fn noisy_beats_mostly_recovered() {
        let plan: Vec<f64> = (0..120)
            .map(|i| 900.0 + 80.0 * (i as f64 * 0.7).sin())
            .collect();
        let truth = beat_times(&plan);
        let x = filtered(&plan, 0.1, 9);
        let peaks = detect_peaks(&x, 100.0);
        let hits = truth
            .iter()
            .filter(|&&t| peaks.iter().any(|&p| (p - t).abs() <= 0.05))
            .count();
        assert!(hits as f64 >= 0.98 * truth.len() as f64, "{hits}");
    }

    #[test]
    fn scale_invariant() {
        let x = filtered(&[850.0; 60], 0.0, 0);
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.0).collect();
        assert_eq!(detect_peaks(&x, 100.0), detect_peaks(&scaled, 100.0));
    }

    #[test]
    fn to_rr_examples() {
        let rr = to_rr(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rr.rr_ms, vec![1000.0; 3]);
        assert_eq!(rr.n_rejected(), 0);

        let rr = to_rr(&[0.0, 1.0, 3.5, 4.5]).unwrap();
        assert_eq!(rr.rr_ms, vec![1000.0, 1000.0]);
        assert_eq!(rr.n_rejected(), 1);
        assert_eq!(rr.rr_end_idx, vec![1, 3]);

        assert!(matches!(
            to_rr(&[0.0, 1.0]),
            Err(Error::InsufficientBeats(_))
        ));
        assert!(matches!(
            to_rr(&[0.0, 0.1, 0.2, 0.3]),
            Err(Error::InsufficientBeats(_))
        ));
    }

    #[test]
    fn window_uses_terminating_peak() {
        let rr = to_rr(&[0.0, 1.0, 2.0, 3.0, 3.1, 4.0, 5.0]).unwrap();
        // Intervals end at 1, 2, 3, (3.1 rejected), 4 (900 ms), 5.
        let w = rr.window(2.0, 4.5);
        assert_eq!(w.rr_ms.len(), 3);
        assert_eq!(w.n_rejected(), 1);
        assert_eq!(w.peak_times_s.first(), Some(&1.0));
        let ends: Vec<f64> = w.rr_end_times().collect();
        assert_eq!(ends, vec![2.0, 3.0, 4.0]);
        assert!(w.rr_ms.len() < w.peak_times_s.len());
    }
}
