//! HRV feature catalog: time-domain, frequency-domain and Poincaré/entropy
//! features of one window of RR intervals.
//!
//! Sample statistics (SDNN, SDSD) use `n - 1` denominators; the Poincaré
//! descriptors use population variances so that
//! `SD1^2 + SD2^2 = 2 var_p(RR)` holds exactly. Successive differences are
//! taken only between intervals that are adjacent in the beat sequence, so
//! a rejected interval never produces a spurious jump.

use serde::{Deserialize, Serialize};

use crate::dsp::welch_psd;
use crate::error::{Error, Result};
use crate::pulse::RrSeries;

/// Bumped whenever a feature's definition or the column order changes.
pub const CATALOG_VERSION: &str = "hrv-catalog/1";

/// Shortest window for which spectral features are computed.
pub const MIN_SPECTRAL_SPAN_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Time,
    Frequency,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureDef {
    pub name: &'static str,
    pub domain: Domain,
    pub unit: &'static str,
    pub formula: &'static str,
}

const fn def(
    name: &'static str,
    domain: Domain,
    unit: &'static str,
    formula: &'static str,
) -> FeatureDef {
    FeatureDef {
        name,
        domain,
        unit,
        formula,
    }
}

pub const N_TIME: usize = 14;
pub const N_FREQUENCY: usize = 8;
pub const N_NONLINEAR: usize = 5;
pub const N_FEATURES: usize = N_TIME + N_FREQUENCY + N_NONLINEAR;

/// Column order of every [`FeatureVector`].
pub const CATALOG: [FeatureDef; N_FEATURES] = [
    def("MeanNN", Domain::Time, "ms", "mean(RR)"),
    def("SDNN", Domain::Time, "ms", "std(RR, ddof=1)"),
    def("RMSSD", Domain::Time, "ms", "sqrt(mean(dRR^2))"),
    def("SDSD", Domain::Time, "ms", "std(dRR, ddof=1)"),
    def("CVNN", Domain::Time, "1", "SDNN / MeanNN"),
    def("CVSD", Domain::Time, "1", "RMSSD / MeanNN"),
    def("MedianNN", Domain::Time, "ms", "median(RR)"),
    def(
        "MadNN",
        Domain::Time,
        "ms",
        "1.4826 * median(|RR - median(RR)|)",
    ),
    def("MCVNN", Domain::Time, "1", "MadNN / MedianNN"),
    def(
        "IQRNN",
        Domain::Time,
        "ms",
        "q75(RR) - q25(RR), linear interpolation",
    ),
    def("pNN20", Domain::Time, "%", "100 * #(|dRR| > 20 ms) / #dRR"),
    def("pNN50", Domain::Time, "%", "100 * #(|dRR| > 50 ms) / #dRR"),
    def("MinNN", Domain::Time, "ms", "min(RR)"),
    def("MaxNN", Domain::Time, "ms", "max(RR)"),
    def(
        "VLF",
        Domain::Frequency,
        "ms^2",
        "PSD power in [0.0033, 0.04) Hz",
    ),
    def(
        "LF",
        Domain::Frequency,
        "ms^2",
        "PSD power in [0.04, 0.15) Hz",
    ),
    def(
        "HF",
        Domain::Frequency,
        "ms^2",
        "PSD power in [0.15, 0.4) Hz",
    ),
    def("TP", Domain::Frequency, "ms^2", "VLF + LF + HF"),
    def("LFHF", Domain::Frequency, "1", "LF / HF"),
    def("LFn", Domain::Frequency, "1", "LF / (LF + HF)"),
    def("HFn", Domain::Frequency, "1", "HF / (LF + HF)"),
    def("LnHF", Domain::Frequency, "ln(ms^2)", "ln(HF)"),
    def("SD1", Domain::Nonlinear, "ms", "sqrt(0.5) * std_p(dRR)"),
    def(
        "SD2",
        Domain::Nonlinear,
        "ms",
        "sqrt(2 std_p(RR)^2 - 0.5 std_p(dRR)^2)",
    ),
    def("SD1SD2", Domain::Nonlinear, "1", "SD1 / SD2"),
    def("CSI", Domain::Nonlinear, "1", "SD2 / SD1"),
    def(
        "ShanEn",
        Domain::Nonlinear,
        "bit",
        "-sum p log2 p over 8 equal-width bins on [min, max]",
    ),
];

pub fn feature_names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|d| d.name)
}

pub fn feature_index(name: &str) -> Option<usize> {
    CATALOG.iter().position(|d| d.name == name)
}

/// One value per catalog entry, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_FEATURES {
            return Err(Error::invalid(format!(
                "feature vector needs {N_FEATURES} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unusable(format!(
                "{} is not finite",
                CATALOG[i].name
            )));
        }
        Ok(FeatureVector { values })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        feature_names().zip(self.values.iter().copied())
    }
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Variance with `n - ddof` denominator.
fn variance(x: &[f64], ddof: usize) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - ddof) as f64
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn median(x: &[f64]) -> f64 {
    quantile_sorted(&sorted(x), 0.5)
}

/// Differences between intervals that are adjacent in the beat sequence.
pub fn successive_differences(rr: &RrSeries) -> Vec<f64> {
    (1..rr.rr_ms.len())
        .filter(|&i| rr.rr_end_idx[i] == rr.rr_end_idx[i - 1] + 1)
        .map(|i| rr.rr_ms[i] - rr.rr_ms[i - 1])
        .collect()
}

fn require_intervals(rr: &RrSeries, n: usize) -> Result<()> {
    if rr.len() < n {
        return Err(Error::InsufficientBeats(format!(
            "{} intervals in window, need at least {n}",
            rr.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Time domain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDomain {
    pub mean_nn: f64,
    pub sdnn: f64,
    pub rmssd: f64,
    pub sdsd: f64,
    pub cvnn: f64,
    pub cvsd: f64,
    pub median_nn: f64,
    pub mad_nn: f64,
    pub mcvnn: f64,
    pub iqr_nn: f64,
    pub pnn20: f64,
    pub pnn50: f64,
    pub min_nn: f64,
    pub max_nn: f64,
}

impl TimeDomain {
    pub fn values(&self) -> [f64; N_TIME] {
        [
            self.mean_nn,
            self.sdnn,
            self.rmssd,
            self.sdsd,
            self.cvnn,
            self.cvsd,
            self.median_nn,
            self.mad_nn,
            self.mcvnn,
            self.iqr_nn,
            self.pnn20,
            self.pnn50,
            self.min_nn,
            self.max_nn,
        ]
    }
}

pub fn time_domain(rr: &RrSeries) -> Result<TimeDomain> {
    require_intervals(rr, 4)?;
    let x = &rr.rr_ms;
    let diffs = successive_differences(rr);
    if diffs.len() < 2 {
        return Err(Error::Unusable(
            "fewer than two successive differences between adjacent intervals".into(),
        ));
    }
    let s = sorted(x);
    let mean_nn = mean(x);
    let sdnn = variance(x, 1).sqrt();
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let sdsd = variance(&diffs, 1).sqrt();
    let median_nn = quantile_sorted(&s, 0.5);
    let abs_dev: Vec<f64> = x.iter().map(|v| (v - median_nn).abs()).collect();
    let mad_nn = 1.4826 * median(&abs_dev);
    let pnn = |thr: f64| {
        100.0 * diffs.iter().filter(|d| d.abs() > thr).count() as f64 / diffs.len() as f64
    };
    Ok(TimeDomain {
        mean_nn,
        sdnn,
        rmssd,
        sdsd,
        cvnn: sdnn / mean_nn,
        cvsd: rmssd / mean_nn,
        median_nn,
        mad_nn,
        mcvnn: mad_nn / median_nn,
        iqr_nn: quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25),
        pnn20: pnn(20.0),
        pnn50: pnn(50.0),
        min_nn: s[0],
        max_nn: s[s.len() - 1],
    })
}

// ---------------------------------------------------------------------------
// Frequency domain
// ---------------------------------------------------------------------------

pub const VLF_BAND: (f64, f64) = (0.0033, 0.04);
pub const LF_BAND: (f64, f64) = (0.04, 0.15);
pub const HF_BAND: (f64, f64) = (0.15, 0.4);

/// Band powers below this many ms^2 are treated as zero.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormDenominator {
    /// LF + HF.
    LfPlusHf,
    /// VLF + LF + HF.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    pub resample_hz: f64,
    pub max_segment: usize,
    pub overlap: f64,
    pub norm: NormDenominator,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig {
            resample_hz: 4.0,
            max_segment: 256,
            overlap: 0.5,
            norm: NormDenominator::LfPlusHf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPowers {
    pub vlf: f64,
    pub lf: f64,
    pub hf: f64,
}

/// Linear interpolation of the RR tachogram onto a uniform grid spanning
/// the first to the last terminating peak. Returns mean-removed values.
pub fn resample_tachogram(rr: &RrSeries, fs: f64) -> Vec<f64> {
    let t: Vec<f64> = rr.rr_end_times().collect();
    let y = &rr.rr_ms;
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let n = ((t1 - t0) * fs).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let tk = t0 + k as f64 / fs;
        while j + 2 < t.len() && t[j + 1] < tk {
            j += 1;
        }
        let (ta, tb) = (t[j], t[j + 1]);
        let w = ((tk - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(y[j] + w * (y[j + 1] - y[j]));
    }
    let m = mean(&out);
    out.iter_mut().for_each(|v| *v -= m);
    out
}

/// VLF/LF/HF power of the resampled tachogram's Welch PSD.
pub fn band_powers(rr: &RrSeries, cfg: &FrequencyConfig) -> Result<BandPowers> {
    require_intervals(rr, 2)?;
    let x = resample_tachogram(rr, cfg.resample_hz);
    let seg = cfg.max_segment.min(x.len());
    let psd = welch_psd(&x, cfg.resample_hz, seg, cfg.overlap)?;
    Ok(BandPowers {
        vlf: psd.band_power(VLF_BAND.0, VLF_BAND.1),
        lf: psd.band_power(LF_BAND.0, LF_BAND.1),
        hf: psd.band_power(HF_BAND.0, HF_BAND.1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDomain {
    pub vlf: f64,
    pub lf: f64,
    pub hf: f64,
    pub tp: f64,
    pub lf_hf: f64,
    pub lfn: f64,
    pub hfn: f64,
    pub ln_hf: f64,
}

impl FrequencyDomain {
    pub fn values(&self) -> [f64; N_FREQUENCY] {
        [
            self.vlf, self.lf, self.hf, self.tp, self.lf_hf, self.lfn, self.hfn, self.ln_hf,
        ]
    }
}

pub fn frequency_domain(rr: &RrSeries, window_span_s: f64) -> Result<FrequencyDomain> {
    frequency_domain_with(rr, window_span_s, &FrequencyConfig::default())
}

pub fn frequency_domain_with(
    rr: &RrSeries,
    window_span_s: f64,
    cfg: &FrequencyConfig,
) -> Result<FrequencyDomain> {
    if !(window_span_s >= MIN_SPECTRAL_SPAN_S) {
        return Err(Error::SpectralSpan {
            span_s: window_span_s,
        });
    }
    require_intervals(rr, 20)?;
    let BandPowers { vlf, lf, hf } = band_powers(rr, cfg)?;
    if hf < POWER_FLOOR {
        return Err(Error::Unusable("HF power is zero; LF/HF undefined".into()));
    }
    let tp = vlf + lf + hf;
    let denom = match cfg.norm {
        NormDenominator::LfPlusHf => lf + hf,
        NormDenominator::Total => tp,
    };
    Ok(FrequencyDomain {
        vlf,
        lf,
        hf,
        tp,
        lf_hf: lf / hf,
        lfn: lf / denom,
        hfn: hf / denom,
        ln_hf: hf.ln(),
    })
}

// ---------------------------------------------------------------------------
// Non-linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poincare {
    pub sd1: f64,
    pub sd2: f64,
}

/// SD1/SD2 via the variance identities.
pub fn poincare(rr: &RrSeries) -> Result<Poincare> {
    require_intervals(rr, 2)?;
    let diffs = successive_differences(rr);
    if diffs.is_empty() {
        return Err(Error::Unusable("no successive differences".into()));
    }
    let var_d = variance(&diffs, 0);
    let var_rr = variance(&rr.rr_ms, 0);
    Ok(Poincare {
        sd1: (0.5 * var_d).sqrt(),
        sd2: (2.0 * var_rr - 0.5 * var_d).max(0.0).sqrt(),
    })
}

/// Shannon entropy in bits of an 8-bin equal-width histogram over `[min, max]`.
pub fn shannon_entropy(rr_ms: &[f64]) -> f64 {
    const BINS: usize = 8;
    let lo = rr_ms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rr_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return 0.0;
    }
    let mut counts = [0usize; BINS];
    for v in rr_ms {
        let b = (((v - lo) / (hi - lo)) * BINS as f64).floor() as usize;
        counts[b.min(BINS - 1)] += 1;
    }
    let n = rr_ms.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinear {
    pub sd1: f64,
    pub sd2: f64,
    pub sd1_sd2: f64,
    pub csi: f64,
    pub shan_en: f64,
}

impl Nonlinear {
    pub fn values(&self) -> [f64; N_NONLINEAR] {
        [self.sd1, self.sd2, self.sd1_sd2, self.csi, self.shan_en]
    }
}

pub fn nonlinear(rr: &RrSeries) -> Result<Nonlinear> {
    require_intervals(rr, 4)?;
    let Poincare { sd1, sd2 } = poincare(rr)?;
    let scale = mean(&rr.rr_ms);
    if sd1 <= 1e-12 * scale {
        return Err(Error::Unusable("SD1 is zero; CSI undefined".into()));
    }
    if sd2 <= 1e-12 * scale {
        return Err(Error::Unusable("SD2 is zero; SD1/SD2 undefined".into()));
    }
    Ok(Nonlinear {
        sd1,
        sd2,
        sd1_sd2: sd1 / sd2,
        csi: sd2 / sd1,
        shan_en: shannon_entropy(&rr.rr_ms),
    })
}

// ---------------------------------------------------------------------------
// Full vector
// ---------------------------------------------------------------------------

/// Settings for computing a full feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frequency: FrequencyConfig,
    /// Windows with a larger fraction of rejected intervals are unusable.
    pub max_rejected_frac: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frequency: FrequencyConfig::default(),
            max_rejected_frac: 0.2,
        }
    }
}

/// All catalog features of one window, with default settings.
pub fn all_features(rr: &RrSeries, window_span_s: f64) -> Result<FeatureVector> {
    all_features_with(rr, window_span_s, &FeatureConfig::default())
}

pub fn all_features_with(
    rr: &RrSeries,
    window_span_s: f64,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    if !(window_span_s >= MIN_SPECTRAL_SPAN_S) {
        return Err(Error::SpectralSpan {
            span_s: window_span_s,
        });
    }
    let rejected = rr.rejected_fraction();
    if rejected > cfg.max_rejected_frac {
        return Err(Error::Unusable(format!(
            "{:.0}% of intervals rejected (limit {:.0}%)",
            100.0 * rejected,
            100.0 * cfg.max_rejected_frac
        )));
    }
    let time = time_domain(rr)?;
    let freq = frequency_domain_with(rr, window_span_s, &cfg.frequency)?;
    let nl = nonlinear(rr)?;
    let mut values = Vec::with_capacity(N_FEATURES);
    values.extend(time.values());
    values.extend(freq.values());
    values.extend(nl.values());
    FeatureVector::from_values(values)
}
