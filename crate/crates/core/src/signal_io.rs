//! Recording types, the on-disk manifest format and the synthetic cohort
//! generator.
//!
//! A dataset on disk is a JSON manifest
//! `{"subjects": [{"id", "fs", "signal", "annotations", "suds"}]}` whose paths
//! are resolved relative to the manifest's directory. The three per-subject
//! files are CSV:
//!
//! * signal: header `ppg`, one sample per row; time is implied by `fs`.
//! * annotations: `start_s,end_s,condition`, condition `relaxing` or
//!   `stressful` (case-insensitive).
//! * SUDs: `time_s,value` with integer values in `[0, 100]`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest sampling rate at which systolic peak timing is still usable.
pub const MIN_FS: f64 = 25.0;

/// Physiologic bounds on a single RR interval, in ms.
pub const RR_MIN_MS: f64 = 300.0;
pub const RR_MAX_MS: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Relaxing,
    Stressful,
}

impl Condition {
    /// Binary class label: 0 relaxed, 1 stressed.
    pub fn label(self) -> u8 {
        match self {
            Condition::Relaxing => 0,
            Condition::Stressful => 1,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(Condition::Relaxing),
            1 => Some(Condition::Stressful),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Relaxing => "relaxing",
            Condition::Stressful => "stressful",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relaxing" => Ok(Condition::Relaxing),
            "stressful" => Ok(Condition::Stressful),
            other => Err(Error::invalid(format!(
                "unknown condition {other:?} (expected relaxing or stressful)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub condition: Condition,
}

impl ConditionSpan {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SudsRating {
    pub time_s: f64,
    pub value: u8,
}

/// One subject's PPG recording with its condition layout and SUDs ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgTrace {
    pub subject_id: String,
    pub fs: f64,
    pub samples: Vec<f64>,
    pub annotations: Vec<ConditionSpan>,
    pub suds: Vec<SudsRating>,
}

impl PpgTrace {
    /// Builds a trace and checks its invariants.
    pub fn new(
        subject_id: impl Into<String>,
        fs: f64,
        samples: Vec<f64>,
        annotations: Vec<ConditionSpan>,
        suds: Vec<SudsRating>,
    ) -> Result<Self> {
        let trace = PpgTrace {
            subject_id: subject_id.into(),
            fs,
            samples,
            annotations,
            suds,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.subject_id;
        if !(self.fs.is_finite() && self.fs >= MIN_FS) {
            return Err(Error::subject(
                id,
                format!("sampling rate {} Hz is below {MIN_FS} Hz", self.fs),
            ));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::subject(id, format!("sample {i} is not finite")));
        }
        let duration = self.duration_s();
        let mut prev_end = f64::NEG_INFINITY;
        for span in &self.annotations {
            check_span(span, prev_end, duration).map_err(|m| Error::subject(id, m))?;
            prev_end = span.end_s;
        }
        for r in &self.suds {
            check_suds(r).map_err(|m| Error::subject(id, m))?;
        }
        Ok(())
    }

    /// The condition span a point in time belongs to.
    ///
    /// Spans are closed on both ends; a time on a shared boundary belongs to
    /// the span that ends there (a rating given at the end of a block
    /// describes that block).
    pub fn span_at(&self, t: f64) -> Option<&ConditionSpan> {
        self.annotations
            .iter()
            .find(|s| s.start_s <= t && t <= s.end_s)
    }
}

fn check_span(
    span: &ConditionSpan,
    prev_end: f64,
    duration: f64,
) -> std::result::Result<(), String> {
    if !(span.start_s.is_finite() && span.end_s.is_finite()) || span.end_s <= span.start_s {
        return Err(format!(
            "span [{}, {}] must have end_s > start_s",
            span.start_s, span.end_s
        ));
    }
    if span.start_s < prev_end {
        return Err(format!(
            "span starting at {} s overlaps or precedes the previous span ending at {prev_end} s",
            span.start_s
        ));
    }
    // Float slack for spans written with limited precision.
    if span.start_s < 0.0 || span.end_s > duration + 1e-6 {
        return Err(format!(
            "span [{}, {}] lies outside the recording [0, {duration}]",
            span.start_s, span.end_s
        ));
    }
    Ok(())
}

fn check_suds(r: &SudsRating) -> std::result::Result<(), String> {
    if r.value > 100 {
        return Err(format!("SUDs out of [0,100]: {}", r.value));
    }
    if !r.time_s.is_finite() {
        return Err("SUDs time is not finite".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    traces: Vec<PpgTrace>,
}

impl Dataset {
    pub fn new(traces: Vec<PpgTrace>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::invalid("dataset has no subjects"));
        }
        let mut seen = HashSet::new();
        for t in &traces {
            if !seen.insert(t.subject_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate subject id {:?}",
                    t.subject_id
                )));
            }
        }
        Ok(Dataset { traces })
    }

    pub fn traces(&self) -> &[PpgTrace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = &str> {
        self.traces.iter().map(|t| t.subject_id.as_str())
    }
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Shape of one synthetic beat: a squared-cosine systolic lobe whose maximum
/// sits at the beat time, optionally followed by a smaller dicrotic lobe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTemplate {
    pub width_s: f64,
    pub amplitude: f64,
    /// `(relative amplitude, delay after the systolic peak in s)`.
    pub dicrotic: Option<(f64, f64)>,
}

impl Default for PulseTemplate {
    fn default() -> Self {
        PulseTemplate {
            width_s: 0.3,
            amplitude: 1.0,
            dicrotic: Some((0.3, 0.25)),
        }
    }
}

impl PulseTemplate {
    fn lobe(width: f64, dt: f64) -> f64 {
        if dt.abs() >= width / 2.0 {
            0.0
        } else {
            let c = (PI * dt / width).cos();
            c * c
        }
    }

    /// Template value `dt` seconds after the beat time.
    pub fn value(&self, dt: f64) -> f64 {
        let mut v = Self::lobe(self.width_s, dt);
        if let Some((amp, delay)) = self.dicrotic {
            v += amp * Self::lobe(self.width_s, dt - delay);
        }
        self.amplitude * v
    }

    /// Support of the template relative to the beat time.
    fn support(&self) -> (f64, f64) {
        let half = self.width_s / 2.0;
        let end = match self.dicrotic {
            Some((_, delay)) => half.max(delay + half),
            None => half,
        };
        (-half, end)
    }
}

/// Renders beats at `beat_times` into `n` samples and adds seeded Gaussian noise.
fn render(
    beat_times: &[f64],
    n: usize,
    fs: f64,
    noise_sigma: f64,
    seed: u64,
    template: &PulseTemplate,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; n];
    let (lo, hi) = template.support();
    for &tb in beat_times {
        let first = ((tb + lo) * fs).ceil().max(0.0) as usize;
        let last = (((tb + hi) * fs).floor().max(-1.0) + 1.0) as usize;
        for (i, xi) in x.iter_mut().enumerate().take(last.min(n)).skip(first) {
            *xi += template.value(i as f64 / fs - tb);
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::invalid(format!("noise_sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for xi in &mut x {
            *xi += normal.sample(&mut rng);
        }
    }
    Ok(x)
}

/// Synthesizes a PPG trace whose beats follow `rr_plan` (ms).
///
/// Beat `k` sits at the cumulative sum of the first `k + 1` intervals; the
/// trace runs half a second past the last beat. The result carries no
/// annotations or SUDs.
pub fn synth_ppg(rr_plan: &[f64], fs: f64, noise_sigma: f64, seed: u64) -> Result<PpgTrace> {
    synth_ppg_with(rr_plan, fs, noise_sigma, seed, &PulseTemplate::default())
}

pub fn synth_ppg_with(
    rr_plan: &[f64],
    fs: f64,
    noise_sigma: f64,
    seed: u64,
    template: &PulseTemplate,
) -> Result<PpgTrace> {
    if rr_plan.is_empty() {
        return Err(Error::invalid("rr_plan is empty"));
    }
    if let Some(rr) = rr_plan
        .iter()
        .find(|rr| !(RR_MIN_MS..=RR_MAX_MS).contains(*rr))
    {
        return Err(Error::invalid(format!(
            "RR interval {rr} ms outside [{RR_MIN_MS}, {RR_MAX_MS}]"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(
            "noise_sigma must be finite and non-negative",
        ));
    }
    let beats = beat_times(rr_plan);
    let duration = beats.last().copied().unwrap_or(0.0) + 0.5;
    let n = (duration * fs).ceil() as usize;
    let samples = render(&beats, n, fs, noise_sigma, seed, template)?;
    PpgTrace::new("synthetic", fs, samples, Vec::new(), Vec::new())
}

/// Cumulative beat times in seconds for an RR plan in ms.
pub fn beat_times(rr_plan: &[f64]) -> Vec<f64> {
    rr_plan
        .iter()
        .scan(0.0, |t, rr| {
            *t += rr / 1000.0;
            Some(*t)
        })
        .collect()
}

/// Sinusoidal RR modulation amplitudes, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvProfile {
    /// Amplitude of the 0.1 Hz component.
    pub lf_ms: f64,
    /// Amplitude of the 0.25 Hz component.
    pub hf_ms: f64,
}

pub const LF_MOD_HZ: f64 = 0.1;
pub const HF_MOD_HZ: f64 = 0.25;

/// Parameters of a synthetic two-condition cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCohortSpec {
    pub n_subjects: usize,
    pub fs: f64,
    /// Length of each condition span in seconds.
    pub span_s: f64,
    pub relaxed_hr: f64,
    pub stressed_hr: f64,
    pub relaxed_hrv: HrvProfile,
    pub stressed_hrv: HrvProfile,
    pub noise_sigma: f64,
    /// Std of white beat-to-beat RR jitter, in ms.
    pub rr_jitter_ms: f64,
    /// Std of the per-subject heart-rate offset, in bpm (shared by both conditions).
    pub subject_hr_sd: f64,
    pub seed: u64,
}

impl Default for SynthCohortSpec {
    fn default() -> Self {
        SynthCohortSpec {
            n_subjects: 16,
            fs: 100.0,
            span_s: 420.0,
            relaxed_hr: 65.0,
            stressed_hr: 85.0,
            relaxed_hrv: HrvProfile {
                lf_ms: 40.0,
                hf_ms: 35.0,
            },
            stressed_hrv: HrvProfile {
                lf_ms: 20.0,
                hf_ms: 8.0,
            },
            noise_sigma: 0.02,
            rr_jitter_ms: 8.0,
            subject_hr_sd: 3.0,
            seed: 7,
        }
    }
}

impl SynthCohortSpec {
    /// A cohort whose two conditions are generated identically.
    pub fn null(seed: u64) -> Self {
        let base = SynthCohortSpec::default();
        SynthCohortSpec {
            stressed_hr: base.relaxed_hr,
            stressed_hrv: base.relaxed_hrv,
            seed,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fs", self.fs),
            ("span_s", self.span_s),
            ("relaxed_hr", self.relaxed_hr),
            ("stressed_hr", self.stressed_hr),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_subjects == 0 {
            return Err(Error::invalid("n_subjects must be at least 1"));
        }
        if self.fs < MIN_FS {
            return Err(Error::invalid(format!("fs must be at least {MIN_FS} Hz")));
        }
        let non_negative = [
            ("noise_sigma", self.noise_sigma),
            ("rr_jitter_ms", self.rr_jitter_ms),
            ("subject_hr_sd", self.subject_hr_sd),
            ("relaxed_hrv.lf_ms", self.relaxed_hrv.lf_ms),
            ("relaxed_hrv.hf_ms", self.relaxed_hrv.hf_ms),
            ("stressed_hrv.lf_ms", self.stressed_hrv.lf_ms),
            ("stressed_hrv.hf_ms", self.stressed_hrv.hf_ms),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Generates a cohort where every subject has a Relaxing span followed by a
/// Stressful span of `span_s` seconds each, with SUDs ratings every 120 s.
pub fn synth_cohort(spec: &SynthCohortSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = 2.0 * spec.span_s;
    let n_samples = (total * spec.fs).round() as usize;
    let jitter = Normal::new(0.0, spec.rr_jitter_ms.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let offset = Normal::new(0.0, spec.subject_hr_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;

    let spans = vec![
        ConditionSpan {
            start_s: 0.0,
            end_s: spec.span_s,
            condition: Condition::Relaxing,
        },
        ConditionSpan {
            start_s: spec.span_s,
            end_s: total,
            condition: Condition::Stressful,
        },
    ];

    let mut traces = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let hr_offset = if spec.subject_hr_sd > 0.0 {
            offset.sample(&mut master)
        } else {
            0.0
        };
        let phase_lf: f64 = master.random_range(0.0..2.0 * PI);
        let phase_hf: f64 = master.random_range(0.0..2.0 * PI);
        let noise_seed: u64 = master.random();

        let mut beats = Vec::new();
        let mut t = master.random_range(0.2..0.8);
        while t < total + 0.5 {
            beats.push(t);
            let (hr, hrv) = if t < spec.span_s {
                (spec.relaxed_hr, spec.relaxed_hrv)
            } else {
                (spec.stressed_hr, spec.stressed_hrv)
            };
            let hr = (hr + hr_offset).max(35.0);
            let mut rr = 60_000.0 / hr
                + hrv.lf_ms * (2.0 * PI * LF_MOD_HZ * t + phase_lf).sin()
                + hrv.hf_ms * (2.0 * PI * HF_MOD_HZ * t + phase_hf).sin();
            if spec.rr_jitter_ms > 0.0 {
                rr += jitter.sample(&mut master);
            }
            t += rr.clamp(RR_MIN_MS, RR_MAX_MS) / 1000.0;
        }
        let samples = render(
            &beats,
            n_samples,
            spec.fs,
            spec.noise_sigma,
            noise_seed,
            &PulseTemplate::default(),
        )?;

        let mut suds = Vec::new();
        let mut k = 1;
        while (k as f64) * 120.0 <= total + 1e-9 {
            let time_s = k as f64 * 120.0;
            let value = if time_s <= spec.span_s {
                master.random_range(5..=25)
            } else {
                master.random_range(55..=90)
            };
            suds.push(SudsRating { time_s, value });
            k += 1;
        }

        traces.push(PpgTrace::new(
            format!("S{:02}", s + 1),
            spec.fs,
            samples,
            spans.clone(),
            suds,
        )?);
    }
    Dataset::new(traces)
}

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub fs: f64,
    pub signal: PathBuf,
    pub annotations: PathBuf,
    pub suds: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: Vec<ManifestEntry>,
}

/// Formats a float with ten significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.9e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(
    subject: &str,
    path: &Path,
    rdr: &mut csv::Reader<File>,
    expected: &[&str],
) -> Result<()> {
    let headers = rdr.headers()?;
    let got: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if got != expected {
        return Err(Error::Record {
            subject: subject.into(),
            path: path.into(),
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

struct Rows<'a> {
    subject: &'a str,
    path: &'a Path,
}

impl Rows<'_> {
    fn err(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Record {
            subject: self.subject.into(),
            path: self.path.into(),
            line,
            message: message.into(),
        }
    }

    fn field<T: FromStr>(&self, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
        let line = rec.position().map_or(0, |p| p.line());
        let raw = rec
            .get(i)
            .ok_or_else(|| self.err(line, format!("missing column {name}")))?;
        raw.parse()
            .map_err(|_| self.err(line, format!("cannot parse {name} from {raw:?}")))
    }
}

fn read_signal(subject: &str, path: &Path) -> Result<Vec<f64>> {
    let mut rdr = open_csv(path)?;
    check_header(subject, path, &mut rdr, &["ppg"])?;
    let rows = Rows { subject, path };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: f64 = rows.field(&rec, 0, "ppg")?;
        if !v.is_finite() {
            let line = rec.position().map_or(0, |p| p.line());
            return Err(rows.err(line, "sample is not finite"));
        }
        out.push(v);
    }
    Ok(out)
}

fn read_annotations(subject: &str, path: &Path, duration: f64) -> Result<Vec<ConditionSpan>> {
    let mut rdr = open_csv(path)?;
    check_header(subject, path, &mut rdr, &["start_s", "end_s", "condition"])?;
    let rows = Rows { subject, path };
    let mut out: Vec<ConditionSpan> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let cond: String = rows.field(&rec, 2, "condition")?;
        let span = ConditionSpan {
            start_s: rows.field(&rec, 0, "start_s")?,
            end_s: rows.field(&rec, 1, "end_s")?,
            condition: cond
                .parse()
                .map_err(|e: Error| rows.err(line, e.to_string()))?,
        };
        let prev_end = out.last().map_or(f64::NEG_INFINITY, |s| s.end_s);
        check_span(&span, prev_end, duration).map_err(|m| rows.err(line, m))?;
        out.push(span);
    }
    Ok(out)
}

fn read_suds(subject: &str, path: &Path) -> Result<Vec<SudsRating>> {
    let mut rdr = open_csv(path)?;
    check_header(subject, path, &mut rdr, &["time_s", "value"])?;
    let rows = Rows { subject, path };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let time_s: f64 = rows.field(&rec, 0, "time_s")?;
        let value: i64 = rows.field(&rec, 1, "value")?;
        if !(0..=100).contains(&value) {
            return Err(rows.err(line, format!("SUDs out of [0,100]: {value}")));
        }
        let r = SudsRating {
            time_s,
            value: value as u8,
        };
        check_suds(&r).map_err(|m| rows.err(line, m))?;
        out.push(r);
    }
    Ok(out)
}

/// Loads every subject listed in a manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.into(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));

    let mut traces = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let id = entry.id.as_str();
        let with_subject = |e: Error| match e {
            Error::Io { .. } => Error::subject(id, e.to_string()),
            e => e,
        };
        let signal_path = base.join(&entry.signal);
        let samples = read_signal(id, &signal_path).map_err(with_subject)?;
        let duration = samples.len() as f64 / entry.fs;
        let annotations =
            read_annotations(id, &base.join(&entry.annotations), duration).map_err(with_subject)?;
        let suds = read_suds(id, &base.join(&entry.suds)).map_err(with_subject)?;
        traces.push(PpgTrace::new(id, entry.fs, samples, annotations, suds)?);
    }
    Dataset::new(traces).map_err(|e| Error::Manifest {
        path: manifest_path.into(),
        message: e.to_string(),
    })
}

/// Writes a dataset as `manifest.json` plus three CSV files per subject and
/// returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut subjects = Vec::with_capacity(ds.len());
    for trace in ds.traces() {
        let id = &trace.subject_id;
        let entry = ManifestEntry {
            id: id.clone(),
            fs: trace.fs,
            signal: format!("{id}_ppg.csv").into(),
            annotations: format!("{id}_annotations.csv").into(),
            suds: format!("{id}_suds.csv").into(),
        };

        let path = dir.join(&entry.signal);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["ppg"])?;
        for x in &trace.samples {
            w.write_record([format_float(*x)])?;
        }
        w.flush().map_err(io_err(&path))?;

        let path = dir.join(&entry.annotations);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["start_s", "end_s", "condition"])?;
        for s in &trace.annotations {
            w.write_record([
                format_float(s.start_s),
                format_float(s.end_s),
                s.condition.as_str().to_string(),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;

        let path = dir.join(&entry.suds);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["time_s", "value"])?;
        for r in &trace.suds {
            w.write_record([format_float(r.time_s), r.value.to_string()])?;
        }
        w.flush().map_err(io_err(&path))?;

        subjects.push(entry);
    }
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&Manifest { subjects })?;
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}
