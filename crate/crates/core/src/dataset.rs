//! Windowing, feature-matrix assembly, ANOVA-F ranking and standardization.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::FilterConfig;
use crate::error::{Error, Result};
use crate::hrv::{self, FeatureConfig, MIN_SPECTRAL_SPAN_S};
use crate::pulse::{self, PeakDetector, RrSeries};
use crate::signal_io::{format_float, Condition, ConditionSpan, Dataset, PpgTrace};

/// Window sizes of the default sweep, in seconds.
pub const DEFAULT_SWEEP_SIZES: [f64; 7] = [60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size_s: f64,
    pub step_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            size_s: 80.0,
            step_s: 5.0,
        }
    }
}

impl WindowSpec {
    pub fn new(size_s: f64, step_s: f64) -> Result<Self> {
        let spec = WindowSpec { size_s, step_s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size_s >= MIN_SPECTRAL_SPAN_S) {
            return Err(Error::SpectralSpan {
                span_s: self.size_s,
            });
        }
        if !(self.step_s > 0.0 && self.step_s <= self.size_s) {
            return Err(Error::invalid(format!(
                "window step must be in (0, {}], got {}",
                self.size_s, self.step_s
            )));
        }
        Ok(())
    }

    /// Number of windows that fit in a span of `len_s` seconds.
    pub fn count_in(&self, len_s: f64) -> usize {
        if len_s + 1e-9 < self.size_s {
            0
        } else {
            ((len_s - self.size_s) / self.step_s + 1e-9).floor() as usize + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub subject_id: String,
    pub condition: Condition,
    pub start_s: f64,
    pub end_s: f64,
}

/// Slices a trace into windows placed independently inside each condition
/// span. A window never straddles a span boundary.
pub fn segment(trace: &PpgTrace, spec: &WindowSpec) -> Vec<LabeledWindow> {
    trace
        .annotations
        .iter()
        .flat_map(|span| span_windows(&trace.subject_id, span, spec))
        .collect()
}

fn span_windows(subject: &str, span: &ConditionSpan, spec: &WindowSpec) -> Vec<LabeledWindow> {
    (0..spec.count_in(span.duration_s()))
        .map(|i| {
            let start_s = span.start_s + i as f64 * spec.step_s;
            LabeledWindow {
                subject_id: subject.to_string(),
                condition: span.condition,
                start_s,
                end_s: start_s + spec.size_s,
            }
        })
        .collect()
}

/// Preprocessing and feature settings shared by every window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub detector: PeakDetector,
    pub features: FeatureConfig,
}

/// A subject's screened beat sequence, ready to be windowed.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBeats {
    pub subject_id: String,
    pub annotations: Vec<ConditionSpan>,
    pub rr: RrSeries,
}

/// Band-pass filters a trace, detects systolic peaks and screens RR intervals.
pub fn preprocess(trace: &PpgTrace, cfg: &PipelineConfig) -> Result<SubjectBeats> {
    let id = &trace.subject_id;
    let filtered = cfg
        .filter
        .apply(&trace.samples, trace.fs)
        .map_err(|e| Error::subject(id, e.to_string()))?;
    let peaks = cfg.detector.detect(&filtered, trace.fs);
    let rr = pulse::to_rr(&peaks).map_err(|e| Error::subject(id, e.to_string()))?;
    debug!(
        "{id}: {} peaks, {} intervals, {} rejected",
        peaks.len(),
        rr.len(),
        rr.n_rejected()
    );
    Ok(SubjectBeats {
        subject_id: id.clone(),
        annotations: trace.annotations.clone(),
        rr,
    })
}

/// Per-subject window accounting from [`build_matrix`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectLog {
    pub subject_id: String,
    pub windows: usize,
    pub kept: usize,
    pub n_rejected_intervals: usize,
    /// Reason -> number of windows dropped for it.
    pub dropped: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub subjects: Vec<SubjectLog>,
}

impl BuildLog {
    pub fn total_dropped(&self) -> usize {
        self.subjects.iter().map(|s| s.windows - s.kept).sum()
    }
}

fn drop_reason(err: &Error) -> String {
    match err {
        Error::Unusable(msg) => {
            if msg.contains("rejected") {
                "rejected intervals".into()
            } else {
                msg.clone()
            }
        }
        Error::InsufficientBeats(_) => "insufficient beats".into(),
        other => other.to_string(),
    }
}

/// Feature rows for one subject's windows. Unusable windows are dropped and
/// counted; a subject left without a window in either class is an error.
pub fn subject_rows(
    beats: &SubjectBeats,
    spec: &WindowSpec,
    cfg: &FeatureConfig,
) -> Result<(Vec<FeatureRow>, SubjectLog)> {
    spec.validate()?;
    let mut log = SubjectLog {
        subject_id: beats.subject_id.clone(),
        n_rejected_intervals: beats.rr.n_rejected(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for span in &beats.annotations {
        for w in span_windows(&beats.subject_id, span, spec) {
            debug_assert!(w.start_s >= span.start_s && w.end_s <= span.end_s + 1e-9);
            log.windows += 1;
            let rr = beats.rr.window(w.start_s, w.end_s);
            match hrv::all_features_with(&rr, spec.size_s, cfg) {
                Ok(fv) => {
                    log.kept += 1;
                    rows.push(FeatureRow {
                        subject: w.subject_id,
                        label: w.condition.label(),
                        start_s: w.start_s,
                        values: fv.values().to_vec(),
                    });
                }
                Err(e @ Error::SpectralSpan { .. }) => return Err(e),
                Err(e) => *log.dropped.entry(drop_reason(&e)).or_default() += 1,
            }
        }
    }
    for cond in [Condition::Relaxing, Condition::Stressful] {
        if !rows.iter().any(|r| r.label == cond.label()) {
            return Err(Error::subject(
                &beats.subject_id,
                format!(
                    "no usable {cond} windows ({} dropped)",
                    log.windows - log.kept
                ),
            ));
        }
    }
    Ok((rows, log))
}

/// Assembles the feature matrix from already preprocessed subjects.
pub fn matrix_from_beats(
    subjects: &[SubjectBeats],
    spec: &WindowSpec,
    cfg: &FeatureConfig,
) -> Result<(FeatureMatrix, BuildLog)> {
    spec.validate()?;
    let per_subject: Vec<(Vec<FeatureRow>, SubjectLog)> = subjects
        .par_iter()
        .map(|b| subject_rows(b, spec, cfg))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut log = BuildLog::default();
    for (r, l) in per_subject {
        if l.kept < l.windows {
            info!(
                "{}: dropped {} of {} windows {:?}",
                l.subject_id,
                l.windows - l.kept,
                l.windows,
                l.dropped
            );
        }
        rows.extend(r);
        log.subjects.push(l);
    }
    let matrix = FeatureMatrix::new(hrv::feature_names().map(String::from).collect(), rows)?;
    Ok((matrix, log))
}

/// Preprocesses every subject in parallel.
pub fn preprocess_all(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<SubjectBeats>> {
    ds.traces().par_iter().map(|t| preprocess(t, cfg)).collect()
}

/// Filter, detect peaks, window and extract features for every subject.
pub fn build_matrix(
    ds: &Dataset,
    spec: &WindowSpec,
    cfg: &PipelineConfig,
) -> Result<(FeatureMatrix, BuildLog)> {
    spec.validate()?;
    let beats = preprocess_all(ds, cfg)?;
    matrix_from_beats(&beats, spec, &cfg.features)
}

// ---------------------------------------------------------------------------
// Feature matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject: String,
    /// 0 relaxed, 1 stressed.
    pub label: u8,
    pub start_s: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, rows: Vec<FeatureRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.values.len() != columns.len() {
                return Err(Error::invalid(format!(
                    "row {i} has {} values for {} columns",
                    r.values.len(),
                    columns.len()
                )));
            }
            if r.label > 1 {
                return Err(Error::invalid(format!("row {i} has label {}", r.label)));
            }
        }
        Ok(FeatureMatrix { columns, rows })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [FeatureRow] {
        &mut self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r.values[j])
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.subject) && !out.contains(&r.subject) {
                out.push(r.subject.clone());
            }
        }
        out
    }

    /// Rows for which `keep` is true, same columns.
    pub fn filter_rows(&self, mut keep: impl FnMut(&FeatureRow) -> bool) -> FeatureMatrix {
        FeatureMatrix {
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Restricts and reorders columns by name.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n.as_ref())
                    .ok_or_else(|| Error::MissingFeature(n.as_ref().to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureMatrix {
            columns: names.iter().map(|n| n.as_ref().to_string()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    values: idx.iter().map(|&j| r.values[j]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    /// Writes `subject,label,start_s,<columns...>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["subject".to_string(), "label".into(), "start_s".into()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.subject.clone(),
                r.label.to_string(),
                format_float(r.start_s),
            ];
            rec.extend(r.values.iter().map(|v| format_float(*v)));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<FeatureMatrix> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = rdr.headers()?.clone();
        let fixed: Vec<&str> = header.iter().take(3).collect();
        if fixed != ["subject", "label", "start_s"] {
            return Err(Error::invalid(format!(
                "feature matrix header must start with subject,label,start_s, found {fixed:?}"
            )));
        }
        let columns: Vec<String> = header.iter().skip(3).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad =
                |what: &str| Error::invalid(format!("feature matrix line {line}: bad {what}"));
            let label: u8 = rec[1].parse().map_err(|_| bad("label"))?;
            let start_s: f64 = rec[2].parse().map_err(|_| bad("start_s"))?;
            let values = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<_>>>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite value"));
            }
            rows.push(FeatureRow {
                subject: rec[0].to_string(),
                label,
                start_s,
                values,
            });
        }
        FeatureMatrix::new(columns, rows)
    }
}

// ---------------------------------------------------------------------------
// ANOVA F selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    /// `+inf` when the within-class spread is zero but the means differ.
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Scores in matrix column order.
    pub scores: Vec<FeatureScore>,
    /// All column names by descending F; ties keep column order.
    pub ranking: Vec<String>,
}

impl SelectionReport {
    pub fn top(&self, k: usize) -> &[String] {
        &self.ranking[..k.min(self.ranking.len())]
    }
}

/// Two-group one-way ANOVA F of a single column.
pub fn f_statistic(group0: &[f64], group1: &[f64]) -> f64 {
    let n0 = group0.len() as f64;
    let n1 = group1.len() as f64;
    let m0 = group0.iter().sum::<f64>() / n0;
    let m1 = group1.iter().sum::<f64>() / n1;
    let grand = (n0 * m0 + n1 * m1) / (n0 + n1);
    let msb = n0 * (m0 - grand).powi(2) + n1 * (m1 - grand).powi(2);
    let ssw = group0.iter().map(|v| (v - m0).powi(2)).sum::<f64>()
        + group1.iter().map(|v| (v - m1).powi(2)).sum::<f64>();
    let msw = ssw / (n0 + n1 - 2.0);
    // Spreads this small relative to the data are rounding noise.
    let scale = grand
        .abs()
        .max(m0.abs())
        .max(m1.abs())
        .max(f64::MIN_POSITIVE);
    let tiny = (1e-12 * scale).powi(2);
    if msw <= tiny {
        if msb <= tiny * (n0 + n1) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        msb / msw
    }
}

pub fn anova_f(m: &FeatureMatrix) -> Result<SelectionReport> {
    let n1 = m.rows.iter().filter(|r| r.label == 1).count();
    let n0 = m.n_rows() - n1;
    if n0 < 2 || n1 < 2 {
        return Err(Error::invalid(format!(
            "ANOVA needs at least two rows per class, got {n0} relaxed and {n1} stressed"
        )));
    }
    let (g1, g0): (Vec<&FeatureRow>, Vec<&FeatureRow>) = m.rows.iter().partition(|r| r.label == 1);
    let scores: Vec<FeatureScore> = (0..m.n_cols())
        .map(|j| {
            let a: Vec<f64> = g0.iter().map(|r| r.values[j]).collect();
            let b: Vec<f64> = g1.iter().map(|r| r.values[j]).collect();
            FeatureScore {
                name: m.columns[j].clone(),
                f: f_statistic(&a, &b),
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps column order among ties.
    order.sort_by(|&a, &b| scores[b].f.total_cmp(&scores[a].f));
    let ranking = order.iter().map(|&i| scores[i].name.clone()).collect();
    Ok(SelectionReport { scores, ranking })
}

/// Keeps the `k` best-ranked columns; `k` is clipped to the column count.
pub fn select_top_k(
    m: &FeatureMatrix,
    report: &SelectionReport,
    k: usize,
) -> Result<FeatureMatrix> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    m.select_columns(report.top(k))
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// Zero-variance training columns left out of `columns`.
    pub dropped: Vec<String>,
}

impl Scaler {
    pub fn fit(train: &FeatureMatrix) -> Result<Scaler> {
        if train.n_rows() == 0 {
            return Err(Error::invalid("cannot standardize with zero training rows"));
        }
        let n = train.n_rows() as f64;
        let mut scaler = Scaler {
            columns: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
            dropped: Vec::new(),
        };
        for (j, name) in train.columns.iter().enumerate() {
            let mean = train.column(j).sum::<f64>() / n;
            let var = train.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 1e-12 * mean.abs().max(1.0) {
                scaler.dropped.push(name.clone());
            } else {
                scaler.columns.push(name.clone());
                scaler.mean.push(mean);
                scaler.std.push(std);
            }
        }
        if scaler.columns.is_empty() {
            return Err(Error::invalid(
                "every column has zero variance in the training rows",
            ));
        }
        Ok(scaler)
    }

    /// Standardizes a matrix, restricting it to the retained columns.
    pub fn transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = m.select_columns(&self.columns)?;
        for r in &mut out.rows {
            for (j, v) in r.values.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    /// Standardizes one observation given a name lookup.
    pub fn transform_with(&self, lookup: impl Fn(&str) -> Option<f64>) -> Result<Vec<f64>> {
        self.columns
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let v = lookup(name).ok_or_else(|| Error::MissingFeature(name.clone()))?;
                Ok((v - self.mean[j]) / self.std[j])
            })
            .collect()
    }
}

/// Fits a scaler on `train` and applies it to both matrices.
pub fn standardize(
    train: &FeatureMatrix,
    apply: &FeatureMatrix,
) -> Result<(Scaler, FeatureMatrix, FeatureMatrix)> {
    let scaler = Scaler::fit(train)?;
    let t = scaler.transform(train)?;
    let a = scaler.transform(apply)?;
    Ok((scaler, t, a))
}
