//! Leave-one-subject-out evaluation, the window-size sweep, and the
//! Mann-Whitney U test used for the SUDs analysis.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, anova_f, select_top_k, FeatureMatrix, PipelineConfig, SelectionReport, WindowSpec,
};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind, TrainedModel};
use crate::signal_io::{Condition, Dataset};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// Accuracy and confusion counts with label 1 (stressed) as positive.
pub fn metrics(y_true: &[u8], y_pred: &[u8]) -> Result<Confusion> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::invalid("no labels to score"));
    }
    let mut c = Confusion::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (0, _) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// LOSO
// ---------------------------------------------------------------------------

/// Where ANOVA feature ranking is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// On each fold's training rows only.
    PerFold,
    /// Once on the full matrix, test subjects included.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub model: ModelKind,
    pub seed: u64,
    pub selection: SelectionMode,
    pub model_config: ModelConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 35,
            model: ModelKind::Lda,
            seed: 0,
            selection: SelectionMode::PerFold,
            model_config: ModelConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn with_model(model: ModelKind) -> Self {
        EvalConfig {
            model,
            ..Default::default()
        }
    }

    fn model_config(&self) -> ModelConfig {
        let mut cfg = self.model_config;
        cfg.sgd.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject: String,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub n_windows: usize,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub window: Option<WindowSpec>,
    pub k: usize,
    pub model: ModelKind,
    pub seed: u64,
    pub selection: SelectionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Mean of per-subject accuracies.
    pub mean_accuracy: f64,
    /// Accuracy over all held-out windows pooled.
    pub pooled_accuracy: f64,
    pub config: ConfigEcho,
    /// SUDs comparison, present when the report was built from recordings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suds: Option<SudsReport>,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn run_fold(
    m: &FeatureMatrix,
    subject: &str,
    global: Option<&SelectionReport>,
    cfg: &EvalConfig,
) -> Result<FoldResult> {
    let train = m.filter_rows(|r| r.subject != subject);
    let test = m.filter_rows(|r| r.subject == subject);
    let fold_err = |e: Error| Error::subject(subject, format!("LOSO fold failed: {e}"));
    let local;
    let report = match global {
        Some(r) => r,
        None => {
            local = anova_f(&train).map_err(fold_err)?;
            &local
        }
    };
    let train = select_top_k(&train, report, cfg.k).map_err(fold_err)?;
    let test = select_top_k(&test, report, cfg.k).map_err(fold_err)?;
    let model = TrainedModel::fit(cfg.model, &train, &cfg.model_config()).map_err(fold_err)?;
    let pred = model.predict_matrix(&test).map_err(fold_err)?;
    let confusion = metrics(&test.labels(), &pred)?;
    Ok(FoldResult {
        subject: subject.to_string(),
        accuracy: confusion.accuracy(),
        confusion,
        n_windows: test.n_rows(),
        features: model.features.clone(),
    })
}

/// Leave-one-subject-out evaluation of a prebuilt feature matrix.
pub fn loso_matrix(m: &FeatureMatrix, cfg: &EvalConfig) -> Result<CvReport> {
    let subjects = m.subjects();
    if subjects.len() < 2 {
        return Err(Error::invalid(format!(
            "LOSO needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    for s in &subjects {
        for label in [0u8, 1] {
            if !m.rows().iter().any(|r| &r.subject == s && r.label == label) {
                return Err(Error::subject(
                    s,
                    format!("no {} windows", Condition::from_label(label).unwrap()),
                ));
            }
        }
    }
    let global = match cfg.selection {
        SelectionMode::Global => Some(anova_f(m)?),
        SelectionMode::PerFold => None,
    };
    let folds: Vec<FoldResult> = subjects
        .par_iter()
        .map(|s| run_fold(m, s, global.as_ref(), cfg))
        .collect::<Result<_>>()?;

    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
    let correct: usize = folds.iter().map(|f| f.confusion.tp + f.confusion.tn).sum();
    let total: usize = folds.iter().map(|f| f.n_windows).sum();
    Ok(CvReport {
        folds,
        mean_accuracy,
        pooled_accuracy: correct as f64 / total as f64,
        config: ConfigEcho {
            window: None,
            k: cfg.k,
            model: cfg.model,
            seed: cfg.seed,
            selection: cfg.selection,
        },
        suds: None,
    })
}

/// Builds the feature matrix for `spec` and runs LOSO on it.
pub fn loso(
    ds: &Dataset,
    spec: &WindowSpec,
    cfg: &EvalConfig,
    pipeline: &PipelineConfig,
) -> Result<CvReport> {
    let (m, _) = dataset::build_matrix(ds, spec, pipeline)?;
    let mut report = loso_matrix(&m, cfg)?;
    report.config.window = Some(*spec);
    Ok(report)
}

/// Permutes labels among each subject's own rows, destroying any
/// feature-label association while keeping class balance per subject.
pub fn shuffle_labels_within_subjects(m: &FeatureMatrix, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.clone();
    for s in m.subjects() {
        let idx: Vec<usize> = (0..m.n_rows())
            .filter(|&i| m.rows()[i].subject == s)
            .collect();
        let mut labels: Vec<u8> = idx.iter().map(|&i| m.rows()[i].label).collect();
        labels.shuffle(&mut rng);
        for (&i, l) in idx.iter().zip(labels) {
            out.rows_mut()[i].label = l;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Window sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_s: f64,
    pub mean_accuracy: f64,
    pub pooled_accuracy: f64,
}

/// One LOSO run per window size at a fixed step. Filtering and peak
/// detection run once and are shared by every size.
pub fn sweep_windows(
    ds: &Dataset,
    sizes: &[f64],
    step_s: f64,
    cfg: &EvalConfig,
    pipeline: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    let specs: Vec<WindowSpec> = sizes
        .iter()
        .map(|&s| WindowSpec::new(s, step_s))
        .collect::<Result<_>>()?;
    let beats = dataset::preprocess_all(ds, pipeline)?;
    specs
        .iter()
        .map(|spec| {
            let (m, _) = dataset::matrix_from_beats(&beats, spec, &pipeline.features)?;
            let r = loso_matrix(&m, cfg)?;
            Ok(SweepRow {
                window_s: spec.size_s,
                mean_accuracy: r.mean_accuracy,
                pooled_accuracy: r.pooled_accuracy,
            })
        })
        .collect()
}

/// Writes `window_s,mean_accuracy,pooled_accuracy`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["window_s", "mean_accuracy", "pooled_accuracy"])?;
    for r in rows {
        wtr.write_record([
            format!("{}", r.window_s),
            format!("{:.6}", r.mean_accuracy),
            format!("{:.6}", r.pooled_accuracy),
        ])?;
    }
    wtr.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

/// Largest combined sample size for exact enumeration.
pub const EXACT_MAX_N: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UTestMode {
    /// Enumerate every assignment of the pooled ranks to the two groups.
    Exact,
    /// Tie-corrected normal approximation with continuity correction.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U of the first sample: its rank sum minus `n1 (n1 + 1) / 2`.
    pub u: f64,
    /// `min(u, n1 n2 - u)`.
    pub statistic: f64,
    /// Normal-approximation z of the first sample (positive when it ranks higher).
    pub z: f64,
    /// Two-tailed p-value.
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub method: UTestMode,
}

/// Midranks (1-based) of the pooled sample and the tie group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Two-tailed Mann-Whitney U test of `a` against `b`.
pub fn mann_whitney_u(a: &[f64], b: &[f64], mode: UTestMode) -> Result<UTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    if mode == UTestMode::Exact && n > EXACT_MAX_N {
        return Err(Error::invalid(format!(
            "exact mode supports at most {EXACT_MAX_N} observations in total, got {n}"
        )));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let u = ranks[..n1].iter().sum::<f64>() - offset;
    let n1n2 = (n1 * n2) as f64;
    let mu = n1n2 / 2.0;

    let nf = n as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = if n > 1 {
        n1n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)))
    } else {
        0.0
    };
    let z = if var > 0.0 {
        let dev = u - mu;
        dev.signum() * (dev.abs() - 0.5).max(0.0) / var.sqrt()
    } else {
        0.0
    };

    let p_value = match mode {
        UTestMode::Normal => (2.0 * normal_sf(z.abs())).min(1.0),
        UTestMode::Exact => {
            let observed = (u - mu).abs() - 1e-9;
            let mut extreme = 0u64;
            let mut total = 0u64;
            for_each_subset(n, n1, |mask| {
                let r: f64 = (0..n)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| ranks[i])
                    .sum();
                total += 1;
                if (r - offset - mu).abs() >= observed {
                    extreme += 1;
                }
            });
            extreme as f64 / total as f64
        }
    };

    Ok(UTestResult {
        u,
        statistic: u.min(n1n2 - u),
        z,
        p_value,
        n1,
        n2,
        method: mode,
    })
}

/// Calls `f` with every `n`-bit mask that has exactly `k` bits set.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(u32)) {
    if k == 0 {
        f(0);
        return;
    }
    let mut mask: u32 = (1u32 << k) - 1;
    let limit: u32 = 1u32 << n;
    while mask < limit {
        f(mask);
        // Gosper's hack: next mask with the same popcount.
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
}

// ---------------------------------------------------------------------------
// SUDs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl GroupSummary {
    fn of(x: &[f64]) -> GroupSummary {
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        GroupSummary {
            n,
            mean: s.iter().sum::<f64>() / n as f64,
            median,
            min: s[0],
            max: s[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SudsReport {
    /// First sample relaxing, second stressful.
    pub test: UTestResult,
    pub relaxing: GroupSummary,
    pub stressful: GroupSummary,
    pub stressful_higher: bool,
}

/// Pools SUDs ratings by the condition of the span that contains them and
/// compares the groups with a two-tailed Mann-Whitney U test.
pub fn suds_report(ds: &Dataset, mode: UTestMode) -> Result<SudsReport> {
    let mut relaxing = Vec::new();
    let mut stressful = Vec::new();
    for trace in ds.traces() {
        let mut seen = [false; 2];
        for r in &trace.suds {
            let span = trace.span_at(r.time_s).ok_or_else(|| {
                Error::subject(
                    &trace.subject_id,
                    format!(
                        "SUDs rating at {} s lies outside every condition span",
                        r.time_s
                    ),
                )
            })?;
            seen[span.condition.label() as usize] = true;
            match span.condition {
                Condition::Relaxing => relaxing.push(r.value as f64),
                Condition::Stressful => stressful.push(r.value as f64),
            }
        }
        for (i, ok) in seen.iter().enumerate() {
            if !ok {
                return Err(Error::subject(
                    &trace.subject_id,
                    format!(
                        "no SUDs rating during a {} span",
                        Condition::from_label(i as u8).unwrap()
                    ),
                ));
            }
        }
    }
    let test = mann_whitney_u(&relaxing, &stressful, mode)?;
    let relaxing = GroupSummary::of(&relaxing);
    let stressful = GroupSummary::of(&stressful);
    Ok(SudsReport {
        stressful_higher: stressful.median > relaxing.median && test.z < 0.0,
        test,
        relaxing,
        stressful,
    })
}
