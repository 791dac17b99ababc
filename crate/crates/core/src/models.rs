//! Binary relaxed/stressed classifiers: linear discriminant analysis plus
//! k-nearest-neighbour and SGD-trained logistic regression baselines.
//!
//! The fitting functions work on already standardized rows.
//! [`TrainedModel`] bundles a fitted classifier with its [`Scaler`] so it can
//! be applied to raw feature values looked up by name.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, Scaler};
use crate::error::{Error, Result};
use crate::hrv::{FeatureVector, CATALOG_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lda,
    Knn,
    Sgd,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lda, ModelKind::Knn, ModelKind::Sgd];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lda => "lda",
            ModelKind::Knn => "knn",
            ModelKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(ModelKind::Lda),
            "knn" => Ok(ModelKind::Knn),
            "sgd" => Ok(ModelKind::Sgd),
            other => Err(Error::invalid(format!(
                "unknown model {other:?}; expected one of lda, knn, sgd"
            ))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_xy(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    let d = x.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::invalid("no features to fit"));
    }
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("rows have differing lengths"));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::invalid("both classes must be present"));
    }
    Ok(d)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// LDA
// ---------------------------------------------------------------------------

/// Two-class LDA with a shared, ridged covariance.
///
/// The discriminant score is `w . x + b` with `w = S^-1 (mu1 - mu0)` and
/// `b = -w . (mu0 + mu1) / 2 + ln(pi1 / pi0)`; under the model's Gaussian
/// assumptions the stress probability is exactly `sigmoid(score)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub means: [Vec<f64>; 2],
    /// Pooled within-class covariance (ridge included), row-major `d x d`.
    pub covariance: Vec<f64>,
    pub priors: [f64; 2],
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub const DEFAULT_LDA_RIDGE: f64 = 1e-6;

impl LdaModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
}

/// Fits LDA; `ridge` is scaled by `trace(S) / d` before being added to the
/// diagonal of the pooled covariance `S`.
pub fn lda_fit(x: &[Vec<f64>], y: &[u8], ridge: f64) -> Result<LdaModel> {
    let d = check_xy(x, y)?;
    let n = x.len();
    if n <= d {
        warn!("LDA fit with {n} rows and {d} columns; covariance relies on the ridge");
    }
    if n < 3 {
        return Err(Error::invalid("LDA needs at least three rows"));
    }
    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (row, &label) in x.iter().zip(y) {
        let c = label as usize;
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += v;
        }
    }
    for c in 0..2 {
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (row, &label) in x.iter().zip(y) {
        let centered = DVector::from_iterator(
            d,
            row.iter().zip(&means[label as usize]).map(|(v, m)| v - m),
        );
        cov += &centered * centered.transpose();
    }
    cov /= (n - 2) as f64;
    let lambda = ridge * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += lambda;
    }

    let singular = || {
        Error::SingularCovariance(format!(
            "pooled covariance ({d} x {d}) is not positive definite after ridge {lambda:e}"
        ))
    };
    let chol = cov.clone().cholesky().ok_or_else(singular)?;
    // Pivots this small relative to the largest variance mean rank deficiency.
    let max_var = cov.diagonal().max();
    let l = chol.l_dirty();
    if !(0..d).all(|i| l[(i, i)].is_finite() && l[(i, i)].powi(2) > 1e-12 * max_var) {
        return Err(singular());
    }
    let diff = DVector::from_iterator(d, means[1].iter().zip(&means[0]).map(|(a, b)| a - b));
    let w = chol.solve(&diff);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance(
            "non-finite discriminant weights".into(),
        ));
    }
    let priors = [counts[0] as f64 / n as f64, counts[1] as f64 / n as f64];
    let weights: Vec<f64> = w.iter().copied().collect();
    let midpoint: Vec<f64> = means[0]
        .iter()
        .zip(&means[1])
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let bias = -dot(&weights, &midpoint) + (priors[1] / priors[0]).ln();
    Ok(LdaModel {
        means,
        covariance: cov.transpose().as_slice().to_vec(),
        priors,
        weights,
        bias,
    })
}

// ---------------------------------------------------------------------------
// KNN
// ---------------------------------------------------------------------------

pub const DEFAULT_KNN_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], y: &[u8], k: usize) -> Result<KnnModel> {
        check_xy(x, y)?;
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(KnnModel {
            k,
            rows: x.to_vec(),
            labels: y.to_vec(),
        })
    }

    /// Fraction of stressed rows among the `k` nearest (Euclidean); equal
    /// distances are ordered by training row index.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                    i,
                )
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(dist.len());
        let stressed = dist[..k]
            .iter()
            .filter(|(_, i)| self.labels[*i] == 1)
            .count();
        stressed as f64 / k as f64
    }
}

// ---------------------------------------------------------------------------
// SGD logistic regression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr0: f64,
    pub decay: f64,
    pub epochs: usize,
    /// L2 penalty on the weights (not the bias).
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr0: 0.01,
            decay: 1e-4,
            epochs: 50,
            alpha: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Regularized mean log-loss after each epoch.
    pub loss_trace: Vec<f64>,
}

impl SgdModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }

    fn loss(&self, x: &[Vec<f64>], y: &[u8], alpha: f64) -> f64 {
        let data: f64 = x
            .iter()
            .zip(y)
            .map(|(r, &l)| {
                let z = self.score(r);
                if l == 1 {
                    softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum::<f64>()
            / x.len() as f64;
        data + 0.5 * alpha * dot(&self.weights, &self.weights)
    }
}

/// Logistic regression by per-sample gradient steps with a fresh seeded
/// shuffle every epoch and learning rate `lr0 / (1 + t * decay)`, where `t`
/// counts updates.
pub fn sgd_logistic_fit(x: &[Vec<f64>], y: &[u8], cfg: &SgdConfig) -> Result<SgdModel> {
    let d = check_xy(x, y)?;
    let mut model = SgdModel {
        weights: vec![0.0; d],
        bias: 0.0,
        loss_trace: Vec::with_capacity(cfg.epochs),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = cfg.lr0 / (1.0 + t as f64 * cfg.decay);
            let g = sigmoid(model.score(&x[i])) - y[i] as f64;
            for (w, v) in model.weights.iter_mut().zip(&x[i]) {
                *w -= lr * (g * v + cfg.alpha * *w);
            }
            model.bias -= lr * g;
            t += 1;
        }
        let loss = model.loss(x, y, cfg.alpha);
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        model.loss_trace.push(loss);
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Bundled model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lda_ridge: f64,
    pub knn_k: usize,
    pub sgd: SgdConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lda_ridge: DEFAULT_LDA_RIDGE,
            knn_k: DEFAULT_KNN_K,
            sgd: SgdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum ModelParams {
    Lda(LdaModel),
    Knn(KnnModel),
    Sgd(SgdModel),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Lda(_) => ModelKind::Lda,
            ModelParams::Knn(_) => ModelKind::Knn,
            ModelParams::Sgd(_) => ModelKind::Sgd,
        }
    }

    /// Stress probability of a standardized row.
    pub fn predict_proba(&self, z: &[f64]) -> f64 {
        match self {
            ModelParams::Lda(m) => m.predict_proba(z),
            ModelParams::Knn(m) => m.predict_proba(z),
            ModelParams::Sgd(m) => m.predict_proba(z),
        }
    }
}

/// Anything that can supply raw feature values by name.
pub trait FeatureSource {
    fn feature(&self, name: &str) -> Option<f64>;
}

impl FeatureSource for FeatureVector {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name)
    }
}

impl FeatureSource for HashMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl FeatureSource for BTreeMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

/// A row of values paired with its column names.
pub struct NamedRow<'a> {
    pub columns: &'a [String],
    pub values: &'a [f64],
}

impl FeatureSource for NamedRow<'_> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i])
    }
}

/// A fitted classifier with its scaler and input feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(flatten)]
    pub params: ModelParams,
    pub scaler: Scaler,
    /// Raw feature names the model reads, equal to `scaler.columns`.
    pub features: Vec<String>,
    pub catalog_version: String,
}

impl TrainedModel {
    /// Standardizes `train` (raw values) and fits a classifier on it.
    pub fn fit(kind: ModelKind, train: &FeatureMatrix, cfg: &ModelConfig) -> Result<TrainedModel> {
        let scaler = Scaler::fit(train)?;
        let z = scaler.transform(train)?;
        let x: Vec<Vec<f64>> = z.rows().iter().map(|r| r.values.clone()).collect();
        let y = z.labels();
        let params = match kind {
            ModelKind::Lda => ModelParams::Lda(lda_fit(&x, &y, cfg.lda_ridge)?),
            ModelKind::Knn => ModelParams::Knn(KnnModel::fit(&x, &y, cfg.knn_k)?),
            ModelKind::Sgd => ModelParams::Sgd(sgd_logistic_fit(&x, &y, &cfg.sgd)?),
        };
        Ok(TrainedModel {
            params,
            features: scaler.columns.clone(),
            scaler,
            catalog_version: CATALOG_VERSION.to_string(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    /// Stress probability of one raw observation.
    pub fn predict_proba<S: FeatureSource + ?Sized>(&self, x: &S) -> Result<f64> {
        let z = self.scaler.transform_with(|name| x.feature(name))?;
        Ok(self.params.predict_proba(&z))
    }

    /// Stress probabilities of every row of a raw matrix.
    pub fn predict_proba_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        let z = self.scaler.transform(m)?;
        Ok(z.rows()
            .iter()
            .map(|r| self.params.predict_proba(&r.values))
            .collect())
    }

    /// Labels are `p >= 0.5`.
    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba_matrix(m)?
            .into_iter()
            .map(|p| u8::from(p >= 0.5))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<TrainedModel> {
        let m: TrainedModel = serde_json::from_str(s)?;
        if m.catalog_version != CATALOG_VERSION {
            return Err(Error::CatalogVersion {
                expected: CATALOG_VERSION.into(),
                found: m.catalog_version,
            });
        }
        if m.features != m.scaler.columns {
            return Err(Error::invalid(
                "model features differ from its scaler columns",
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        TrainedModel::from_json(&text)
    }
}

/// Maps a stress probability to a level in `{0.0, 0.1, ..., 1.0}`, rounding
/// halves away from zero at the first decimal.
pub fn stress_level(p_stress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_stress) {
        return Err(Error::invalid(format!(
            "stress probability must be in [0, 1], got {p_stress}"
        )));
    }
    // The nudge makes decimal halves such as 0.85 (stored just below) round up.
    let tenths = (p_stress * 10.0 + 0.5 + 1e-9).floor();
    Ok(tenths.min(10.0) / 10.0)
}
