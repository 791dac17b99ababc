//! Python bindings: `import ppgstress`.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ppg_stress::dataset::{self, PipelineConfig, WindowSpec};
use ppg_stress::dsp::{FilterConfig, FilterMode};
use ppg_stress::eval::{self, EvalConfig, SelectionMode, UTestMode};
use ppg_stress::hrv::{self, CATALOG, CATALOG_VERSION};
use ppg_stress::models::{self, ModelKind};
use ppg_stress::pulse::{self, RrSeries};
use ppg_stress::signal_io::{self, SynthCohortSpec};

fn to_py(e: ppg_stress::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_model(name: &str) -> PyResult<ModelKind> {
    name.parse().map_err(to_py)
}

fn parse_mode(name: &str) -> PyResult<UTestMode> {
    match name {
        "exact" => Ok(UTestMode::Exact),
        "normal" => Ok(UTestMode::Normal),
        _ => Err(PyValueError::new_err(format!(
            "mode must be 'exact' or 'normal', got {name:?}"
        ))),
    }
}

/// Synthetic PPG samples with beats at the cumulative sums of `rr_plan` (ms).
#[pyfunction]
#[pyo3(signature = (rr_plan, fs = 100.0, noise_sigma = 0.0, seed = 0))]
fn synth_ppg(rr_plan: Vec<f64>, fs: f64, noise_sigma: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(signal_io::synth_ppg(&rr_plan, fs, noise_sigma, seed)
        .map_err(to_py)?
        .samples)
}

/// Butterworth band-pass, zero-phase unless `zero_phase` is false.
#[pyfunction]
#[pyo3(signature = (x, fs, order = 3, low_hz = 0.5, high_hz = 8.0, zero_phase = true))]
fn bandpass(
    x: Vec<f64>,
    fs: f64,
    order: usize,
    low_hz: f64,
    high_hz: f64,
    zero_phase: bool,
) -> PyResult<Vec<f64>> {
    let cfg = FilterConfig {
        order,
        low_hz,
        high_hz,
        mode: if zero_phase {
            FilterMode::ZeroPhase
        } else {
            FilterMode::Causal
        },
    };
    cfg.apply(&x, fs).map_err(to_py)
}

/// Systolic peak times in seconds of a band-passed signal.
#[pyfunction]
fn detect_peaks(x: Vec<f64>, fs: f64) -> Vec<f64> {
    pulse::detect_peaks(&x, fs)
}

/// Screened RR intervals from peak times: `{"rr_ms": [...], "n_rejected": n}`.
#[pyfunction]
fn rr_intervals<'py>(py: Python<'py>, peak_times_s: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let rr = pulse::to_rr(&peak_times_s).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("rr_ms", rr.rr_ms.clone())?;
    d.set_item("n_rejected", rr.n_rejected())?;
    Ok(d)
}

/// All catalog features of one window of RR intervals, in catalog order.
#[pyfunction]
fn hrv_features<'py>(
    py: Python<'py>,
    rr_ms: Vec<f64>,
    window_s: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let fv = hrv::all_features(&RrSeries::from_intervals(&rr_ms), window_s).map_err(to_py)?;
    let d = PyDict::new(py);
    for (name, v) in fv.iter() {
        d.set_item(name, v)?;
    }
    Ok(d)
}

/// The feature catalog as a list of dicts.
#[pyfunction]
fn catalog(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &CATALOG)
}

/// Two-tailed Mann-Whitney U test of `a` against `b`.
#[pyfunction]
#[pyo3(signature = (a, b, mode = "normal"))]
fn mann_whitney_u<'py>(
    py: Python<'py>,
    a: Vec<f64>,
    b: Vec<f64>,
    mode: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let r = eval::mann_whitney_u(&a, &b, parse_mode(mode)?).map_err(to_py)?;
    json_to_py(py, &r)
}

/// Stressed-class probability rounded to the nearest tenth.
#[pyfunction]
fn stress_level(p: f64) -> PyResult<f64> {
    models::stress_level(p).map_err(to_py)
}

/// Leave-one-subject-out evaluation of a feature matrix; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (matrix, model = "lda", k = 35, seed = 0, selection = "per_fold"))]
fn loso<'py>(
    py: Python<'py>,
    matrix: &FeatureMatrix,
    model: &str,
    k: usize,
    seed: u64,
    selection: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let selection = match selection {
        "per_fold" => SelectionMode::PerFold,
        "global" => SelectionMode::Global,
        _ => {
            return Err(PyValueError::new_err(
                "selection must be 'per_fold' or 'global'",
            ))
        }
    };
    let cfg = EvalConfig {
        k,
        model: parse_model(model)?,
        seed,
        selection,
        ..Default::default()
    };
    let report = py
        .detach(|| eval::loso_matrix(&matrix.inner, &cfg))
        .map_err(to_py)?;
    json_to_py(py, &report)
}

/// A set of subject recordings.
#[pyclass(module = "ppgstress")]
struct Dataset {
    inner: signal_io::Dataset,
}

#[pymethods]
impl Dataset {
    /// Generated cohort with planted relaxed/stressed differences.
    #[staticmethod]
    #[pyo3(signature = (subjects = 16, seed = 7, span_s = 420.0))]
    fn synth(subjects: usize, seed: u64, span_s: f64) -> PyResult<Self> {
        let spec = SynthCohortSpec {
            n_subjects: subjects,
            seed,
            span_s,
            ..Default::default()
        };
        Ok(Dataset {
            inner: signal_io::synth_cohort(&spec).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(manifest: &str) -> PyResult<Self> {
        Ok(Dataset {
            inner: signal_io::load_dataset(manifest).map_err(to_py)?,
        })
    }

    /// Writes the manifest and per-subject CSVs; returns the manifest path.
    fn write(&self, dir: &str) -> PyResult<String> {
        let path = signal_io::write_dataset(&self.inner, dir).map_err(to_py)?;
        Ok(path.display().to_string())
    }

    #[getter]
    fn subject_ids(&self) -> Vec<String> {
        self.inner.subject_ids().map(str::to_string).collect()
    }

    fn samples(&self, subject: &str) -> PyResult<Vec<f64>> {
        self.inner
            .traces()
            .iter()
            .find(|t| t.subject_id == subject)
            .map(|t| t.samples.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no subject {subject:?}")))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[pyo3(signature = (window_s = 80.0, step_s = 5.0))]
    fn feature_matrix(
        &self,
        py: Python<'_>,
        window_s: f64,
        step_s: f64,
    ) -> PyResult<FeatureMatrix> {
        let spec = WindowSpec::new(window_s, step_s).map_err(to_py)?;
        let (m, _) = py
            .detach(|| dataset::build_matrix(&self.inner, &spec, &PipelineConfig::default()))
            .map_err(to_py)?;
        Ok(FeatureMatrix { inner: m })
    }

    #[pyo3(signature = (mode = "normal"))]
    fn suds_report<'py>(&self, py: Python<'py>, mode: &str) -> PyResult<Bound<'py, PyAny>> {
        let r = eval::suds_report(&self.inner, parse_mode(mode)?).map_err(to_py)?;
        json_to_py(py, &r)
    }
}

/// Windowed feature rows with subject and label columns.
#[pyclass(module = "ppgstress")]
struct FeatureMatrix {
    inner: dataset::FeatureMatrix,
}

#[pymethods]
impl FeatureMatrix {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(FeatureMatrix {
            inner: dataset::FeatureMatrix::read_csv(text.as_bytes()).map_err(to_py)?,
        })
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels()
    }

    #[getter]
    fn subjects(&self) -> Vec<String> {
        self.inner
            .rows()
            .iter()
            .map(|r| r.subject.clone())
            .collect()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.rows().iter().map(|r| r.values.clone()).collect()
    }

    /// ANOVA F per column as `{name: F}`, plus the ranking.
    fn anova<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = dataset::anova_f(&self.inner).map_err(to_py)?;
        json_to_py(py, &r)
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }
}

/// A fitted classifier bundled with its scaler and feature list.
#[pyclass(module = "ppgstress")]
struct TrainedModel {
    inner: models::TrainedModel,
}

#[pymethods]
impl TrainedModel {
    #[staticmethod]
    #[pyo3(signature = (matrix, model = "lda", seed = 0))]
    fn fit(matrix: &FeatureMatrix, model: &str, seed: u64) -> PyResult<Self> {
        let mut cfg = models::ModelConfig::default();
        cfg.sgd.seed = seed;
        Ok(TrainedModel {
            inner: models::TrainedModel::fit(parse_model(model)?, &matrix.inner, &cfg)
                .map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(TrainedModel {
            inner: models::TrainedModel::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features.clone()
    }

    /// Stressed-class probability for one window given as `{feature: value}`.
    fn predict_proba(&self, features: HashMap<String, f64>) -> PyResult<f64> {
        self.inner.predict_proba(&features).map_err(to_py)
    }

    fn predict_matrix(&self, matrix: &FeatureMatrix) -> PyResult<Vec<u8>> {
        self.inner.predict_matrix(&matrix.inner).map_err(to_py)
    }
}

#[pymodule]
fn ppgstress(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CATALOG_VERSION", CATALOG_VERSION)?;
    m.add_function(wrap_pyfunction!(synth_ppg, m)?)?;
    m.add_function(wrap_pyfunction!(bandpass, m)?)?;
    m.add_function(wrap_pyfunction!(detect_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(rr_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(hrv_features, m)?)?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add_function(wrap_pyfunction!(stress_level, m)?)?;
    m.add_function(wrap_pyfunction!(loso, m)?)?;
    m.add_class::<Dataset>()?;
    m.add_class::<FeatureMatrix>()?;
    m.add_class::<TrainedModel>()?;
    Ok(())
}
