//! Python bindings. Matrices cross the boundary as lists of rows; structured
//! results come back as dicts.

use gaplab_cli::config::RunConfigFile;
use gaplab_cli::embfile::EmbFile;
use gaplab_core::curriculum::{CurriculumConfig, Scheduler as CoreScheduler};
use gaplab_core::evalkit::{self, RidgeProbe};
use gaplab_core::geometry::{self, EmbeddingBatch, Modality};
use gaplab_core::losses::{self, LossOutput as CoreLossOutput, Temperature};
use gaplab_core::sweep::{run_sweep, SweepPlan, SweepVariant};
use gaplab_core::trainkit;
use gaplab_core::{Error, Matrix};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) | Error::NonFiniteLoss { .. } => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn cli_err(e: gaplab_cli::CliError) -> PyErr {
    match e {
        gaplab_cli::CliError::Numerical(m) => PyArithmeticError::new_err(m),
        gaplab_cli::CliError::Input(m) => PyValueError::new_err(m),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py_err)
}

fn batch(rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>, modality: Modality) -> PyResult<EmbeddingBatch> {
    EmbeddingBatch::new(matrix(rows)?, labels, modality).map_err(to_py_err)
}

fn pair(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> PyResult<(EmbeddingBatch, EmbeddingBatch)> {
    Ok((batch(images, None, Modality::Image)?, batch(texts, None, Modality::Text)?))
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (_, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn parse_config(config_json: Option<&str>) -> PyResult<RunConfigFile> {
    match config_json {
        None => Ok(RunConfigFile::default()),
        Some(text) => RunConfigFile::parse(text, "config").map_err(cli_err),
    }
}

/// `1 - mean cos(v_i, t_i)` over paired unit vectors.
#[pyfunction]
fn raw_gap(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> PyResult<f64> {
    let (v, t) = pair(images, texts)?;
    geometry::raw_gap(&v, &t).map_err(to_py_err)
}

#[pyfunction]
fn centroid_gap(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> PyResult<f64> {
    let (v, t) = pair(images, texts)?;
    geometry::centroid_gap(&v, &t).map_err(to_py_err)
}

#[pyfunction]
fn distribution_gap(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> PyResult<f64> {
    let (v, t) = pair(images, texts)?;
    Ok(geometry::distribution_gap(&v, &t).map_err(to_py_err)?.value)
}

#[pyfunction]
fn gap_report<'py>(py: Python<'py>, images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let (v, t) = pair(images, texts)?;
    to_py(py, &geometry::gap_report(&v, &t).map_err(to_py_err)?)
}

#[pyfunction]
#[pyo3(signature = (images, texts, renormalize = false))]
fn mean_center(
    images: Vec<Vec<f64>>,
    texts: Vec<Vec<f64>>,
    renormalize: bool,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (v, t) = pair(images, texts)?;
    let (vc, tc) = geometry::mean_center(&v, &t, renormalize).map_err(to_py_err)?;
    Ok((vc.vectors().to_rows(), tc.vectors().to_rows()))
}

#[pyfunction]
fn effective_rank(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    geometry::effective_rank_of(&matrix(rows)?).map_err(to_py_err)
}

#[pyfunction]
fn fusion_index(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> PyResult<f64> {
    let (v, t) = pair(images, texts)?;
    geometry::fusion_index(&v, &t).map_err(to_py_err)
}

/// Loss value with gradients w.r.t. both embedding matrices and the log-scale.
#[pyclass(frozen, get_all)]
struct LossOutput {
    loss: f64,
    grad_images: Vec<Vec<f64>>,
    grad_texts: Vec<Vec<f64>>,
    grad_log_scale: f64,
}

#[pymethods]
impl LossOutput {
    fn __repr__(&self) -> String {
        format!("LossOutput(loss={}, grad_log_scale={})", self.loss, self.grad_log_scale)
    }
}

impl From<CoreLossOutput> for LossOutput {
    fn from(o: CoreLossOutput) -> Self {
        Self {
            loss: o.loss,
            grad_images: o.grad_images.to_rows(),
            grad_texts: o.grad_texts.to_rows(),
            grad_log_scale: o.grad_log_scale,
        }
    }
}

fn loss_inputs(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>) -> PyResult<(Matrix, Matrix)> {
    Ok((matrix(images)?, matrix(texts)?))
}

#[pyfunction]
fn clip_loss(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>, log_scale: f64) -> PyResult<LossOutput> {
    let (v, t) = loss_inputs(images, texts)?;
    Ok(losses::clip_loss(&v, &t, &Temperature::new(log_scale)).map_err(to_py_err)?.into())
}

/// Image-to-text half of the CLIP loss as `(align, oppose)`.
#[pyfunction]
fn clip_loss_decomposed(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>, log_scale: f64) -> PyResult<(f64, f64)> {
    let (v, t) = loss_inputs(images, texts)?;
    let d = losses::clip_loss_decomposed(&v, &t, &Temperature::new(log_scale)).map_err(to_py_err)?;
    Ok((d.align_term, d.oppose_term))
}

#[pyfunction]
fn reweighted_loss(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>, log_scale: f64, beta: f64) -> PyResult<LossOutput> {
    let (v, t) = loss_inputs(images, texts)?;
    Ok(losses::reweighted_loss(&v, &t, &Temperature::new(log_scale), beta).map_err(to_py_err)?.into())
}

#[pyfunction]
fn intra_loss(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>, log_scale: f64) -> PyResult<LossOutput> {
    let (v, t) = loss_inputs(images, texts)?;
    Ok(losses::intra_loss(&v, &t, &Temperature::new(log_scale)).map_err(to_py_err)?.into())
}

#[pyfunction]
fn cma_loss(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>, log_scale: f64, alpha: f64) -> PyResult<LossOutput> {
    let (v, t) = loss_inputs(images, texts)?;
    Ok(losses::cma_loss(&v, &t, &Temperature::new(log_scale), alpha).map_err(to_py_err)?.into())
}

/// Three-phase α schedule.
#[pyclass]
struct Scheduler {
    inner: CoreScheduler,
}

#[pymethods]
impl Scheduler {
    #[new]
    #[pyo3(signature = (anchor_epochs, ramp_epochs, stabilize_epochs, alpha_target, steps_per_epoch, ema_slow_decay = 0.99, ema_fast_decay = 0.9))]
    fn new(
        anchor_epochs: usize,
        ramp_epochs: usize,
        stabilize_epochs: usize,
        alpha_target: f64,
        steps_per_epoch: usize,
        ema_slow_decay: f64,
        ema_fast_decay: f64,
    ) -> PyResult<Self> {
        let cfg = CurriculumConfig {
            anchor_epochs,
            ramp_epochs,
            stabilize_epochs,
            alpha_target,
            steps_per_epoch,
            ema_slow_decay,
            ema_fast_decay,
        };
        Ok(Self {
            inner: CoreScheduler::new(cfg).map_err(to_py_err)?,
        })
    }

    /// Feed the contrastive loss of the finished step; returns α for the next.
    fn step(&mut self, observed_rw_loss: f64) -> PyResult<f64> {
        self.inner.step(observed_rw_loss).map_err(to_py_err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn phase(&self) -> String {
        format!("{:?}", self.inner.state().phase).to_lowercase()
    }

    #[getter]
    fn global_step(&self) -> usize {
        self.inner.state().global_step
    }

    fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    fn snapshot_json(&self) -> String {
        self.inner.snapshot_json()
    }
}

#[pyfunction]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Vec<usize>, f64)> {
    let r = evalkit::kmeans(&matrix(points)?, k, seed).map_err(to_py_err)?;
    Ok((r.labels, r.inertia))
}

#[pyfunction]
fn adjusted_rand_index(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    evalkit::adjusted_rand_index(&pred, &truth).map_err(to_py_err)
}

#[pyfunction]
fn v_measure(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    evalkit::v_measure(&pred, &truth).map_err(to_py_err)
}

#[pyfunction]
fn recall_at_k(images: Vec<Vec<f64>>, texts: Vec<Vec<f64>>, k: usize) -> PyResult<(f64, f64)> {
    evalkit::recall_at_k(&matrix(images)?, &matrix(texts)?, k).map_err(to_py_err)
}

/// Ridge probe fit on text embeddings, accuracy on image embeddings.
#[pyfunction]
#[pyo3(signature = (train_texts, train_labels, test_images, test_labels, ridge_lambda = evalkit::DEFAULT_RIDGE_LAMBDA))]
fn interchangeability_probe(
    train_texts: Vec<Vec<f64>>,
    train_labels: Vec<usize>,
    test_images: Vec<Vec<f64>>,
    test_labels: Vec<usize>,
    ridge_lambda: f64,
) -> PyResult<f64> {
    let probe = RidgeProbe::fit(&matrix(train_texts)?, &train_labels, ridge_lambda).map_err(to_py_err)?;
    probe.accuracy(&matrix(test_images)?, &test_labels).map_err(to_py_err)
}

/// `(slope, intercept, r_squared)` of an ordinary least-squares line.
#[pyfunction]
fn linear_fit_r2(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = evalkit::linear_fit_r2(&x, &y).map_err(to_py_err)?;
    Ok((f.slope, f.intercept, f.r_squared))
}

/// Train on synthetic data; `config_json` uses the CLI config schema.
/// Returns `{"history": [...], "metrics": {...}, "log_scale": ...}`.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn train<'py>(py: Python<'py>, config_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(config_json)?;
    let (outcome, metrics) = py
        .detach(|| {
            let outcome = trainkit::train(&cfg.train, &cfg.synth)?;
            let metrics = evalkit::evaluate_outcome(
                &outcome,
                cfg.train.curriculum.alpha_target,
                cfg.synth.n_classes,
                cfg.train.seed,
                evalkit::EvalOptions::default(),
            )?;
            Ok::<_, Error>((outcome, metrics))
        })
        .map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("history", to_py(py, &outcome.history.records)?)?;
    out.set_item("metrics", to_py(py, &metrics)?)?;
    out.set_item("log_scale", outcome.temperature.log_scale())?;
    Ok(out.into_any())
}

/// Seed-averaged and per-seed sweep records.
#[pyfunction]
#[pyo3(signature = (alphas, seeds, config_json = None, variant = "curriculum", threads = 1))]
fn sweep<'py>(
    py: Python<'py>,
    alphas: Vec<f64>,
    seeds: Vec<u64>,
    config_json: Option<&str>,
    variant: &str,
    threads: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(config_json)?;
    let variant = match variant {
        "curriculum" => SweepVariant::Curriculum,
        "constant" => SweepVariant::Constant,
        other => return Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    };
    let plan = SweepPlan {
        variant,
        ..SweepPlan::new(cfg.train, cfg.synth, alphas, seeds)
    };
    let result = py
        .detach(|| run_sweep(&plan, threads))
        .map_err(|f| to_py_err(f.error))?;
    let out = PyDict::new(py);
    out.set_item("averaged", to_py(py, &result.averaged)?)?;
    let runs = PyList::empty(py);
    for run in &result.runs {
        let d = to_py(py, &run.record)?;
        d.set_item("seed", run.seed)?;
        runs.append(d)?;
    }
    out.set_item("runs", runs)?;
    Ok(out.into_any())
}

/// Read an EMB1 file as `(rows, labels or None)`.
#[pyfunction]
fn read_emb(path: &str) -> PyResult<(Vec<Vec<f64>>, Option<Vec<u32>>)> {
    let f = EmbFile::read(std::path::Path::new(path)).map_err(cli_err)?;
    let m = f.to_matrix().map_err(cli_err)?;
    Ok((m.to_rows(), f.labels))
}

#[pyfunction]
#[pyo3(signature = (path, rows, labels = None))]
fn write_emb(path: &str, rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> PyResult<()> {
    let m = matrix(rows)?;
    EmbFile::from_matrix(&m, labels.as_deref())
        .and_then(|f| f.write(std::path::Path::new(path)))
        .map_err(cli_err)
}

#[pymodule]
fn gaplab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LossOutput>()?;
    m.add_class::<Scheduler>()?;
    m.add_function(wrap_pyfunction!(raw_gap, m)?)?;
    m.add_function(wrap_pyfunction!(centroid_gap, m)?)?;
    m.add_function(wrap_pyfunction!(distribution_gap, m)?)?;
    m.add_function(wrap_pyfunction!(gap_report, m)?)?;
    m.add_function(wrap_pyfunction!(mean_center, m)?)?;
    m.add_function(wrap_pyfunction!(effective_rank, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_index, m)?)?;
    m.add_function(wrap_pyfunction!(clip_loss, m)?)?;
    m.add_function(wrap_pyfunction!(clip_loss_decomposed, m)?)?;
    m.add_function(wrap_pyfunction!(reweighted_loss, m)?)?;
    m.add_function(wrap_pyfunction!(intra_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cma_loss, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(v_measure, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(interchangeability_probe, m)?)?;
    m.add_function(wrap_pyfunction!(linear_fit_r2, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(read_emb, m)?)?;
    m.add_function(wrap_pyfunction!(write_emb, m)?)?;
    Ok(())
}
