//! Python bindings: corpora, training, checkpoints, graph construction and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gdvig_core::config::parse_run_config;
use gdvig_core::data::{generate_corpus, load_corpus, save_corpus, CorpusSpec, Split};
use gdvig_core::graph::{self, GazeGrid, GraphConfig, NodeGrid};
use gdvig_core::harness::attention::grad_cam;
use gdvig_core::harness::{self, compute_metrics, Checkpoint as CoreCheckpoint};
use gdvig_core::numerics::Tensor;
use gdvig_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Shape { .. } | Error::LabelOutOfRange { .. } | Error::Empty(_) | Error::AucUndefined => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn split_of(name: &str) -> PyResult<Split> {
    name.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn nodes(features: Vec<Vec<f64>>) -> PyResult<NodeGrid> {
    let n = features.len();
    let c = features.first().map_or(0, Vec::len);
    if n == 0 || c == 0 || features.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err("features must be a non-empty list of equal-length rows"));
    }
    let t = Tensor::new(&[n, c], features.concat()).map_err(err)?;
    NodeGrid::new(t, 1, n).map_err(err)
}

/// `‖x_i − x_j‖² + λ_g (g_i − g_j)² g_i`.
#[pyfunction]
fn fused_distance(xi: Vec<f64>, xj: Vec<f64>, gi: f64, gj: f64, lambda_g: f64) -> PyResult<f64> {
    if xi.len() != xj.len() {
        return Err(PyValueError::new_err("feature vectors differ in length"));
    }
    let grid = nodes(vec![xi, xj])?;
    let gaze = GazeGrid::new(vec![gi, gj]).map_err(err)?;
    Ok(graph::fused_distance(&grid, &gaze, 0, 1, lambda_g))
}

/// Neighbor lists (nearest first); with `gaze` the fused distance is used.
#[pyfunction]
#[pyo3(signature = (features, k, gaze=None, lambda_g=3.0))]
fn knn_build(features: Vec<Vec<f64>>, k: usize, gaze: Option<Vec<f64>>, lambda_g: f64) -> PyResult<Vec<Vec<usize>>> {
    let grid = nodes(features)?;
    let gaze = gaze.map(GazeGrid::new).transpose().map_err(err)?;
    let cfg = GraphConfig {
        k,
        lambda_g,
        use_gaze: gaze.is_some(),
    };
    let g = graph::knn_build(&grid, gaze.as_ref(), &cfg).map_err(err)?;
    Ok(g.rows().map(<[usize]>::to_vec).collect())
}

#[pyfunction]
fn auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<f64> {
    harness::auc(&scores, &positive).map_err(err)
}

fn metrics_dict<'py>(py: Python<'py>, probs: &[Vec<f64>], labels: &[usize], classes: usize) -> PyResult<Bound<'py, PyDict>> {
    let m = compute_metrics(probs, labels, classes).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("acc", m.acc)?;
    d.set_item("auc", m.auc)?;
    d.set_item("f1", m.f1)?;
    d.set_item("n_samples", m.n_samples)?;
    d.set_item("confusion", m.confusion.clone())?;
    Ok(d)
}

/// Accuracy, AUC (None for a single-class split), F1 and the confusion matrix.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, probs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> PyResult<Bound<'py, PyDict>> {
    metrics_dict(py, &probs, &labels, classes)
}

/// Generates a corpus from `key = value` spec text and writes it to `out`.
/// Returns (train, test) sample counts.
#[pyfunction]
fn synth_data(spec: &str, out: PathBuf) -> PyResult<(usize, usize)> {
    let spec = CorpusSpec::parse(spec).map_err(err)?;
    let c = generate_corpus(&spec).map_err(err)?;
    save_corpus(&c, &out).map_err(err)?;
    Ok((c.train.len(), c.test.len()))
}

/// Trains on a saved corpus with `key = value` config text; returns the best epoch.
#[pyfunction]
fn train(corpus: PathBuf, config: &str, out: PathBuf) -> PyResult<usize> {
    let (model_cfg, train_cfg) = parse_run_config(config).map_err(err)?;
    let data = load_corpus(&corpus).map_err(err)?;
    let t = harness::train(&data.train, &model_cfg, &train_cfg, &mut |_| {}).map_err(err)?;
    let log = t.log_text();
    let mut ck = CoreCheckpoint::from_trained(t);
    ck.meta.corpus = Some(corpus);
    ck.save(&out, &log).map_err(err)?;
    Ok(ck.meta.best_epoch)
}

/// Every gradient check as (name, relative error, passed).
#[pyfunction]
fn gradcheck() -> PyResult<Vec<(String, f64, bool)>> {
    let results = harness::gradcheck::run_suite().map_err(err)?;
    Ok(results.into_iter().map(|r| (r.name.clone(), r.rel_error, r.passed())).collect())
}

#[pyclass(unsendable)]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Checkpoint {
            inner: CoreCheckpoint::load(&dir).map_err(err)?,
        })
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.model.cfg.num_classes
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.meta.best_epoch
    }

    /// Class probabilities of every sample in a split, with the sample ids.
    fn predict(&mut self, corpus: PathBuf, split: &str) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
        let data = load_corpus(&corpus).map_err(err)?;
        let records: Vec<_> = data.split(split_of(split)?).iter().collect();
        let probs = self.inner.predict(&records).map_err(err)?;
        Ok((records.iter().map(|r| r.id.clone()).collect(), probs))
    }

    fn evaluate<'py>(&mut self, py: Python<'py>, corpus: PathBuf, split: &str) -> PyResult<Bound<'py, PyDict>> {
        let data = load_corpus(&corpus).map_err(err)?;
        let records: Vec<_> = data.split(split_of(split)?).iter().collect();
        let probs = self.inner.predict(&records).map_err(err)?;
        let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
        metrics_dict(py, &probs, &labels, self.inner.model.cfg.num_classes)
    }

    /// Heatmap `[H][W]` in `[0, 1]` for one sample.
    fn attention(&mut self, corpus: PathBuf, sample: &str) -> PyResult<Vec<Vec<f64>>> {
        let data = load_corpus(&corpus).map_err(err)?;
        let r = data
            .find(sample)
            .ok_or_else(|| PyValueError::new_err(format!("no sample {sample}")))?;
        let bn = self.inner.train_cfg.bn();
        let map = grad_cam(&self.inner.model, &mut self.inner.store, &[r], bn).map_err(err)?.remove(0);
        let w = map.shape()[1];
        Ok(map.data().chunks(w).map(<[f64]>::to_vec).collect())
    }
}

#[pymodule]
fn gdvig(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fused_distance, m)?)?;
    m.add_function(wrap_pyfunction!(knn_build, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<Checkpoint>()?;
    Ok(())
}
