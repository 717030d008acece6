//! Python module `sbm`: structures, models, training and metrics.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbm_core::evaluation::{self, AisConfig};
use sbm_core::rbm::exact_log_z;
use sbm_core::trainer::{init_classifier, init_params};
use sbm_core::{checkpoint, synthetic, ConnectivityStructure, Error, Grid, ImageDataset, Model, StructureSpec, TrainConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Shape(_) | Error::InvalidArgument(_) | Error::Spec(_) | Error::TooLarge { .. } => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sbm_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Hidden-unit connectivity on an image grid.
#[pyclass(name = "Structure", module = "sbm", frozen)]
struct PyStructure {
    inner: Arc<ConnectivityStructure>,
}

#[pymethods]
impl PyStructure {
    #[new]
    fn new(spec: &str, height: usize, width: usize) -> PyResult<Self> {
        let spec: StructureSpec = spec.parse().py()?;
        let inner = ConnectivityStructure::build(&spec, Grid::new(height, width)).py()?;
        Ok(PyStructure { inner: Arc::new(inner) })
    }

    #[getter]
    fn spec(&self) -> String {
        self.inner.spec().to_string()
    }

    #[getter]
    fn n_visible(&self) -> usize {
        self.inner.n_visible()
    }

    #[getter]
    fn n_hidden(&self) -> usize {
        self.inner.n_hidden()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    /// Visible indices connected to hidden unit `j`.
    fn neighbourhood(&self, j: usize) -> PyResult<Vec<usize>> {
        if j >= self.inner.n_hidden() {
            return Err(PyValueError::new_err(format!("hidden unit {j} out of range")));
        }
        Ok(self.inner.neighbourhood(j).to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Structure('{}', n_hidden={}, nnz={})", self.inner.spec(), self.inner.n_hidden(), self.inner.nnz())
    }
}

/// Images (rows of pixel values in [0, 1]) with optional labels.
#[pyclass(name = "Dataset", module = "sbm", frozen)]
struct PyDataset {
    inner: ImageDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (images, height, width, labels=None))]
    fn new(images: Vec<Vec<f64>>, height: usize, width: usize, labels: Option<Vec<usize>>) -> PyResult<Self> {
        let n = height * width;
        if let Some(bad) = images.iter().position(|r| r.len() != n) {
            return Err(PyValueError::new_err(format!("image {bad} does not have {n} pixels")));
        }
        let inner = ImageDataset::new(images.concat(), Grid::new(height, width), labels).py()?;
        Ok(PyDataset { inner })
    }

    /// Loads IDX, `.npz`, a directory of `.npy` files or CSV.
    #[staticmethod]
    #[pyo3(signature = (path, split=None, labels=None))]
    fn load(path: &str, split: Option<&str>, labels: Option<&str>) -> PyResult<Self> {
        use sbm_core::data;
        let p = std::path::Path::new(path);
        let inner = if p.is_dir() || path.ends_with(".npz") {
            data::load_array_archive(p, split)
        } else if path.ends_with(".csv") {
            let side = csv_side(p)?;
            data::load_csv(p, Grid::square(side))
        } else {
            data::load_idx_dataset(p, labels.map(std::path::Path::new))
        }
        .py()?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn bars_and_stripes(side: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset { inner: synthetic::bars_and_stripes(Grid::square(side), n, seed).py()? })
    }

    #[staticmethod]
    fn oriented_stripes(side: usize, n: usize, noise: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset { inner: synthetic::oriented_stripes(Grid::square(side), n, noise, seed).py()? })
    }

    /// Copy with `round(fraction * n_pixels)` distinct pixels flipped per image.
    fn salt_and_pepper(&self, fraction: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset { inner: synthetic::salt_and_pepper(&self.inner, fraction, seed).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_visible(&self) -> usize {
        self.inner.n_visible()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels().map(<[usize]>::to_vec)
    }

    fn image(&self, k: usize) -> PyResult<Vec<f64>> {
        if k >= self.inner.len() {
            return Err(PyValueError::new_err(format!("image {k} out of range")));
        }
        Ok(self.inner.image(k).to_vec())
    }
}

fn csv_side(path: &std::path::Path) -> PyResult<usize> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    let n = first.split(',').count();
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(PyValueError::new_err(format!("CSV rows have {n} values, not a square image")));
    }
    Ok(side)
}

/// A generative RBM/SBM or a classification RBM.
#[pyclass(name = "Model", module = "sbm", frozen)]
struct PyModel {
    inner: Model,
}

impl PyModel {
    fn check_v(&self, v: &[f64]) -> PyResult<()> {
        let n = self.inner.base().n_visible();
        if v.len() != n {
            return Err(PyValueError::new_err(format!("expected {n} visible values, got {}", v.len())));
        }
        Ok(())
    }
}

#[pymethods]
impl PyModel {
    /// Glorot-uniform initialization; pass `n_classes` for a classifier.
    #[staticmethod]
    #[pyo3(signature = (structure, seed=0, n_classes=None))]
    fn init(structure: &PyStructure, seed: u64, n_classes: Option<usize>) -> PyResult<Self> {
        let s = structure.inner.clone();
        let inner = match n_classes {
            None => Model::Generative(init_params(s, seed)),
            Some(c) => Model::Classifier(init_classifier(s, c, seed).py()?),
        };
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel { inner: checkpoint::load(path).py()? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(path, &self.inner).py()
    }

    #[getter]
    fn spec(&self) -> String {
        self.inner.structure().spec().to_string()
    }

    #[getter]
    fn n_visible(&self) -> usize {
        self.inner.base().n_visible()
    }

    #[getter]
    fn n_hidden(&self) -> usize {
        self.inner.base().n_hidden()
    }

    #[getter]
    fn n_classes(&self) -> Option<usize> {
        self.inner.n_classes()
    }

    /// Dense `n_v x n_h` weight matrix, zero off the support.
    fn dense_weights(&self) -> Vec<Vec<f64>> {
        let p = self.inner.base();
        p.dense_weights().chunks(p.n_hidden()).map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn visible_bias(&self) -> Vec<f64> {
        self.inner.base().visible_bias().to_vec()
    }

    #[getter]
    fn hidden_bias(&self) -> Vec<f64> {
        self.inner.base().hidden_bias().to_vec()
    }

    fn free_energy(&self, v: Vec<f64>) -> PyResult<f64> {
        self.inner.base().free_energy(&v).py()
    }

    fn prob_h_given_v(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.base().prob_h_given_v(&v).py()
    }

    fn prob_v_given_h(&self, h: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.base().prob_v_given_h(&h).py()
    }

    fn exact_log_z(&self) -> PyResult<f64> {
        exact_log_z(self.inner.base()).py()
    }

    /// Returns `(log_z, stderr)`.
    #[pyo3(signature = (n_runs=1000, n_betas=2900, seed=0, threads=0))]
    fn ais_log_z(&self, py: Python<'_>, n_runs: usize, n_betas: usize, seed: u64, threads: usize) -> PyResult<(f64, f64)> {
        let cfg = AisConfig { n_runs, n_betas, seed, threads };
        let p = self.inner.base();
        let est = py.detach(|| evaluation::ais_log_z(p, &cfg)).py()?;
        Ok((est.log_z, est.stderr))
    }

    fn mean_loglikelihood(&self, data: &PyDataset, log_z: f64) -> PyResult<f64> {
        evaluation::mean_loglikelihood(&data.inner, self.inner.base(), log_z).py()
    }

    #[pyo3(signature = (image, steps=1, seed=0))]
    fn denoise(&self, image: Vec<f64>, steps: usize, seed: u64) -> PyResult<Vec<f64>> {
        evaluation::denoise(&image, self.inner.base(), steps, ChaCha8Rng::seed_from_u64(seed)).py()
    }

    fn predict_proba(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_v(&v)?;
        self.inner.as_classifier().py()?.predict_proba(&v).py()
    }

    fn classify(&self, v: Vec<f64>) -> PyResult<usize> {
        self.check_v(&v)?;
        self.inner.as_classifier().py()?.classify(&v).py()
    }

    fn __repr__(&self) -> String {
        match self.inner.n_classes() {
            Some(c) => format!("Model('{}', classes={c})", self.spec()),
            None => format!("Model('{}')", self.spec()),
        }
    }
}

type TrainOutput = (PyModel, PyModel, Vec<(usize, String, f64)>);

/// Trains `model`; keyword arguments are training options such as
/// `learning_rate` or `total_updates`. Returns `(best_model, final_model,
/// history)` where history holds `(update, metric, value)` tuples.
#[pyfunction]
#[pyo3(signature = (model, train, val, **options))]
fn train(
    py: Python<'_>,
    model: &PyModel,
    train: &PyDataset,
    val: &PyDataset,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<TrainOutput> {
    let cfg: TrainConfig = match options {
        Some(d) => {
            let json: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&json).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    let m = model.inner.clone();
    let state = py.detach(|| sbm_core::trainer::train(m, &train.inner, &val.inner, &cfg)).py()?;
    let best = state.best.as_ref().map_or_else(|| state.model.clone(), |b| b.model.clone());
    let history = state.history.iter().map(|r| (r.update, r.name.clone(), r.value)).collect();
    Ok((PyModel { inner: best }, PyModel { inner: state.model }, history))
}

#[pyfunction]
fn mse(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    evaluation::mse(&x, &y).py()
}

/// Mean negative log-probability of the true labels; `probs` has one row
/// per instance.
#[pyfunction]
#[pyo3(signature = (labels, probs, balanced=false))]
fn log_loss(labels: Vec<usize>, probs: Vec<Vec<f64>>, balanced: bool) -> PyResult<f64> {
    let n_c = probs.first().map_or(0, Vec::len);
    let weights = balanced.then(|| evaluation::balanced_class_weights(&labels, n_c));
    evaluation::log_loss(&labels, &probs.concat(), n_c, weights.as_deref()).py()
}

#[pyfunction]
#[pyo3(signature = (labels, predictions, balanced=false))]
fn accuracy(labels: Vec<usize>, predictions: Vec<usize>, balanced: bool) -> PyResult<f64> {
    evaluation::accuracy(&labels, &predictions, balanced).py()
}

#[pymodule]
pub fn sbm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStructure>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(log_loss, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    Ok(())
}
