//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use llmemb::eval;
use llmemb::rat;
use llmemb::reduce::{pca_fit, PcaModel};
use llmemb::scft;
use llmemb::{Mat, TensorFile};
use llmemb_cli::config::PipelineConfig;
use llmemb_cli::pipeline::{Pipeline as Runner, Stage, PIPELINE};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let n = rows.len();
    Mat::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(value_err)
}

fn from_mat(m: &Mat) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Symmetric contrastive loss between two views of the same batch.
#[pyfunction]
fn scft_loss(e1: Vec<Vec<f64>>, e2: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    scft::scft_loss(&to_mat(e1)?, &to_mat(e2)?, tau).map_err(value_err)
}

#[pyfunction]
fn directional_cl_loss(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    scft::directional_cl_loss(&to_mat(a)?, &to_mat(b)?, tau).map_err(value_err)
}

#[pyfunction]
fn align_loss(e: Vec<Vec<f64>>, target: Vec<Vec<f64>>, gamma: f64) -> PyResult<f64> {
    rat::align_loss(&to_mat(e)?, &to_mat(target)?, gamma).map_err(value_err)
}

/// `(hit@k, ndcg@k)` of one positive score against its negatives.
#[pyfunction]
#[pyo3(signature = (positive, negatives, k = 10))]
fn rank_metrics(positive: f64, negatives: Vec<f64>, k: usize) -> PyResult<(f64, f64)> {
    eval::rank_metrics_at(positive, &negatives, k).map_err(value_err)
}

/// `(head, tail)` item ids.
#[pyfunction]
fn tail_split(popularity: Vec<u64>) -> (Vec<usize>, Vec<usize>) {
    eval::tail_split(&popularity)
}

#[pyfunction]
fn uniformity(e: Vec<Vec<f64>>) -> PyResult<f64> {
    eval::uniformity(&to_mat(e)?).map_err(value_err)
}

/// Reads every tensor of a container file as `{name: rows}`.
#[pyfunction]
fn read_tensors(path: PathBuf) -> PyResult<Vec<(String, Vec<Vec<f64>>)>> {
    let f = TensorFile::read(&path).map_err(value_err)?;
    let names: Vec<String> = f.names().map(str::to_string).collect();
    names.into_iter().map(|n| Ok((n.clone(), from_mat(&f.mat(&n).map_err(value_err)?)))).collect()
}

#[pyclass(name = "Pca", module = "llmemb_py")]
struct PyPca(PcaModel);

#[pymethods]
impl PyPca {
    #[staticmethod]
    fn fit(x: Vec<Vec<f64>>, d_m: usize) -> PyResult<Self> {
        pca_fit(&to_mat(x)?, d_m).map(Self).map_err(value_err)
    }

    fn transform(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_mat(&self.0.transform(&to_mat(x)?).map_err(value_err)?))
    }

    fn inverse_transform(&self, z: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_mat(&self.0.inverse_transform(&to_mat(z)?).map_err(value_err)?))
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        from_mat(&self.0.components)
    }

    #[getter]
    fn explained_variance(&self) -> Vec<f64> {
        self.0.explained_variance.to_vec()
    }
}

#[pyclass(name = "Adapter", module = "llmemb_py")]
struct PyAdapter(rat::Adapter);

#[pymethods]
impl PyAdapter {
    #[new]
    #[pyo3(signature = (d_m, d, activation = false, seed = 0))]
    fn new(d_m: usize, d: usize, activation: bool, seed: u64) -> PyResult<Self> {
        rat::Adapter::init(d_m, d, activation, seed).map(Self).map_err(value_err)
    }

    /// Loads the adapter stored in a RAT model file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let f = TensorFile::read(&path).map_err(value_err)?;
        rat::Adapter::read_from(&f).map(Self).map_err(value_err)
    }

    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_mat(&self.0.forward(&to_mat(x)?).map_err(value_err)?))
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }
}

/// Stage runner over one artifact directory.
#[pyclass(name = "Pipeline", module = "llmemb_py")]
struct PyPipeline(Runner);

#[pymethods]
impl PyPipeline {
    /// `config` is TOML text; `overrides` are `key.path=value` strings.
    #[new]
    #[pyo3(signature = (artifacts, config = "", overrides = Vec::new(), force = false))]
    fn new(artifacts: PathBuf, config: &str, overrides: Vec<String>, force: bool) -> PyResult<Self> {
        let cfg = PipelineConfig::from_toml(config, &overrides).map_err(value_err)?;
        Ok(Self(Runner::new(cfg, Some(artifacts), force)))
    }

    #[staticmethod]
    fn stages() -> Vec<&'static str> {
        PIPELINE.iter().map(|s| s.name()).chain([Stage::Sweep.name()]).collect()
    }

    /// Runs one stage; returns false when it was already up to date.
    fn run(&self, py: Python<'_>, stage: &str) -> PyResult<bool> {
        let stage = PIPELINE
            .iter()
            .chain([&Stage::Sweep])
            .find(|s| s.name() == stage)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("unknown stage `{stage}`")))?;
        let outcome = py.detach(|| self.0.run(stage)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(outcome == llmemb_cli::pipeline::Outcome::Ran)
    }

    fn run_all(&self, py: Python<'_>) -> PyResult<()> {
        py.detach(|| self.0.run_all()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.0.path(rel)
    }

    fn config_toml(&self) -> String {
        self.0.config.to_toml()
    }
}

#[pymodule]
pub fn llmemb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scft_loss, m)?)?;
    m.add_function(wrap_pyfunction!(directional_cl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(align_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rank_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(tail_split, m)?)?;
    m.add_function(wrap_pyfunction!(uniformity, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensors, m)?)?;
    m.add_class::<PyPca>()?;
    m.add_class::<PyAdapter>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
