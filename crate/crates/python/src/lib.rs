//! Python bindings: tensors, models, the federated fit and its baselines,
//! vocabulary alignment and the assignment solver.

use std::collections::BTreeMap;

use fedtensor::align::element_code;
use fedtensor::baselines::{hungarian as solve_assignment, run_central as central, run_local as local};
use fedtensor::data::{
    build_cooccurrence_tensor, partition_patients, read_events_file, synthesize_tensor, CooccurrenceSpec,
    PartitionPlan, SynthConfig,
};
use fedtensor::federation::{
    run_alignment, run_federated as federated, FederationConfig, TimingReport, TraceRow, TransportKind,
};
use fedtensor::tensor::{read_tensor_file, rmse, rmse_partitioned, write_tensor_file, RmseScope};
use fedtensor::{AdmmConfig, CpModel, FactorMatrix, SparseTensor};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(pyfedtensor, FedTensorError, PyException, "A fedtensor operation failed.");

fn err(e: fedtensor::Error) -> PyErr {
    FedTensorError::new_err(e.to_string())
}

fn to_rows(m: &FactorMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

#[pyclass(name = "SparseTensor", module = "pyfedtensor", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PySparseTensor {
    pub inner: SparseTensor,
}

#[pymethods]
impl PySparseTensor {
    /// `entries` is a list of `(index, value)` pairs.
    #[new]
    fn new(shape: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: SparseTensor::new(shape, entries).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: read_tensor_file(path).map_err(err)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        write_tensor_file(&self.inner, path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    #[getter]
    fn mode_names(&self) -> Vec<String> {
        self.inner.mode_names().to_vec()
    }

    fn entries(&self) -> Vec<(Vec<usize>, f64)> {
        self.inner.entries().map(|(i, v)| (i.to_vec(), v)).collect()
    }

    fn __repr__(&self) -> String {
        format!("SparseTensor(shape={:?}, nnz={})", self.inner.shape(), self.inner.nnz())
    }
}

#[pyclass(name = "CpModel", module = "pyfedtensor", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCpModel {
    pub inner: CpModel,
}

#[pymethods]
impl PyCpModel {
    /// One row-major factor matrix per mode, all with the same column count.
    #[new]
    fn new(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let factors = factors
            .iter()
            .map(|f| FactorMatrix::from_rows(f))
            .collect::<fedtensor::Result<Vec<_>>>()
            .map_err(err)?;
        Ok(Self {
            inner: CpModel::new(factors).map_err(err)?,
        })
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape()
    }

    #[getter]
    fn factors(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.factors().iter().map(to_rows).collect()
    }

    fn value(&self, index: Vec<usize>) -> PyResult<f64> {
        let shape = self.inner.shape();
        if index.len() != shape.len() || index.iter().zip(&shape).any(|(i, d)| i >= d) {
            return Err(FedTensorError::new_err(format!("index {index:?} outside shape {shape:?}")));
        }
        Ok(self.inner.value_at(&index))
    }

    /// Root mean squared error over every cell of `tensor`.
    fn rmse(&self, tensor: &PySparseTensor) -> PyResult<f64> {
        rmse(&self.inner, &tensor.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("CpModel(shape={:?}, rank={})", self.inner.shape(), self.inner.rank())
    }
}

/// Settings shared by every fit. Unset arguments keep the library defaults.
#[pyclass(name = "Config", module = "pyfedtensor", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    pub inner: FederationConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (*, rank=None, lam=None, omega=None, mu=None, max_iter=None, tol=None, seed=None, transport=None, link_rate=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        rank: Option<usize>,
        lam: Option<f64>,
        omega: Option<f64>,
        mu: Option<f64>,
        max_iter: Option<usize>,
        tol: Option<f64>,
        seed: Option<u64>,
        transport: Option<&str>,
        link_rate: Option<f64>,
    ) -> PyResult<Self> {
        let d = AdmmConfig::default();
        let admm = AdmmConfig {
            rank: rank.unwrap_or(d.rank),
            lambda: lam.unwrap_or(d.lambda),
            omega: omega.unwrap_or(d.omega),
            mu: mu.unwrap_or(d.mu),
            max_iter: max_iter.unwrap_or(d.max_iter),
            tol: tol.unwrap_or(d.tol),
            seed: seed.unwrap_or(d.seed),
            ..d
        };
        let transport = match transport.unwrap_or("in_process") {
            "in_process" => TransportKind::InProcess,
            "tcp" => TransportKind::Tcp,
            other => return Err(FedTensorError::new_err(format!("unknown transport {other:?}"))),
        };
        let inner = FederationConfig {
            admm,
            transport,
            link_rate: link_rate.unwrap_or(FederationConfig::default().link_rate),
            ..FederationConfig::default()
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.admm.rank
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.inner.admm.omega
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.admm.seed
    }

    fn __repr__(&self) -> String {
        let a = &self.inner.admm;
        format!(
            "Config(rank={}, lam={}, omega={}, mu={}, max_iter={}, tol={}, seed={})",
            a.rank, a.lambda, a.omega, a.mu, a.max_iter, a.tol, a.seed
        )
    }
}

/// Outcome of one fit.
#[pyclass(name = "RunResult", module = "pyfedtensor", frozen, get_all)]
pub struct PyRunResult {
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    pub rmse_trace: Vec<f64>,
    /// One model per hospital; a single one for the central fit.
    pub models: Vec<PyCpModel>,
    pub comp_s: f64,
    pub comm_s: f64,
    pub align_s: f64,
    pub total_s: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl PyRunResult {
    fn new(rmse: f64, trace: &[TraceRow], converged: bool, models: Vec<CpModel>, t: &TimingReport) -> Self {
        Self {
            rmse,
            iterations: trace.len(),
            converged,
            objective_trace: trace.iter().map(|r| r.objective).collect(),
            residual_trace: trace.iter().map(|r| r.residual).collect(),
            rmse_trace: trace.iter().map(|r| r.rmse).collect(),
            models: models.into_iter().map(|inner| PyCpModel { inner }).collect(),
            comp_s: t.computation_seconds,
            comm_s: t.communication_seconds,
            align_s: t.alignment_seconds,
            total_s: t.total_seconds(),
            bytes_up: t.bytes_up,
            bytes_down: t.bytes_down,
        }
    }
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(rmse={:.6}, iterations={}, converged={})",
            self.rmse, self.iterations, self.converged
        )
    }
}

fn config_or_default(config: Option<&PyConfig>, k: usize) -> FederationConfig {
    FederationConfig {
        hospitals: k,
        ..config.map(|c| c.inner.clone()).unwrap_or_default()
    }
}

fn unwrap_shards(shards: &[PyRef<'_, PySparseTensor>]) -> Vec<SparseTensor> {
    shards.iter().map(|s| s.inner.clone()).collect()
}

/// Synthetic count tensor with a planted CP model; returns `(tensor, truth)`.
#[pyfunction]
#[pyo3(signature = (shape=vec![50, 40, 30], rank=5, noise_sd=0.1, seed=0))]
fn synthesize(shape: Vec<usize>, rank: usize, noise_sd: f64, seed: u64) -> PyResult<(PySparseTensor, PyCpModel)> {
    let (t, m) = synthesize_tensor(&SynthConfig {
        shape,
        rank,
        noise_sd,
        seed,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    Ok((PySparseTensor { inner: t }, PyCpModel { inner: m }))
}

/// Splits the patients (mode 0) across `hospitals`; `skew` is hospital 0's share, 0 for even.
#[pyfunction]
#[pyo3(signature = (tensor, hospitals, skew=0.0, seed=0))]
fn partition(tensor: &PySparseTensor, hospitals: usize, skew: f64, seed: u64) -> PyResult<Vec<PySparseTensor>> {
    let plan = PartitionPlan::new(tensor.inner.shape()[0], hospitals, skew, seed).map_err(err)?;
    let shards = partition_patients(&tensor.inner, &plan).map_err(err)?;
    Ok(shards.into_iter().map(|inner| PySparseTensor { inner }).collect())
}

/// Reads an events CSV and builds the co-occurrence tensor.
/// Returns `(tensor, patients, medication_codes, lab_codes)`.
#[pyfunction]
#[pyo3(signature = (path, window_hours=3))]
fn build_tensor(path: &str, window_hours: i64) -> PyResult<(PySparseTensor, Vec<String>, Vec<String>, Vec<String>)> {
    let events = read_events_file(path).map_err(err)?;
    let spec = CooccurrenceSpec {
        window_seconds: window_hours * 3600,
        ..CooccurrenceSpec::default()
    };
    let built = build_cooccurrence_tensor(&events, &spec).map_err(err)?;
    Ok((PySparseTensor { inner: built.tensor }, built.patients, built.codes_a, built.codes_b))
}

#[pyfunction]
#[pyo3(signature = (shards, config=None))]
fn run_federated(py: Python<'_>, shards: Vec<PyRef<'_, PySparseTensor>>, config: Option<&PyConfig>) -> PyResult<PyRunResult> {
    let shards = unwrap_shards(&shards);
    let cfg = config_or_default(config, shards.len());
    let run = py.detach(|| federated(&shards, &cfg)).map_err(err)?;
    Ok(PyRunResult::new(run.final_rmse(), &run.trace, run.converged, run.models, &run.timing))
}

#[pyfunction]
#[pyo3(signature = (tensor, config=None))]
fn run_central(py: Python<'_>, tensor: &PySparseTensor, config: Option<&PyConfig>) -> PyResult<PyRunResult> {
    let cfg = config_or_default(config, 1);
    let t = tensor.inner.clone();
    let run = py.detach(|| central(&t, &cfg)).map_err(err)?;
    Ok(PyRunResult::new(run.final_rmse(), &run.trace, run.converged, run.models, &run.timing))
}

/// Independent per-hospital fits, matched to hospital 0 and averaged once.
#[pyfunction]
#[pyo3(signature = (shards, config=None))]
fn run_local(py: Python<'_>, shards: Vec<PyRef<'_, PySparseTensor>>, config: Option<&PyConfig>) -> PyResult<PyRunResult> {
    let shards = unwrap_shards(&shards);
    let cfg = config_or_default(config, shards.len());
    let (run, rmse) = py
        .detach(|| {
            let run = local(&shards, &cfg)?;
            let rmse = rmse_partitioned(&run.models, &shards, RmseScope::AllCells)?;
            Ok((run, rmse))
        })
        .map_err(err)?;
    let trace = run.traces.iter().max_by_key(|t| t.len()).cloned().unwrap_or_default();
    Ok(PyRunResult::new(rmse, &trace, true, run.models, &run.timing))
}

/// Aligns string vocabularies; `vocabularies[k][n]` lists hospital `k`'s codes
/// for feature mode `n`. Returns `(global_sizes, index)` with
/// `index[k][n][code]` the global position of a code.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn align(py: Python<'_>, vocabularies: Vec<Vec<Vec<String>>>) -> PyResult<(Vec<usize>, Vec<Vec<BTreeMap<String, usize>>>)> {
    let codes: Vec<Vec<Vec<u64>>> = vocabularies
        .iter()
        .map(|h| h.iter().map(|m| m.iter().map(|c| element_code(c)).collect()).collect())
        .collect();
    let cfg = FederationConfig {
        hospitals: vocabularies.len(),
        ..FederationConfig::default()
    };
    let run = py.detach(|| run_alignment(&codes, &cfg)).map_err(err)?;
    let index = vocabularies
        .iter()
        .zip(&run.results)
        .map(|(h, results)| {
            h.iter()
                .zip(results)
                .map(|(m, r)| m.iter().map(|c| (c.clone(), r.index[&element_code(c)])).collect())
                .collect()
        })
        .collect();
    Ok((run.global_sizes(), index))
}

/// Minimum-cost perfect matching; returns `(permutation, cost)` with row `i`
/// matched to column `permutation[i]`.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let a = solve_assignment(&cost).map_err(err)?;
    Ok((a.permutation, a.cost))
}

#[pymodule]
pub fn pyfedtensor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FedTensorError", m.py().get_type::<FedTensorError>())?;
    m.add_class::<PySparseTensor>()?;
    m.add_class::<PyCpModel>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(build_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(run_federated, m)?)?;
    m.add_function(wrap_pyfunction!(run_central, m)?)?;
    m.add_function(wrap_pyfunction!(run_local, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    Ok(())
}
