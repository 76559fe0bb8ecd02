//! Python bindings for the funnel-safeguarded data-driven MPC library.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use funnelmpc::datadrive::{lemma_residual as core_lemma_residual, DataLog, HankelPair};
use funnelmpc::lti::{relative_degree as core_relative_degree, zoh_discretize as core_zoh_discretize, ContinuousLTI};
use funnelmpc::scenarios::{default_benchmark, ExperimentConfig};
use funnelmpc::supervisor::{run, Branch, TrajectoryLog};
use funnelmpc::trace::{read_trace_file, write_trace_file};
use funnelmpc::Error;

create_exception!(funnelmpc_py, FunnelViolation, PyRuntimeError, "The closed loop left the safe set.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::FunnelViolation { .. } => FunnelViolation::new_err(e.to_string()),
        Error::Io(_) | Error::Trace(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn sequence(samples: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    samples.into_iter().map(DVector::from_vec).collect()
}

fn plant(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<ContinuousLTI> {
    let a = matrix(a)?;
    let n = a.nrows();
    ContinuousLTI::new(a, matrix(b)?, matrix(c)?, DVector::zeros(n)).map_err(to_py)
}

/// Benchmark configuration; keyword arguments use the configuration-file keys.
#[pyclass(module = "funnelmpc_py")]
struct Experiment {
    config: ExperimentConfig,
}

#[pymethods]
impl Experiment {
    #[new]
    #[pyo3(signature = (config_text = None, **overrides))]
    fn new(config_text: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut config = default_benchmark();
        if let Some(text) = config_text {
            config.apply_text(text).map_err(to_py)?;
        }
        if let Some(kw) = overrides {
            for (key, value) in kw.iter() {
                let key: String = key.extract()?;
                let value = value.str()?.to_string();
                config.set(&key, &value).map_err(|msg| PyValueError::new_err(format!("{key}: {msg}")))?;
            }
        }
        Ok(Self { config })
    }

    /// Controller constants and the sampling time actually used.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let exp = self.config.build().map_err(to_py)?;
        let c = &exp.constants;
        let d = PyDict::new(py);
        d.set_item("eps", c.eps.clone())?;
        d.set_item("eps_hat", c.eps_hat.clone())?;
        d.set_item("mu", c.mu.clone())?;
        d.set_item("gamma_bar", c.gamma_bar.clone())?;
        d.set_item("gamma_min", c.bounds.gamma_min)?;
        d.set_item("gamma_max", c.bounds.gamma_max)?;
        d.set_item("kappa0", c.kappa0)?;
        d.set_item("beta", c.beta)?;
        d.set_item("kappa1", c.kappa1)?;
        d.set_item("tau_max", c.tau)?;
        d.set_item("tau", exp.controller.tau)?;
        d.set_item("input_bound", c.input_bound())?;
        Ok(d)
    }

    /// Runs the closed loop; raises `FunnelViolation` if the safe set is left.
    fn run(&self, py: Python<'_>) -> PyResult<Trajectory> {
        let exp = self.config.build().map_err(to_py)?;
        let log = py.detach(|| run(&exp.plant, &exp.controller)).map_err(to_py)?;
        Ok(Trajectory { log, u_max: self.config.u_max })
    }

    fn __repr__(&self) -> String {
        format!("Experiment(mode={:?}, seed={}, t_end={})", self.config.mode, self.config.seed, self.config.t_end)
    }
}

/// Sampled closed-loop trajectory.
#[pyclass(module = "funnelmpc_py")]
struct Trajectory {
    log: TrajectoryLog,
    u_max: f64,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn tau(&self) -> f64 {
        self.log.tau
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.log.records.iter().map(|r| r.t).collect()
    }

    #[getter]
    fn y(&self) -> Vec<Vec<f64>> {
        self.log.records.iter().map(|r| r.y().iter().copied().collect()).collect()
    }

    #[getter]
    fn y_ref(&self) -> Vec<Vec<f64>> {
        self.log.records.iter().map(|r| r.y_ref.iter().copied().collect()).collect()
    }

    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        self.log.records.iter().map(|r| r.u.iter().copied().collect()).collect()
    }

    #[getter]
    fn branch(&self) -> Vec<&'static str> {
        self.log.records.iter().map(|r| r.branch.as_str()).collect()
    }

    #[getter]
    fn horizon(&self) -> Vec<usize> {
        self.log.records.iter().map(|r| r.l_used).collect()
    }

    /// Largest `||y - y_ref||` relative to the funnel radius on the refined grid.
    #[getter]
    fn intersample_ratio(&self) -> f64 {
        self.log.intersample_ratio
    }

    /// First step with an available predictive controller.
    #[getter]
    fn pe_step(&self) -> Option<usize> {
        self.log.pe_step
    }

    #[getter]
    fn zoh_activations(&self) -> usize {
        self.log.branch_count(Branch::Zoh)
    }

    /// Maximal runs of samples with `||u||` above `threshold` (default: `u_max`).
    #[pyo3(signature = (threshold = None))]
    fn spike_events(&self, threshold: Option<f64>) -> usize {
        self.log.spike_events(threshold.unwrap_or(self.u_max))
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        write_trace_file(&self.log, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.log.len()
    }
}

/// Exact zero-order-hold discretization; returns `(Ad, Bd)`.
#[pyfunction]
fn zoh_discretize(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    tau: f64,
) -> PyResult<(Rows, Rows)> {
    let model = core_zoh_discretize(&plant(a, b, c)?, tau).map_err(to_py)?;
    Ok((nested(&model.ad), nested(&model.bd)))
}

#[pyfunction]
fn relative_degree(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<usize> {
    core_relative_degree(&plant(a, b, c)?).map_err(to_py)
}

/// Distance of a trajectory from the span of the data Hankel matrices of the given depth.
#[pyfunction]
fn lemma_residual(
    u_hat: Vec<Vec<f64>>,
    y_hat: Vec<Vec<f64>>,
    depth: usize,
    traj_u: Vec<Vec<f64>>,
    traj_y: Vec<Vec<f64>>,
) -> PyResult<f64> {
    let log = DataLog { u_hat: sequence(u_hat), y_hat: sequence(y_hat) };
    let pair = HankelPair::from_log(&log, depth).map_err(to_py)?;
    core_lemma_residual(&sequence(traj_u), &sequence(traj_y), &pair).map_err(to_py)
}

/// Reads a trace CSV into a list of row dictionaries.
#[pyfunction]
fn read_trace<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = read_trace_file(&path).map_err(to_py)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("t", r.t)?;
            d.set_item("y", r.y)?;
            d.set_item("y_ref", r.y_ref)?;
            d.set_item("funnel", r.funnel)?;
            d.set_item("e1_norm", r.e1_norm)?;
            d.set_item("e2_norm", r.e2_norm)?;
            d.set_item("u", r.u)?;
            d.set_item("branch", r.branch.as_str())?;
            d.set_item("L_used", r.l_used)?;
            d.set_item("obj", r.obj)?;
            d.set_item("iters", r.iters)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn funnelmpc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Experiment>()?;
    m.add_class::<Trajectory>()?;
    m.add("FunnelViolation", m.py().get_type::<FunnelViolation>())?;
    m.add_function(wrap_pyfunction!(zoh_discretize, m)?)?;
    m.add_function(wrap_pyfunction!(relative_degree, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_residual, m)?)?;
    m.add_function(wrap_pyfunction!(read_trace, m)?)?;
    Ok(())
}
