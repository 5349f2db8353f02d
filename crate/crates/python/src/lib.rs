//! Python bindings: calculators, built-in scenarios, runs and sweeps.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use etcsim::engine::{self, SimTrace};
use etcsim::linear_etc::{self, LinearTriggerConfig};
use etcsim::metrics;
use etcsim::nonlinear_etc::{self, NonlinearTriggerConfig};
use etcsim::output::{self, RunSummary};
use etcsim::plants::{self, PendulumParams, ScalarNonlinearPlant};
use etcsim::scenario;
use etcsim::sweep;
use etcsim::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) | Error::Config(_) | Error::Parse(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Diagonal coordinates of the linearised pendulum.
#[pyclass(name = "DiagonalSystem", frozen)]
pub struct PyDiagonalSystem {
    inner: plants::LinearDiagonalSystem,
}

#[pymethods]
impl PyDiagonalSystem {
    #[getter]
    fn lambda1(&self) -> f64 {
        self.inner.lambda1
    }
    #[getter]
    fn lambda2(&self) -> f64 {
        self.inner.lambda2
    }
    #[getter]
    fn b(&self) -> [f64; 2] {
        self.inner.b
    }
    #[getter]
    fn p(&self) -> [[f64; 2]; 2] {
        self.inner.p
    }
    #[getter]
    fn p_inv(&self) -> [[f64; 2]; 2] {
        self.inner.p_inv
    }
    fn __repr__(&self) -> String {
        format!("DiagonalSystem(lambda1={}, lambda2={}, b={:?})", self.inner.lambda1, self.inner.lambda2, self.inner.b)
    }
}

/// Linearise and diagonalise the pendulum; defaults are the laboratory rig.
#[pyfunction]
#[pyo3(signature = (total_mass=None, length=None, inertia=None, k_xi=None))]
fn diagonalize(
    total_mass: Option<f64>,
    length: Option<f64>,
    inertia: Option<f64>,
    k_xi: Option<f64>,
) -> PyResult<PyDiagonalSystem> {
    let mut p = PendulumParams::laboratory();
    if let Some(v) = total_mass {
        p.total_mass = v;
    }
    if let Some(v) = length {
        p.length = v;
    }
    if let Some(v) = inertia {
        p.inertia = v;
    }
    if let Some(v) = k_xi {
        p.k_xi = v;
    }
    Ok(PyDiagonalSystem { inner: plants::linearize_and_diagonalize(&p).map_err(py_err)? })
}

/// Bits per packet for the linear scheme, with the threshold set `margin` above its floor.
#[pyfunction]
fn linear_packet_size(lambda1: f64, m: f64, rho0: f64, b: f64, gamma: f64, margin: f64) -> PyResult<u32> {
    linear_etc::linear_packet_size(&LinearTriggerConfig::from_margin(lambda1, m, rho0, b, gamma, margin))
        .map_err(py_err)
}

/// `(bits, real-valued bound)` for the nonlinear scheme on the scalar demo plant.
#[pyfunction]
fn nonlinear_packet_size(alpha: f64, gamma: f64, m: f64, margin: f64) -> PyResult<(u32, f64)> {
    let plant = ScalarNonlinearPlant::demo(m);
    let p = nonlinear_etc::nonlinear_packet_size(&NonlinearTriggerConfig::from_margin(&plant, alpha, gamma, margin))
        .map_err(py_err)?;
    Ok((p.bits, p.exact_bits))
}

#[pyfunction]
fn entropy_rate_linear(lambda1: f64) -> PyResult<f64> {
    metrics::entropy_rate_linear(lambda1).map_err(py_err)
}

/// Names of the built-in scenarios, one entry per column.
#[pyfunction]
fn builtin_scenarios() -> Vec<String> {
    scenario::builtins()
        .iter()
        .flat_map(|b| {
            let multi = b.columns.len() > 1;
            b.columns.iter().map(move |(c, _)| {
                let base = format!("{}{}", scenario::BUILTIN_PREFIX, b.name);
                if multi {
                    format!("{base}/{c}")
                } else {
                    base
                }
            })
        })
        .collect()
}

#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
pub struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: scenario::Scenario::from_toml(text).map_err(py_err)? })
    }

    /// A single-column built-in, e.g. `paper/nonlinear-fig/gamma-0.1`.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let mut cols = scenario::builtin(name).map_err(py_err)?;
        if cols.len() != 1 {
            return Err(PyValueError::new_err(format!("`{name}` has several columns; pick one as {name}/<column>")));
        }
        Ok(Self { inner: cols.remove(0).1 })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }
    #[getter]
    fn gamma_s(&self) -> f64 {
        self.inner.channel.gamma_s
    }
    #[setter]
    fn set_gamma_s(&mut self, gamma: f64) {
        self.inner.channel.gamma_s = gamma;
    }

    /// Packet size the engine will deploy for this scenario.
    fn g_bits(&self) -> PyResult<u32> {
        Ok(engine::prepare(&self.inner).map_err(py_err)?.g_bits())
    }

    fn run(&self, py: Python<'_>) -> PyResult<PyTrace> {
        let sc = self.inner.clone();
        let trace = py.detach(move || engine::run(&sc)).map_err(py_err)?;
        Ok(PyTrace { summary: RunSummary::new(&trace, &self.inner), trace })
    }

    /// Sweep the delay bound; returns the sweep CSV text.
    #[pyo3(signature = (gammas, seeds=10, master_seed=1))]
    fn sweep_csv(&self, py: Python<'_>, gammas: Vec<f64>, seeds: usize, master_seed: u64) -> PyResult<String> {
        let sc = self.inner.clone();
        let outcomes = py.detach(move || sweep::sweep(&sc, &gammas, &sweep::sweep_seeds(master_seed, seeds.max(1))));
        let mut buf = Vec::new();
        output::write_sweep_csv(&outcomes, &mut buf).map_err(py_err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyclass(name = "Trace", frozen)]
pub struct PyTrace {
    trace: SimTrace,
    summary: RunSummary,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn g_bits(&self) -> u32 {
        self.trace.info.g_bits()
    }
    #[getter]
    fn rate(&self) -> Option<f64> {
        self.summary.rate.rate
    }
    #[getter]
    fn violations(&self) -> usize {
        self.summary.envelopes.total_violations
    }
    #[getter]
    fn aborted(&self) -> bool {
        self.trace.abort.is_some()
    }
    #[getter]
    fn sends(&self) -> usize {
        self.trace.events.len()
    }
    /// `(t, z)` for every recorded step.
    fn estimation_error(&self) -> (Vec<f64>, Vec<f64>) {
        self.trace.steps.iter().map(|r| (self.trace.time(r.step), r.z)).unzip()
    }
    fn trace_csv(&self) -> PyResult<String> {
        let b = output::trace_csv_bytes(&self.trace).map_err(py_err)?;
        String::from_utf8(b).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
    fn events_csv(&self) -> PyResult<String> {
        let b = output::events_csv_bytes(&self.trace).map_err(py_err)?;
        String::from_utf8(b).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
    fn passed(&self) -> bool {
        self.summary.passed()
    }
}

#[pymodule]
fn etcsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDiagonalSystem>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(diagonalize, m)?)?;
    m.add_function(wrap_pyfunction!(linear_packet_size, m)?)?;
    m.add_function(wrap_pyfunction!(nonlinear_packet_size, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_rate_linear, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_scenarios, m)?)?;
    Ok(())
}
