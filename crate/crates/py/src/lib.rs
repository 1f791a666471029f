use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use sbcert::barrier::{self, SafetyGeometry, Shape};
use sbcert::flatness::{self, FlatSample, VehicleParams};
use sbcert::lindyn::{self, IntegratorState, Vec3};
use sbcert::pipeline::{self, ScenarioConfig, SimulationTrace};
use sbcert::qp::{self, RectificationProblem};
use sbcert::{archive, scenario, verify};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes through `json.loads` so Python gets plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: for<'de> serde::Deserialize<'de>>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn state(q: [f64; 12]) -> IntegratorState {
    IntegratorState::from_array(&q)
}

fn geometry(d_s: f64, c: f64, n: Option<u32>) -> PyResult<SafetyGeometry> {
    let geom = SafetyGeometry {
        d_s,
        c,
        shape: n.map_or(Shape::Rectangle, |n| Shape::Cylinder { n }),
    };
    geom.validate().map_err(value_error)?;
    Ok(geom)
}

/// Gain row `k` (ascending coefficients of `prod (s + p_i)`).
#[pyfunction]
fn place_poles(poles: [f64; 4]) -> PyResult<[f64; 4]> {
    Ok(lindyn::place_poles(poles).map_err(value_error)?.k)
}

/// One forward-Euler step of `(r, r', r'', r''')` under snap `v`.
#[pyfunction]
#[pyo3(signature = (q, v, dt = lindyn::DEFAULT_DT))]
fn euler_step(q: [f64; 12], v: [f64; 3], dt: f64) -> PyResult<[f64; 12]> {
    let next = lindyn::euler_step(&state(q), &Vec3::from(v), dt).map_err(value_error)?;
    Ok(next.to_array())
}

#[pyfunction]
#[pyo3(signature = (qi, qj, d_s = 0.25, c = 2.0, n = None))]
fn barrier_value(qi: [f64; 12], qj: [f64; 12], d_s: f64, c: f64, n: Option<u32>) -> PyResult<f64> {
    Ok(barrier::barrier_value(&state(qi), &state(qj), &geometry(d_s, c, n)?))
}

/// Certificate rows for a team of states (`12` floats each).
#[pyfunction]
#[pyo3(signature = (states, poles = lindyn::DEFAULT_POLES, d_s = 0.25, c = 2.0, n = None))]
fn certificates<'py>(
    py: Python<'py>,
    states: Vec<[f64; 12]>,
    poles: [f64; 4],
    d_s: f64,
    c: f64,
    n: Option<u32>,
) -> PyResult<Bound<'py, PyAny>> {
    let states: Vec<IntegratorState> = states.into_iter().map(state).collect();
    let gains = lindyn::place_poles(poles).map_err(value_error)?;
    let rows = barrier::assemble_certificates(&states, &geometry(d_s, c, n)?, &gains).map_err(value_error)?;
    to_py(py, &rows)
}

/// Minimally invasive snap for `nominal` under the given certificate rows.
#[pyfunction]
#[pyo3(signature = (nominal, constraints, snap_bound = None))]
fn rectify<'py>(
    py: Python<'py>,
    nominal: Vec<f64>,
    constraints: &Bound<'py, PyAny>,
    snap_bound: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = nominal.len() / 3;
    let problem = RectificationProblem {
        nominal,
        constraints: from_py(constraints)?,
        snap_bounds: snap_bound.map(|a| vec![a; m]),
    };
    let solved = qp::solve(&problem).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &solved)
}

/// Attitude, body rates, thrust and torque of a flat sample given as five
/// 3-vectors `(r, r', r'', r''', r'''')`.
#[pyfunction]
#[pyo3(signature = (derivatives, vehicle = None))]
fn flat_to_input<'py>(
    py: Python<'py>,
    derivatives: [[f64; 3]; 5],
    vehicle: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let params: VehicleParams = match vehicle {
        Some(v) => from_py(v)?,
        None => VehicleParams::default(),
    };
    params.validate().map_err(value_error)?;
    let sample = FlatSample::from_derivatives(derivatives.map(Vec3::from));
    let st = flatness::flat_to_state(&sample, &params).map_err(value_error)?;
    let u = flatness::flat_to_input(&sample, &params).map_err(value_error)?;
    let doc = serde_json::json!({
        "roll": st.roll,
        "pitch": st.pitch,
        "yaw": st.yaw,
        "tilt_deg": st.tilt.to_degrees(),
        "body_rates": st.body_rates,
        "thrust": u.thrust,
        "thrust_ratio": u.thrust / params.hover_thrust(),
        "torque": u.torque,
    });
    to_py(py, &doc)
}

/// Randomized verification report.
#[pyfunction]
#[pyo3(signature = (seed = 0, trials = 1000))]
fn run_verify<'py>(py: Python<'py>, seed: u64, trials: usize) -> PyResult<Bound<'py, PyAny>> {
    if trials == 0 {
        return Err(PyValueError::new_err("trials must be at least 1"));
    }
    let report = py.detach(|| verify::run(seed, trials));
    to_py(py, &report)
}

#[pyfunction]
fn list_scenarios() -> Vec<&'static str> {
    scenario::BUILTIN_NAMES.to_vec()
}

/// A validated scenario configuration.
#[pyclass(name = "Scenario", module = "sbcert", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    config: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Built-in name or path to a JSON file.
    #[new]
    fn new(name_or_path: &str) -> PyResult<Self> {
        Ok(Self {
            config: scenario::load(name_or_path).map_err(value_error)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            config: scenario::from_json(text).map_err(value_error)?,
        })
    }

    #[staticmethod]
    fn random(seed: u64, vehicles: usize) -> PyResult<Self> {
        if vehicles == 0 {
            return Err(PyValueError::new_err("need at least one vehicle"));
        }
        Ok(Self {
            config: scenario::random_scenario(seed, vehicles),
        })
    }

    /// Copy with `key=value` overrides applied, e.g. `"k_s=100"`.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            config: scenario::apply_overrides(&self.config, &overrides).map_err(value_error)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.config).map_err(value_error)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.config.name
    }

    #[getter]
    fn vehicle_count(&self) -> usize {
        self.config.vehicle_count()
    }

    #[getter]
    fn k_s(&self) -> f64 {
        self.config.k_s
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Runs the closed loop once at `k_s` (the scenario's own by default).
    #[pyo3(signature = (k_s = None))]
    fn simulate(&self, py: Python<'_>, k_s: Option<f64>) -> PyResult<PyTrace> {
        let k_s = k_s.unwrap_or(self.config.k_s);
        let config = self.config.clone();
        let trace = py
            .detach(|| pipeline::simulate(&config, k_s))
            .map_err(|f| PyRuntimeError::new_err(f.to_string()))?;
        Ok(PyTrace { config, trace })
    }

    /// Full run with audit and retuning; writes an archive when `out` is given.
    #[pyo3(signature = (out = None))]
    fn run<'py>(&self, py: Python<'py>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let config = self.config.clone();
        let outcome = py
            .detach(|| pipeline::run_scenario(&config))
            .map_err(|f| PyRuntimeError::new_err(f.to_string()))?;
        if let Some(dir) = out {
            archive::write_archive(&dir, &config, &outcome).map_err(value_error)?;
        }
        to_py(py, &archive::RunSummary::from_outcome(&outcome))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, vehicles={}, duration={}, k_s={})",
            self.config.name,
            self.config.vehicle_count(),
            self.config.duration,
            self.config.k_s
        )
    }
}

/// Recorded closed-loop run.
#[pyclass(name = "Trace", module = "sbcert", frozen)]
struct PyTrace {
    config: ScenarioConfig,
    trace: SimulationTrace,
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.trace.steps.len()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.trace.steps.iter().map(|s| s.t).collect()
    }

    #[getter]
    fn min_h(&self) -> f64 {
        self.trace.safety(&self.config.geometry).min_h
    }

    #[getter]
    fn safe(&self) -> bool {
        self.trace.safety(&self.config.geometry).safe()
    }

    #[getter]
    fn max_kkt_residual(&self) -> f64 {
        self.trace.max_kkt_residual()
    }

    fn positions(&self, vehicle: usize) -> PyResult<Vec<[f64; 3]>> {
        self.check_vehicle(vehicle)?;
        Ok(self.trace.steps.iter().map(|s| s.vehicles[vehicle].state.r.into()).collect())
    }

    fn nominal(&self, vehicle: usize) -> PyResult<Vec<[f64; 3]>> {
        self.check_vehicle(vehicle)?;
        Ok(self.trace.steps.iter().map(|s| s.vehicles[vehicle].nominal.into()).collect())
    }

    fn rectified(&self, vehicle: usize) -> PyResult<Vec<[f64; 3]>> {
        self.check_vehicle(vehicle)?;
        Ok(self.trace.steps.iter().map(|s| s.vehicles[vehicle].rectified.into()).collect())
    }

    /// Barrier value of pair `(i, j)` at every step.
    fn barrier(&self, i: usize, j: usize) -> PyResult<Vec<f64>> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.check_vehicle(j)?;
        if i == j {
            return Err(PyValueError::new_err("pair needs two distinct vehicles"));
        }
        Ok(self
            .trace
            .steps
            .iter()
            .map(|s| s.pairs.iter().find(|p| p.i == i && p.j == j).map_or(f64::NAN, |p| p.h))
            .collect())
    }

    /// Actuator audit, under the scenario limits unless overridden.
    #[pyo3(signature = (max_tilt_deg = None, max_thrust_ratio = None))]
    fn audit<'py>(
        &self,
        py: Python<'py>,
        max_tilt_deg: Option<f64>,
        max_thrust_ratio: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut limits = self.config.limits;
        if let Some(t) = max_tilt_deg {
            limits.max_tilt_deg = t;
        }
        if let Some(r) = max_thrust_ratio {
            limits.max_thrust_ratio = r;
        }
        limits.validate().map_err(value_error)?;
        to_py(py, &pipeline::audit_trace(&self.trace, &self.config.vehicle, &limits))
    }
}

impl PyTrace {
    fn check_vehicle(&self, k: usize) -> PyResult<()> {
        if k < self.trace.vehicle_count() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "vehicle {k} out of range for {} vehicles",
                self.trace.vehicle_count()
            )))
        }
    }
}

#[pymodule]
#[pyo3(name = "sbcert")]
fn sbcert_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(place_poles, m)?)?;
    m.add_function(wrap_pyfunction!(euler_step, m)?)?;
    m.add_function(wrap_pyfunction!(barrier_value, m)?)?;
    m.add_function(wrap_pyfunction!(certificates, m)?)?;
    m.add_function(wrap_pyfunction!(rectify, m)?)?;
    m.add_function(wrap_pyfunction!(flat_to_input, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
