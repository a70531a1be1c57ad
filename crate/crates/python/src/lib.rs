//! Python bindings. Structured results come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use gfc_stability::equilibrium;
use gfc_stability::model::{self, MachineParams};
use gfc_stability::scenario::{self, ScenarioConfig, ScenarioRun};
use gfc_stability::sim::{self, Trajectory};
use gfc_stability::{stab_a, stab_b};

fn err(e: gfc_stability::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

/// dc-side converter parameters in SI units. Defaults to the nominal values.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct ConverterParams {
    inner: model::ConverterParams,
}

#[pymethods]
impl ConverterParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut c = model::ConverterParams::nominal();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let k: String = k.extract()?;
                let v: f64 = v.extract()?;
                match k.as_str() {
                    "c_c" => c.c_c = v,
                    "g_c" => c.g_c = v,
                    "k_c" => c.k_c = v,
                    "i_dc_max" => c.i_dc_max = v,
                    "v_dc_star" => c.v_dc_star = v,
                    "p_c_star" => c.p_c_star = v,
                    "droop_gain_a" => c.droop_gain_a = v,
                    "k_m" => c.k_m = v,
                    _ => return Err(PyValueError::new_err(format!("unknown converter parameter `{k}`"))),
                }
            }
        }
        c.validate().map_err(err)?;
        Ok(ConverterParams { inner: c })
    }

    #[getter]
    fn c_c(&self) -> f64 {
        self.inner.c_c
    }
    #[getter]
    fn g_c(&self) -> f64 {
        self.inner.g_c
    }
    #[getter]
    fn k_c(&self) -> f64 {
        self.inner.k_c
    }
    #[getter]
    fn i_dc_max(&self) -> f64 {
        self.inner.i_dc_max
    }
    #[getter]
    fn v_dc_star(&self) -> f64 {
        self.inner.v_dc_star
    }
    #[getter]
    fn p_c_star(&self) -> f64 {
        self.inner.p_c_star
    }

    fn x_m(&self) -> f64 {
        self.inner.x_m()
    }
    fn x_tilde_star(&self) -> f64 {
        self.inner.x_tilde_star()
    }
    fn p_c_max(&self) -> f64 {
        self.inner.p_c_max()
    }
    fn derived(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &model::derived_quantities(&self.inner))
    }
    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn converter(c: Option<ConverterParams>) -> model::ConverterParams {
    c.map_or_else(model::ConverterParams::nominal, |c| c.inner)
}

/// Sampled trajectory of one run.
#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.clone()
    }
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.times()
    }
    #[getter]
    fn p_c(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.p_c).collect()
    }
    #[getter]
    fn termination(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.termination)
    }
    fn series(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.series(name).ok_or_else(|| PyValueError::new_err(format!("no column `{name}`")))
    }
    fn to_csv(&self) -> String {
        scenario::to_csv(&self.inner)
    }
    fn to_svg(&self, title: &str) -> String {
        scenario::to_svg(&self.inner, title)
    }
    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }
}

/// A scenario: model, parameters, initial state and events.
#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Parse a scenario file.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyScenario { inner: scenario::parse_config(text).map_err(err)? })
    }

    /// Built-in catalog entry.
    #[staticmethod]
    fn catalog(id: &str) -> PyResult<Self> {
        scenario::catalog_entry(id)
            .map(|inner| PyScenario { inner })
            .ok_or_else(|| PyValueError::new_err(format!("no catalog scenario `{id}`")))
    }

    fn to_toml(&self) -> String {
        scenario::emit_config(&self.inner)
    }
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }
    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model.name()
    }
    #[getter]
    fn columns(&self) -> Vec<&'static str> {
        self.inner.columns().to_vec()
    }
    #[getter]
    fn tol(&self) -> f64 {
        self.inner.tol
    }
    #[setter]
    fn set_tol(&mut self, tol: f64) -> PyResult<()> {
        let mut c = self.inner.clone();
        c.tol = tol;
        c.validate().map_err(err)?;
        self.inner = c;
        Ok(())
    }

    fn certify(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &scenario::certify(&self.inner).map_err(err)?)
    }

    fn run(&self, py: Python<'_>) -> PyResult<Run> {
        let cfg = self.inner.clone();
        let r = py.detach(move || scenario::run_scenario(&cfg)).map_err(err)?;
        Ok(Run::from(r))
    }
}

/// Result of `Scenario.run`.
#[pyclass(frozen)]
struct Run {
    run: ScenarioRun,
}

impl From<ScenarioRun> for Run {
    fn from(run: ScenarioRun) -> Self {
        Run { run }
    }
}

#[pymethods]
impl Run {
    /// `converged`, `collapsed`, `diverged` or `inconclusive`.
    #[getter]
    fn outcome(&self) -> &'static str {
        self.run.outcome.label()
    }
    #[getter]
    fn row(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.run.row)
    }
    #[getter]
    fn certification(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.run.certification)
    }
    #[getter]
    fn trajectory(&self) -> PyTrajectory {
        PyTrajectory { inner: self.run.trajectory.clone() }
    }
}

/// Equilibria of the dc link at converter power `u_bar` (W).
#[pyfunction]
#[pyo3(signature = (u_bar, converter_params=None))]
fn solve_equilibria(py: Python<'_>, u_bar: f64, converter_params: Option<ConverterParams>) -> PyResult<Py<PyAny>> {
    to_py(py, &equilibrium::solve_equilibria(u_bar, &converter(converter_params)).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (u_bar, converter_params=None))]
fn roa_certificate(py: Python<'_>, u_bar: f64, converter_params: Option<ConverterParams>) -> PyResult<Py<PyAny>> {
    to_py(py, &stab_a::roa_certificate(u_bar, &converter(converter_params)).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (u_bar, converter_params=None))]
fn exp_rate(py: Python<'_>, u_bar: f64, converter_params: Option<ConverterParams>) -> PyResult<Py<PyAny>> {
    to_py(py, &stab_a::exp_rate(u_bar, &converter(converter_params)).map_err(err)?)
}

/// L_p gain bound; `p = float("inf")` for the sup norm.
#[pyfunction]
#[pyo3(signature = (u_bar, p=f64::INFINITY, y0=0.0, v_sup=0.0, converter_params=None, r=None, r_v=None))]
#[allow(clippy::too_many_arguments)]
fn lp_bound(
    py: Python<'_>,
    u_bar: f64,
    p: f64,
    y0: f64,
    v_sup: f64,
    converter_params: Option<ConverterParams>,
    r: Option<f64>,
    r_v: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let opts = stab_a::LpOptions { r, r_v };
    to_py(py, &stab_a::lp_bound(u_bar, &converter(converter_params), p, y0, v_sup, opts).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (u_bar, x_bar_1, converter_params=None))]
fn chetaev_instability(
    py: Python<'_>,
    u_bar: f64,
    x_bar_1: f64,
    converter_params: Option<ConverterParams>,
) -> PyResult<Py<PyAny>> {
    to_py(py, &stab_a::chetaev_instability(u_bar, &converter(converter_params), x_bar_1).map_err(err)?)
}

/// Class-B ISS gains for the nominal machine. Returns the certificate and
/// gamma(|w|) for each requested `w`.
#[pyfunction]
#[pyo3(signature = (theta=0.9, w=Vec::new()))]
fn iss_gains(py: Python<'_>, theta: f64, w: Vec<f64>) -> PyResult<(Py<PyAny>, Vec<f64>)> {
    let sys = model::SystemParams::nominal();
    let mp: MachineParams = sys.machine;
    let cert = stab_b::iss_gains(theta, &mp, sys.matching_droop_b(), sys.p_c_max_dev_pu()).map_err(err)?;
    let g = w.iter().map(|&x| cert.gamma(x.abs())).collect::<Result<Vec<_>, _>>().map_err(err)?;
    Ok((to_py(py, &cert)?, g))
}

/// Bisection for the class-A ROA boundary at converter power `u_bar` (W).
#[pyfunction]
#[pyo3(signature = (u_bar, lo, hi, tol_v=0.01, tol=1e-9, converter_params=None))]
fn class_a_roa_boundary(
    py: Python<'_>,
    u_bar: f64,
    lo: f64,
    hi: f64,
    tol_v: f64,
    tol: f64,
    converter_params: Option<ConverterParams>,
) -> PyResult<f64> {
    let cp = converter(converter_params);
    py.detach(move || sim::class_a_roa_boundary(&cp, u_bar, (lo, hi), tol_v, tol)).map_err(err)
}

#[pyfunction]
fn catalog_ids() -> Vec<String> {
    scenario::catalog().into_iter().map(|c| c.id).collect()
}

/// Run scenarios (the whole catalog by default). Returns the text report,
/// the report as a dict, and the exit status.
#[pyfunction]
#[pyo3(signature = (scenarios=None))]
fn run_batch(py: Python<'_>, scenarios: Option<Vec<PyScenario>>) -> PyResult<(String, Py<PyAny>, i32)> {
    let cfgs: Vec<ScenarioConfig> = match scenarios {
        Some(s) => s.into_iter().map(|s| s.inner).collect(),
        None => scenario::catalog(),
    };
    let (_, report) = py.detach(move || scenario::run_batch(&cfgs)).map_err(err)?;
    let (text, _, code) = scenario::emit_report(&report);
    Ok((text, to_py(py, &report)?, code))
}

#[pymodule]
pub fn gfcstab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ConverterParams>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<Run>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(solve_equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(roa_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(exp_rate, m)?)?;
    m.add_function(wrap_pyfunction!(lp_bound, m)?)?;
    m.add_function(wrap_pyfunction!(chetaev_instability, m)?)?;
    m.add_function(wrap_pyfunction!(iss_gains, m)?)?;
    m.add_function(wrap_pyfunction!(class_a_roa_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(catalog_ids, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_converter_is_nominal() {
        assert_eq!(converter(None), model::ConverterParams::nominal());
        let custom = model::ConverterParams { i_dc_max: 80.0, ..model::ConverterParams::nominal() };
        assert_eq!(converter(Some(ConverterParams { inner: custom })).i_dc_max, 80.0);
    }
}
