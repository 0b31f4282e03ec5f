//! Python bindings. Fields cross the boundary as flat lists of `(u₁, u₂)`
//! pairs in row-major node order; reports come back as dicts.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cgl_periodic::cauchy::{self, EigenmodeSource, Form, Order, SchemeConfig, ZeroSource};
use cgl_periodic::field::{self, CField, Grid};
use cgl_periodic::io::{self as cio, config};
use cgl_periodic::params;
use cgl_periodic::periodic::{self, PeriodicMethod};
use cgl_periodic::proximal::{self, PowerTerm, ResolventConfig};
use cgl_periodic::runner::{self, Command};
use cgl_periodic::verification;
use cgl_periodic::CglError;

fn err(e: CglError) -> PyErr {
    match e {
        CglError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

#[pyclass(name = "Params", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: params::Params,
}

#[pymethods]
impl PyParams {
    /// Defaults are the standard example.
    #[new]
    #[pyo3(signature = (lambda_=1.0, kappa=1.0, alpha=1.0, beta=1.0, gamma=0.0, q=4.0, r=6.0, eps=0.01, mu=0.0, period=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        lambda_: f64,
        kappa: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        q: f64,
        r: f64,
        eps: f64,
        mu: f64,
        period: f64,
    ) -> Self {
        PyParams { inner: params::Params { lambda: lambda_, kappa, alpha, beta, gamma, q, r, eps, mu, period } }
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }
    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }
    #[getter]
    fn q(&self) -> f64 {
        self.inner.q
    }
    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }
    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }
    #[getter]
    fn period(&self) -> f64 {
        self.inner.period
    }

    fn with_eps(&self, eps: f64) -> Self {
        PyParams { inner: self.inner.with_eps(eps) }
    }

    /// Strength exponent, region flags and warnings; raises on invalid parameters.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &params::validate_params(&self.inner).map_err(err)?)
    }

    fn admissible_pair<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &params::find_admissible_pair(&self.inner).map_err(err)?)
    }

    fn constants<'py>(&self, py: Python<'py>, norm_f: f64, measure: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &verification::constants_report(&self.inner, norm_f, measure).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Field", from_py_object)]
#[derive(Clone)]
struct PyField {
    inner: CField,
}

fn grid(n: Vec<usize>, lengths: Vec<f64>) -> PyResult<Arc<Grid>> {
    Ok(Arc::new(Grid::new(&n, &lengths).map_err(err)?))
}

#[pymethods]
impl PyField {
    /// `data` holds `2·nodes` values `u₁, u₂` per node.
    #[new]
    fn new(n: Vec<usize>, lengths: Vec<f64>, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyField { inner: CField::from_data(grid(n, lengths)?, data).map_err(err)? })
    }

    #[staticmethod]
    fn zeros(n: Vec<usize>, lengths: Vec<f64>) -> PyResult<Self> {
        Ok(PyField { inner: CField::zeros(grid(n, lengths)?) })
    }

    /// Random combination of sine modes up to `kmax` per axis.
    #[staticmethod]
    fn random_smooth(n: Vec<usize>, lengths: Vec<f64>, kmax: usize, amplitude: f64, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PyField { inner: CField::random_smooth(grid(n, lengths)?, kmax, amplitude, &mut rng) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyField { inner: cio::read_cglf(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        cio::write_cglf(&path, &self.inner).map_err(err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        cio::encode_cglf(&self.inner)
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(PyField { inner: cio::decode_cglf(&data).map_err(err)? })
    }

    fn to_csv(&self) -> String {
        cio::field_csv(&self.inner)
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.grid().n().to_vec()
    }

    #[getter]
    fn lengths(&self) -> Vec<f64> {
        self.inner.grid().lengths().to_vec()
    }

    fn norm2(&self) -> f64 {
        field::norm2(&self.inner)
    }

    fn inner_product(&self, other: &PyField) -> PyResult<f64> {
        field::inner(&self.inner, &other.inner).map_err(err)
    }

    fn phi(&self) -> f64 {
        field::phi(&self.inner)
    }

    fn psi(&self, p: f64) -> f64 {
        field::psi(&self.inner, p)
    }

    fn dphi(&self) -> Self {
        PyField { inner: field::dphi(&self.inner) }
    }

    fn dpsi(&self, p: f64) -> Self {
        PyField { inner: field::dpsi(&self.inner, p) }
    }

    fn times_i(&self) -> Self {
        PyField { inner: field::apply_i(&self.inner) }
    }

    fn __sub__(&self, other: &PyField) -> PyResult<Self> {
        self.inner.check_grid(&other.inner).map_err(err)?;
        Ok(PyField { inner: &self.inner - &other.inner })
    }

    fn __add__(&self, other: &PyField) -> PyResult<Self> {
        self.inner.check_grid(&other.inner).map_err(err)?;
        Ok(PyField { inner: &self.inner + &other.inner })
    }

    fn __mul__(&self, s: f64) -> Self {
        PyField { inner: self.inner.scale(s) }
    }

    fn __eq__(&self, other: &PyField) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Field(shape={:?}, lengths={:?})", self.inner.grid().n(), self.inner.grid().lengths())
    }
}

#[pyfunction]
fn strength_exponent(q: f64) -> PyResult<f64> {
    params::strength_exponent(q).map_err(err)
}

#[pyfunction]
fn classify_region_point<'py>(py: Python<'py>, x: f64, y: f64, r: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &params::classify_region_point(x, y, r))
}

/// `J = (1 + μ∂φ + μ·skew·I∂φ)⁻¹`.
#[pyfunction]
#[pyo3(signature = (u, mu, skew=0.0))]
fn resolvent_phi(u: &PyField, mu: f64, skew: f64) -> PyResult<PyField> {
    let cfg = ResolventConfig::new(mu).map_err(err)?;
    Ok(PyField { inner: proximal::resolvent_phi(&u.inner, skew, &cfg).map_err(err)? })
}

/// Resolvent of `Σ cᵢ∂ψ_{pᵢ}`, terms given as `(coefficient, exponent)` pairs.
#[pyfunction]
fn resolvent_power_sum(u: &PyField, mu: f64, terms: Vec<(f64, f64)>) -> PyResult<PyField> {
    let terms: Vec<PowerTerm> = terms.into_iter().map(|(c, p)| PowerTerm::new(c, p)).collect();
    Ok(PyField { inner: proximal::resolvent_power_sum(&u.inner, mu, &terms).map_err(err)? })
}

#[pyfunction]
fn check_identities<'py>(py: Python<'py>, u: &PyField, q: f64, r: f64, mu: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &verification::check_identities(&u.inner, q, r, mu).map_err(err)?)
}

#[pyfunction]
fn check_key_inequality<'py>(py: Python<'py>, u: &PyField, q: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &verification::check_key_inequality(&u.inner, q).map_err(err)?)
}

#[pyfunction]
fn check_moreau<'py>(py: Python<'py>, u: &PyField, mu: f64, p: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &verification::check_moreau(&u.inner, mu, p).map_err(err)?)
}

fn scheme(tau: f64, order: &str, form: &str, p: &params::Params) -> PyResult<SchemeConfig> {
    let order = match order {
        "lie" => Order::Lie,
        "strang" => Order::Strang,
        o => return Err(PyValueError::new_err(format!("order must be 'lie' or 'strang', got '{o}'"))),
    };
    let form = match form {
        "ivp" => Form::Ivp,
        "ivp_mu" => Form::IvpMu(p.mu),
        "full" => Form::Full,
        f => return Err(PyValueError::new_err(format!("form must be 'ivp', 'ivp_mu' or 'full', got '{f}'"))),
    };
    Ok(SchemeConfig::new(tau, order, form))
}

/// Integrates one period under eigenmode forcing; returns the final state
/// and the stored diagnostics.
#[pyfunction]
#[pyo3(signature = (u0, params, tau, order="lie", form="ivp", mode=None, amplitude=0.0, omega=0.0))]
#[allow(clippy::too_many_arguments)]
fn solve_cauchy<'py>(
    py: Python<'py>,
    u0: &PyField,
    params: &PyParams,
    tau: f64,
    order: &str,
    form: &str,
    mode: Option<Vec<usize>>,
    amplitude: f64,
    omega: f64,
) -> PyResult<(PyField, Bound<'py, PyDict>)> {
    let p = &params.inner;
    let cfg = scheme(tau, order, form, p)?;
    let mode = mode.unwrap_or_else(|| vec![1; u0.inner.grid().dim()]);
    let f = EigenmodeSource { mode, amplitude, omega, phase: 0.0 };
    let traj = py
        .detach(|| cauchy::solve_cauchy(&u0.inner, p.period, p, &cfg, &f, &ZeroSource))
        .map_err(err)?;
    let residual = cauchy::pde_residual(&traj, p, cfg.form, &f, &ZeroSource).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("times", traj.times.clone())?;
    d.set_item("norm2", traj.diagnostics.iter().map(|r| r.norm2).collect::<Vec<_>>())?;
    d.set_item("pde_residual", residual)?;
    Ok((PyField { inner: traj.last().clone() }, d))
}

/// Periodic solve driven by a configuration text; `method` is "outer" or "direct".
#[pyfunction]
#[pyo3(signature = (config_text="", method=None))]
fn find_periodic<'py>(py: Python<'py>, config_text: &str, method: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config::parse_config(config_text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let method = match method {
        None => cfg.solver.method,
        Some("outer") => PeriodicMethod::Outer,
        Some("direct") => PeriodicMethod::Direct,
        Some(m) => return Err(PyValueError::new_err(format!("method must be 'outer' or 'direct', got '{m}'"))),
    };
    let g = Arc::new(cfg.grid().map_err(err)?);
    let res = py
        .detach(|| -> cgl_periodic::Result<_> {
            let f = runner::build_forcing(&cfg, &g)?;
            let s = periodic::OuterOptions::new(
                cfg.solver.theta,
                cfg.solver.outer_tol,
                cfg.solver.outer_maxit,
                cfg.solver.poincare_tol,
                cfg.solver.poincare_maxit,
            );
            let start = runner::build_initial(&cfg, &g)?;
            match method {
                PeriodicMethod::Outer => {
                    let warm = periodic::WarmStart { u0: Some(start), h: None };
                    periodic::outer_fixed_point(&cfg.params, f.as_ref(), &g, &cfg.scheme, &s, &warm)
                }
                PeriodicMethod::Direct => periodic::direct_poincare(
                    &cfg.params,
                    f.as_ref(),
                    &cfg.scheme.with_form(Form::Full),
                    &s.outer,
                    &start,
                ),
            }
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("u0", PyField { inner: res.u0.clone() })?;
    d.set_item("converged", res.converged)?;
    d.set_item("periodicity_residual", res.periodicity_residual)?;
    d.set_item("pde_residual", res.pde_residual)?;
    d.set_item("h_residual", res.h_residual)?;
    d.set_item("iterations", res.history.len())?;
    Ok(d)
}

/// Runs a CLI command (e.g. "verify-params") and returns `(exit_code, summary)`.
#[pyfunction]
#[pyo3(signature = (command, output_dir, config_text=""))]
fn run(py: Python<'_>, command: &str, output_dir: PathBuf, config_text: &str) -> PyResult<(i32, String)> {
    let cmd: Command = command.parse().map_err(err)?;
    let cfg = config::parse_config(config_text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = py.detach(|| runner::run(cmd, &cfg, &output_dir));
    match out {
        Ok(o) => Ok((o.exit_code, o.summary)),
        Err(e) => Ok((runner::EXIT_ERROR, e.to_string())),
    }
}

#[pymodule]
pub fn cglpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(strength_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(classify_region_point, m)?)?;
    m.add_function(wrap_pyfunction!(resolvent_phi, m)?)?;
    m.add_function(wrap_pyfunction!(resolvent_power_sum, m)?)?;
    m.add_function(wrap_pyfunction!(check_identities, m)?)?;
    m.add_function(wrap_pyfunction!(check_key_inequality, m)?)?;
    m.add_function(wrap_pyfunction!(check_moreau, m)?)?;
    m.add_function(wrap_pyfunction!(solve_cauchy, m)?)?;
    m.add_function(wrap_pyfunction!(find_periodic, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
