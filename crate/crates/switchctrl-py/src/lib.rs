//! Python bindings for the switchctrl toolkit.
//!
//! Exposes the system model plus the three analyses (invariance ladder,
//! small-ε Riccati limit, Monte-Carlo simulation checks) as a compiled
//! extension module. Input problems raise `ValueError`, numerical
//! failures raise `RuntimeError`, matching the CLI's exit-code split.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use switchctrl::cli::CliError;
use switchctrl::fixtures::{fixture, FIXTURE_NAMES};
use switchctrl::invariance::{approx_ctrl_sufficient, approx_null_verdict, v_ladder};
use switchctrl::metric::{k0_estimate, metric, EpsilonSchedule, K0Diagnostics};
use switchctrl::model::{parse_system, SwitchSystem};
use switchctrl::riccati::{solve, LevelMMode, RiccatiParams};
use switchctrl::sim::{
    duality_check, mc_cost_dual, sample_mode_path, simulate_primal, LinearFeedback,
    LinearInjection, ZeroPolicy,
};
use switchctrl::subspace::{Matrix, Vector};

fn to_py_err(err: impl Into<CliError>) -> PyErr {
    match err.into() {
        CliError::Input(message) => PyValueError::new_err(message),
        CliError::Numerical(message) => PyRuntimeError::new_err(message),
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn vector_from(values: Vec<f64>, expected: usize, name: &str) -> PyResult<Vector> {
    if values.len() != expected {
        return Err(PyValueError::new_err(format!(
            "{name} needs length {expected}, got {}",
            values.len()
        )));
    }
    Ok(Vector::from_column_slice(&values))
}

fn parse_mode(text: &str) -> PyResult<LevelMMode> {
    text.parse::<LevelMMode>()
        .map_err(|e| PyValueError::new_err(format!("level_m_mode: {e}")))
}

/// A validated finite-mode switch system.
#[pyclass(frozen, name = "System")]
struct PySystem {
    inner: SwitchSystem,
}

#[pymethods]
impl PySystem {
    /// Load one of the built-in reference systems.
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        let inner = fixture(name).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Parse and validate a JSON system description.
    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        let inner = parse_system(document).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Names accepted by `System.fixture`.
    #[staticmethod]
    fn fixture_names() -> Vec<String> {
        FIXTURE_NAMES.iter().map(|s| s.to_string()).collect()
    }

    /// A copy with the initial mode, horizon, or jump cap replaced.
    #[pyo3(signature = (gamma0=None, horizon=None, jump_cap=None))]
    fn with_overrides(
        &self,
        gamma0: Option<&str>,
        horizon: Option<f64>,
        jump_cap: Option<usize>,
    ) -> PyResult<Self> {
        let inner = self
            .inner
            .with_overrides(gamma0, horizon, jump_cap)
            .map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    #[getter]
    fn mode_labels(&self) -> Vec<String> {
        self.inner.mode_labels().to_vec()
    }

    #[getter]
    fn initial_mode(&self) -> String {
        self.inner.mode_label(self.inner.gamma0()).to_string()
    }

    #[getter]
    fn jump_cap(&self) -> usize {
        self.inner.jump_cap()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    /// Canonical JSON document of the validated system.
    fn config_json(&self) -> String {
        self.inner.to_config_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "System(modes={:?}, N={}, d={}, M={}, T={}, gamma0={:?})",
            self.inner.mode_labels(),
            self.inner.state_dim(),
            self.inner.control_dim(),
            self.inner.jump_cap(),
            self.inner.horizon(),
            self.inner.mode_label(self.inner.gamma0()),
        )
    }

    /// Dimensions of the invariance ladder, indexed `[level][mode]`.
    fn v_ladder_dims(&self) -> PyResult<Vec<Vec<usize>>> {
        Ok(v_ladder(&self.inner).map_err(to_py_err)?.dims())
    }

    /// Decide approximate null-controllability from the initial mode.
    fn approx_null_controllable(&self) -> PyResult<bool> {
        approx_null_verdict(&self.inner).map_err(to_py_err)
    }

    /// One-sided sufficient test for approximate controllability:
    /// `"holds"` or `"inconclusive"`.
    fn approx_ctrl_sufficient(&self) -> PyResult<String> {
        Ok(approx_ctrl_sufficient(&self.inner)
            .map_err(to_py_err)?
            .as_str()
            .to_string())
    }

    /// `K₀^ε` at the initial mode for one ε (rows of the matrix at t = 0).
    #[pyo3(signature = (epsilon, grid_steps=None, level_m_mode="gramian"))]
    fn riccati_k0(
        &self,
        epsilon: f64,
        grid_steps: Option<usize>,
        level_m_mode: &str,
    ) -> PyResult<Vec<Vec<f64>>> {
        let steps =
            grid_steps.unwrap_or_else(|| switchctrl::sim::default_grid_steps(self.inner.horizon()));
        let mode = parse_mode(level_m_mode)?;
        let params = RiccatiParams::bbt(&self.inner, epsilon, steps, mode);
        let sol = solve(&self.inner, params).map_err(to_py_err)?;
        Ok(matrix_rows(sol.k(0, self.inner.gamma0(), 0)))
    }

    /// Sweep an ε-schedule and diagnose the ε → 0 limit.
    #[pyo3(signature = (eps_schedule=None, grid_steps=None, level_m_mode="gramian"))]
    fn k0_estimate(
        &self,
        eps_schedule: Option<Vec<f64>>,
        grid_steps: Option<usize>,
        level_m_mode: &str,
    ) -> PyResult<K0Result> {
        let schedule = match eps_schedule {
            Some(values) => EpsilonSchedule::new(values).map_err(to_py_err)?,
            None => EpsilonSchedule::default_schedule(),
        };
        let steps =
            grid_steps.unwrap_or_else(|| switchctrl::sim::default_grid_steps(self.inner.horizon()));
        let mode = parse_mode(level_m_mode)?;
        let diag = k0_estimate(&self.inner, &schedule, steps, mode).map_err(to_py_err)?;
        Ok(K0Result { diag })
    }

    /// Jump times and entered modes of one sampled mode path.
    fn sample_jumps(&self, seed: u64) -> Vec<(f64, String)> {
        sample_mode_path(&self.inner, seed)
            .marks()
            .iter()
            .map(|&(t, gamma)| (t, self.inner.mode_label(gamma).to_string()))
            .collect()
    }

    /// Monte-Carlo dual cost from `y0` with no injections:
    /// `(mean, std_error)`.
    #[pyo3(signature = (y0, samples=200, seed=0, grid_steps=None))]
    fn dual_cost_zero(
        &self,
        y0: Vec<f64>,
        samples: usize,
        seed: u64,
        grid_steps: Option<usize>,
    ) -> PyResult<(f64, f64)> {
        let y0 = vector_from(y0, self.inner.state_dim(), "y0")?;
        let steps =
            grid_steps.unwrap_or_else(|| switchctrl::sim::default_grid_steps(self.inner.horizon()));
        mc_cost_dual(&self.inner, &y0, &ZeroPolicy, samples, seed, steps).map_err(to_py_err)
    }

    /// Pathwise duality residual under seeded random linear policies:
    /// `(mean, std_error)`; the mean must vanish within noise for *any*
    /// policy pair.
    #[pyo3(signature = (samples=200, seed=0, scale=0.3))]
    fn duality_residual(&self, samples: usize, seed: u64, scale: f64) -> PyResult<(f64, f64)> {
        let n = self.inner.state_dim();
        let x0 = Vector::from_element(n, 1.0);
        let y0 = Vector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let primal = LinearFeedback::random(&self.inner, seed.wrapping_add(1), scale);
        let dual = LinearInjection::random(&self.inner, seed.wrapping_add(2), scale);
        duality_check(&self.inner, &x0, &y0, &primal, &dual, samples, seed).map_err(to_py_err)
    }

    /// Terminal state of one zero-control primal path from `x0`.
    #[pyo3(signature = (x0, seed=0, grid_steps=None))]
    fn terminal_state_zero_control(
        &self,
        x0: Vec<f64>,
        seed: u64,
        grid_steps: Option<usize>,
    ) -> PyResult<Vec<f64>> {
        let x0 = vector_from(x0, self.inner.state_dim(), "x0")?;
        let steps =
            grid_steps.unwrap_or_else(|| switchctrl::sim::default_grid_steps(self.inner.horizon()));
        let path =
            simulate_primal(&self.inner, &x0, &ZeroPolicy, seed, steps).map_err(to_py_err)?;
        Ok(path.terminal.iter().cloned().collect())
    }
}

/// Result of an ε-schedule sweep: the `K₀^ε` family, the limit read-off,
/// and the exact-null verdict.
#[pyclass(frozen, name = "K0Result")]
struct K0Result {
    diag: K0Diagnostics,
}

#[pymethods]
impl K0Result {
    #[getter]
    fn epsilons(&self) -> Vec<f64> {
        self.diag.epsilons.clone()
    }

    /// Eigenvalues of each `K₀^ε`, sorted ascending, one row per ε.
    #[getter]
    fn eigenvalues(&self) -> Vec<Vec<f64>> {
        self.diag.eigenvalues.clone()
    }

    /// The limit estimate: `K₀^ε` at the smallest scheduled ε.
    #[getter]
    fn k0(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.diag.k0)
    }

    /// `"exact"`, `"not_exact"`, or `"inconclusive"`.
    #[getter]
    fn verdict(&self) -> String {
        self.diag.verdict.as_str().to_string()
    }

    /// Spectral norms of consecutive `K₀^ε` differences along the schedule.
    #[getter]
    fn deltas(&self) -> Vec<f64> {
        self.diag.deltas.clone()
    }

    /// The induced seminorm `√max(0, ⟨k₀·y, y⟩)`.
    fn metric(&self, y: Vec<f64>) -> PyResult<f64> {
        let y = vector_from(y, self.diag.k0.nrows(), "y")?;
        metric(&self.diag, &y).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "K0Result(verdict={:?}, epsilons={:?})",
            self.diag.verdict.as_str(),
            self.diag.epsilons
        )
    }
}

#[pymodule]
fn switchctrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<K0Result>()?;
    Ok(())
}
