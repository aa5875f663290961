//! Python bindings: noise calibration, privacy accounting, seeded federated
//! runs on the synthetic problems, and the verification suites.

#![allow(clippy::useless_conversion)]

use mu2fl_core::federated::{self, FederatedConfig, PrivacySpec, RunOptions, RunRecord};
use mu2fl_core::privacy::{self, NoiseSchedule, TrustMode};
use mu2fl_core::problems::{LogisticProblem, QuadraticProblem};
use mu2fl_core::verify::{self, SuiteOptions};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: mu2fl_core::Error) -> PyErr {
    use mu2fl_core::Error as E;
    match e {
        E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::NoPrivacy | E::Idx { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mode(name: &str) -> PyResult<TrustMode> {
    name.parse().map_err(to_py)
}

/// Constant per-round variance that reaches `rho` exactly.
#[pyfunction]
#[pyo3(signature = (rho, s, horizon, machines, mode = "untrusted"))]
fn calibrated_variance(rho: f64, s: f64, horizon: usize, machines: usize, mode: &str) -> PyResult<f64> {
    privacy::calibrated_variance(rho, s, horizon, machines, self::mode(mode)?).map_err(to_py)
}

/// Per-machine zCDP `rho` of a constant-variance schedule.
#[pyfunction]
#[pyo3(signature = (sigma_sq, s, horizon, machines, mode = "untrusted"))]
fn account(sigma_sq: f64, s: f64, horizon: usize, machines: usize, mode: &str) -> PyResult<Vec<f64>> {
    let schedule = NoiseSchedule::constant(self::mode(mode)?, machines, horizon, sigma_sq).map_err(to_py)?;
    privacy::account(&schedule, s).map_err(to_py)
}

#[pyfunction]
fn epsilon(rho: f64, delta: f64) -> PyResult<f64> {
    privacy::rdp_to_dp(rho, delta).map(|g| g.epsilon).map_err(to_py)
}

#[pyclass(frozen)]
struct RunResult {
    record: RunRecord,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn loss(&self) -> f64 {
        self.record.metrics.loss
    }

    #[getter]
    fn excess_loss(&self) -> Option<f64> {
        self.record.metrics.excess_loss
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.record.eta
    }

    #[getter]
    fn bound(&self) -> f64 {
        self.record.bound.value
    }

    /// `None` for a noiseless run.
    #[getter]
    fn rho(&self) -> Option<f64> {
        self.record.privacy.as_ref().map(|p| p.rho)
    }

    #[getter]
    fn final_x(&self) -> Vec<f64> {
        self.record.final_x.clone()
    }

    /// Per-round loss, one entry per round.
    #[getter]
    fn losses(&self) -> Vec<f64> {
        self.record.rows.iter().map(|r| r.loss).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        federated::result_json(&self.record, None).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(problem={:?}, mode={}, loss={:.6e})",
            self.record.problem,
            self.record.config.mode.as_str(),
            self.record.metrics.loss
        )
    }
}

/// Seeded federated run on a synthetic problem (`quadratic` or `logistic`).
///
/// `rho = None` runs without noise.
#[pyfunction]
#[pyo3(signature = (
    problem = "quadratic", dim = 5, machines = 4, horizon = 200, mode = "untrusted",
    rho = None, seed = 0, heterogeneity = 0.5, noise_level = 0.5, problem_seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    problem: &str,
    dim: usize,
    machines: usize,
    horizon: usize,
    mode: &str,
    rho: Option<f64>,
    seed: u64,
    heterogeneity: f64,
    noise_level: f64,
    problem_seed: u64,
) -> PyResult<RunResult> {
    let privacy = match rho {
        Some(rho) => PrivacySpec::Rho { rho },
        None => PrivacySpec::None,
    };
    let config = FederatedConfig::new(self::mode(mode)?, machines, horizon, privacy, seed);
    let options = RunOptions::default();
    let record = py.allow_threads(|| match problem {
        "quadratic" => QuadraticProblem::new(dim, machines, heterogeneity, noise_level, problem_seed)
            .and_then(|p| federated::run(&p, &config, &options)),
        "logistic" => LogisticProblem::new(dim, machines, heterogeneity, problem_seed)
            .and_then(|p| federated::run(&p, &config, &options)),
        other => Err(mu2fl_core::Error::InvalidParameter {
            name: "problem",
            reason: format!("expected `quadratic` or `logistic`, got `{other}`"),
        }),
    });
    Ok(RunResult {
        record: record.map_err(to_py)?,
    })
}

/// Runs one verification suite; `options` is a JSON object of trial counts.
///
/// Returns `(name, passed, margin, tolerance)` per check.
#[pyfunction]
#[pyo3(signature = (name, options = None))]
fn run_suite(py: Python<'_>, name: &str, options: Option<&str>) -> PyResult<Vec<(String, bool, f64, f64)>> {
    let opts: SuiteOptions = match options {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SuiteOptions::default(),
    };
    let entries = py.allow_threads(|| verify::run_suite(name, &opts)).map_err(to_py)?;
    Ok(entries
        .into_iter()
        .map(|e| {
            let passed = e.passed();
            (e.name, passed, e.margin, e.tolerance)
        })
        .collect())
}

#[pymodule]
fn mu2fl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(calibrated_variance, m)?)?;
    m.add_function(wrap_pyfunction!(account, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add_class::<RunResult>()?;
    m.add("SUITES", verify::SUITES.to_vec())?;
    m.add("GAUSSIAN_SAMPLER", privacy::GAUSSIAN_SAMPLER)?;
    Ok(())
}
