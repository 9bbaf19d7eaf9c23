//! Python bindings. Records cross the boundary column-wise, so frames map
//! directly onto numpy arrays or dataframe columns.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use prevalent_core as core;
use prevalent_core::{EmOptions, PrevalentRecord, ScreeningFrame, TailPolicy};

create_exception!(prevalent, PrevalentError, PyException);

fn err(e: core::Error) -> PyErr {
    PrevalentError::new_err(e.to_string())
}

fn policy(name: &str) -> PyResult<TailPolicy> {
    name.parse().map_err(|_| PyValueError::new_err(format!("unknown tail policy {name:?}")))
}

fn em(tail_policy: &str, tol: f64, max_iter: usize) -> PyResult<EmOptions> {
    Ok(EmOptions { tol, max_iter, tail_policy: policy(tail_policy)?, record_trace: false })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

/// Screened cohort: `s` people screened, one row per prevalent case.
#[pyclass(module = "prevalent", frozen)]
pub struct Frame {
    inner: ScreeningFrame,
}

#[pymethods]
impl Frame {
    #[new]
    #[pyo3(signature = (s, bwd, fwd_obs, event, age_cat=None))]
    fn new(s: u64, bwd: Vec<f64>, fwd_obs: Vec<f64>, event: Vec<bool>, age_cat: Option<Vec<Option<String>>>) -> PyResult<Self> {
        let n = bwd.len();
        if fwd_obs.len() != n || event.len() != n || age_cat.as_ref().is_some_and(|c| c.len() != n) {
            return Err(PyValueError::new_err("columns must have equal length"));
        }
        let mut cats = age_cat.map(Vec::into_iter);
        let records = (0..n)
            .map(|i| PrevalentRecord {
                bwd: bwd[i],
                fwd_obs: fwd_obs[i],
                event: event[i],
                age_cat: cats.as_mut().and_then(|c| c.next().flatten()),
            })
            .collect();
        let inner = ScreeningFrame::new(s, records);
        let violations = core::validate_frame(&inner);
        if let Some(v) = violations.first() {
            return Err(PyValueError::new_err(v.to_string()));
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf, s: u64) -> PyResult<Self> {
        let file = std::fs::File::open(&path).map_err(|e| err(e.into()))?;
        let records = core::io::read_records(file).map_err(err)?;
        Ok(Self { inner: ScreeningFrame::new(s, records) })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(|e| err(e.into()))?;
        core::io::write_records(file, &self.inner.records).map_err(err)
    }

    #[getter]
    fn s(&self) -> u64 {
        self.inner.s
    }

    #[getter]
    fn n(&self) -> u64 {
        self.inner.n()
    }

    #[getter]
    fn bwd(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.bwd).collect()
    }

    #[getter]
    fn fwd_obs(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.fwd_obs).collect()
    }

    #[getter]
    fn event(&self) -> Vec<bool> {
        self.inner.records.iter().map(|r| r.event).collect()
    }

    #[getter]
    fn age_cat(&self) -> Vec<Option<String>> {
        self.inner.records.iter().map(|r| r.age_cat.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn __repr__(&self) -> String {
        format!("Frame(s={}, n={})", self.inner.s, self.inner.n())
    }
}

/// Unbiased survivor function and mean duration from the length-biased NPMLE.
#[pyclass(module = "prevalent", frozen)]
pub struct NpmleFit {
    inner: core::NpmleFit,
}

#[pymethods]
impl NpmleFit {
    #[getter]
    fn support(&self) -> Vec<f64> {
        self.inner.curve.support().to_vec()
    }

    /// Unbiased probability masses on `support`.
    #[getter]
    fn mass(&self) -> Vec<f64> {
        self.inner.curve.mass().to_vec()
    }

    /// Length-biased masses on `support`.
    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.lb.q.clone()
    }

    #[getter]
    fn mu_hat(&self) -> f64 {
        self.inner.mu_hat
    }

    #[getter]
    fn loglik(&self) -> f64 {
        self.inner.loglik
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn biased_tail(&self) -> bool {
        self.inner.biased_tail
    }

    fn survival(&self, x: f64) -> f64 {
        self.inner.curve.survival(x)
    }

    fn __repr__(&self) -> String {
        format!("NpmleFit(mu_hat={}, support_size={})", self.inner.mu_hat, self.inner.lb.support.len())
    }
}

#[pyclass(module = "prevalent", frozen)]
pub struct Estimate {
    inner: core::IncidenceEstimate,
}

#[pymethods]
impl Estimate {
    /// Incidence rate per person-year.
    #[getter]
    fn rate(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn prevalence(&self) -> f64 {
        self.inner.prevalence
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    /// `(category, rate)` pairs for age-specific estimates, else `None`.
    #[getter]
    fn per_category(&self) -> Option<Vec<(String, f64)>> {
        self.inner.per_category.as_ref().map(|cats| cats.iter().map(|c| (c.category.clone(), c.lambda)).collect())
    }

    fn to_json(&self) -> String {
        to_json(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Estimate(rate={}, prevalence={}, mu={})", self.inner.lambda, self.inner.prevalence, self.inner.mu)
    }
}

#[pyclass(module = "prevalent", frozen)]
pub struct Interval {
    inner: core::BootstrapResult,
}

#[pymethods]
impl Interval {
    #[getter]
    fn label(&self) -> String {
        self.inner.label.clone()
    }

    #[getter]
    fn lower(&self) -> f64 {
        self.inner.ci_lower
    }

    #[getter]
    fn upper(&self) -> f64 {
        self.inner.ci_upper
    }

    #[getter]
    fn level(&self) -> f64 {
        self.inner.level
    }

    #[getter]
    fn estimates(&self) -> Vec<f64> {
        self.inner.estimates.clone()
    }

    #[getter]
    fn degenerate_count(&self) -> usize {
        self.inner.degenerate_count
    }

    #[getter]
    fn fallback_count(&self) -> usize {
        self.inner.fallback_count
    }

    fn __repr__(&self) -> String {
        format!("Interval({}: [{}, {}] at {})", self.inner.label, self.inner.ci_lower, self.inner.ci_upper, self.inner.level)
    }
}

#[pyclass(module = "prevalent", frozen)]
pub struct Diagnostic {
    inner: core::DiagnosticResult,
}

#[pymethods]
impl Diagnostic {
    #[getter]
    fn statistic(&self) -> f64 {
        self.inner.statistic
    }

    #[getter]
    fn p_value(&self) -> f64 {
        self.inner.p_value
    }

    #[getter]
    fn n_pairs(&self) -> usize {
        self.inner.n_pairs
    }

    fn __repr__(&self) -> String {
        format!("Diagnostic(statistic={}, p_value={})", self.inner.statistic, self.inner.p_value)
    }
}

#[pyfunction]
#[pyo3(signature = (frame, tail_policy="strict", tol=1e-10, max_iter=100_000))]
fn fit_npmle(frame: &Frame, tail_policy: &str, tol: f64, max_iter: usize) -> PyResult<NpmleFit> {
    let inner = core::npmle_lb_em(&frame.inner.records, &em(tail_policy, tol, max_iter)?).map_err(err)?;
    Ok(NpmleFit { inner })
}

#[pyfunction]
#[pyo3(signature = (frame, prevalence=None, tail_policy="strict"))]
fn estimate(frame: &Frame, prevalence: Option<f64>, tail_policy: &str) -> PyResult<Estimate> {
    let (inner, _) = core::estimate_overall(&frame.inner, prevalence, &em(tail_policy, 1e-10, 100_000)?).map_err(err)?;
    Ok(Estimate { inner })
}

/// Rate from summary statistics alone.
#[pyfunction]
fn estimate_summary(prevalence: f64, mu: f64) -> PyResult<Estimate> {
    let inner = core::IncidenceEstimate::from_summary(prevalence, mu).map_err(err)?;
    Ok(Estimate { inner })
}

/// Age-specific rates; `age_csv` has columns `segment_start,segment_end,<categories>`.
#[pyfunction]
#[pyo3(signature = (frame, age_csv, tau_star=None, tail_policy="strict"))]
fn estimate_age(frame: &Frame, age_csv: PathBuf, tau_star: Option<f64>, tail_policy: &str) -> PyResult<Estimate> {
    let file = std::fs::File::open(&age_csv).map_err(|e| err(e.into()))?;
    let age = core::io::read_age_distribution(file).map_err(err)?;
    let analysis =
        core::estimate_by_category(&frame.inner, &age, tau_star, &em(tail_policy, 1e-10, 100_000)?).map_err(err)?;
    Ok(Estimate { inner: analysis.estimate })
}

#[pyfunction]
#[pyo3(signature = (frame, replicates=1000, level=0.95, seed=0, prevalence=None))]
fn bootstrap(frame: &Frame, replicates: usize, level: f64, seed: u64, prevalence: Option<f64>) -> PyResult<Interval> {
    let opts = core::BootstrapOptions::new(replicates, level, seed);
    let est = core::Estimator::Overall { prevalence_override: prevalence };
    let mut res = core::bootstrap_lambda(&frame.inner, &opts, &est).map_err(err)?;
    Ok(Interval { inner: res.remove(0) })
}

#[pyfunction]
#[pyo3(signature = (frame, permutations=999, seed=0))]
fn diagnose(frame: &Frame, permutations: usize, seed: u64) -> PyResult<Diagnostic> {
    let inner = core::exchangeability_test(&frame.inner.records, permutations, seed).map_err(err)?;
    Ok(Diagnostic { inner })
}

/// Simulate from a TOML config; returns the frame and the truth as JSON.
#[pyfunction]
fn simulate(config_toml: &str) -> PyResult<(Frame, String)> {
    let config = core::SimConfig::from_toml(config_toml).map_err(err)?;
    let inner = config.run().map_err(err)?;
    let truth = config.truth().map_err(err)?;
    Ok((Frame { inner }, to_json(&truth)))
}

#[pymodule]
fn prevalent(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PrevalentError", m.py().get_type::<PrevalentError>())?;
    m.add_class::<Frame>()?;
    m.add_class::<NpmleFit>()?;
    m.add_class::<Estimate>()?;
    m.add_class::<Interval>()?;
    m.add_class::<Diagnostic>()?;
    m.add_function(wrap_pyfunction!(fit_npmle, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_summary, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_age, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
