//! Python bindings for `camdp-core`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use camdp_core::oracle::{reference_targets, CalibrationTarget};
use camdp_core::{
    CamdpError, CoadaptConfig, CoadaptStatus, FactoredCaMDP, ImproverSpec,
    JointPolicy, RewardMode, Schedule, ValueCriterion,
};

fn err(e: CamdpError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(what: &str, text: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    text.parse::<T>()
        .map_err(|e| PyValueError::new_err(format!("bad {what} `{text}`: {e}")))
}

/// A validated two-agent factored model.
#[pyclass(name = "Model", module = "camdp", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: FactoredCaMDP,
}

#[pymethods]
impl PyModel {
    /// The built-in two-agent example.
    #[staticmethod]
    fn example() -> Self {
        PyModel { inner: FactoredCaMDP::builtin_example() }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        FactoredCaMDP::load(path).map(|inner| PyModel { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        FactoredCaMDP::from_json(text).map(|inner| PyModel { inner }).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn reward_mode(&self) -> String {
        self.inner.reward_mode.to_string()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn with_gamma(&self, gamma: f64) -> PyResult<Self> {
        self.inner.clone().with_gamma(gamma).map(|inner| PyModel { inner }).map_err(err)
    }

    fn with_reward_mode(&self, mode: &str) -> PyResult<Self> {
        let mode: RewardMode = parse("reward mode", mode)?;
        Ok(PyModel { inner: self.inner.clone().with_reward_mode(mode) })
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!(
            "Model(n0={}, ns={}, n1={}, m0={}, m1={}, gamma={}, reward_mode={})",
            d.n0, d.ns, d.n1, d.m0, d.m1, self.inner.gamma, self.inner.reward_mode
        )
    }
}

impl PyModel {
    fn policy(&self, digits: &str) -> PyResult<JointPolicy> {
        JointPolicy::parse(&self.inner.dims(), digits).map_err(err)
    }
}

/// Canonical number of a joint policy given as `"<pi0>:<pi1>"`.
#[pyfunction]
fn policy_number(model: &PyModel, policy: &str) -> PyResult<u64> {
    Ok(model.policy(policy)?.number())
}

/// Digit form of a joint policy number.
#[pyfunction]
fn policy_digits(model: &PyModel, number: u64) -> PyResult<String> {
    JointPolicy::from_number(&model.inner.dims(), number)
        .map(|jp| jp.digits())
        .map_err(err)
}

/// Discounted values per augmented state.
#[pyfunction]
#[pyo3(signature = (model, policy, method = "direct", tol = 1e-12))]
fn evaluate(model: &PyModel, policy: &str, method: &str, tol: f64) -> PyResult<Vec<f64>> {
    let chain = camdp_core::induced_chain(&model.inner, &model.policy(policy)?).map_err(err)?;
    let res = match method {
        "direct" => camdp_core::evaluate_direct(&chain, model.inner.gamma),
        "iterative" => camdp_core::evaluate_iterative(&chain, model.inner.gamma, tol, 10_000_000),
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    }
    .map_err(err)?;
    Ok(res.values.iter().copied().collect())
}

/// Average reward per step.
#[pyfunction]
fn gain(model: &PyModel, policy: &str) -> PyResult<f64> {
    let chain = camdp_core::induced_chain(&model.inner, &model.policy(policy)?).map_err(err)?;
    camdp_core::gain(&chain).map_err(err)
}

/// Scores every joint policy. Returns `(best_number, best_value, values)`
/// with `values[k]` the score of policy number `k + 1`.
#[pyfunction]
#[pyo3(signature = (model, criterion = "gain", state = None))]
fn brute_force_optimal(
    py: Python<'_>,
    model: &PyModel,
    criterion: &str,
    state: Option<usize>,
) -> PyResult<(u64, f64, Vec<f64>)> {
    let gamma = model.inner.gamma;
    let criterion = match (criterion, state) {
        ("gain", _) => ValueCriterion::Gain,
        ("discounted", None) => ValueCriterion::StationaryMean { gamma },
        ("discounted", Some(state)) => ValueCriterion::AtState { gamma, state },
        (other, _) => return Err(PyValueError::new_err(format!("unknown criterion `{other}`"))),
    };
    let res = py
        .detach(|| camdp_core::brute_force_optimal(&model.inner, criterion))
        .map_err(err)?;
    Ok((res.best.number(), res.value, res.table.iter().map(|(_, v)| *v).collect()))
}

/// Runs co-adaptation. Returns a dict with `status`, `numbers`, `final`,
/// `exit_code`, `response_cycle` and the CSV trace.
#[pyfunction]
#[pyo3(signature = (model, init, agent0 = "classical", agent1 = "classical", schedule = "simultaneous", max_iters = 50))]
fn run_coadapt(
    py: Python<'_>,
    model: &PyModel,
    init: &str,
    agent0: &str,
    agent1: &str,
    schedule: &str,
    max_iters: usize,
) -> PyResult<Py<PyAny>> {
    let init = model.policy(init)?;
    let mut config = CoadaptConfig::for_model(&model.inner)
        .with_schedule(parse::<Schedule>("schedule", schedule)?)
        .with_improvers(
            parse::<ImproverSpec>("improver", agent0)?,
            parse::<ImproverSpec>("improver", agent1)?,
        );
    config.max_iters = max_iters;
    let trace = camdp_core::run_coadapt(&model.inner, &init, &config).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("status", trace.status.label())?;
    out.set_item("exit_code", trace.status.exit_code())?;
    out.set_item("numbers", trace.numbers())?;
    out.set_item("final", trace.final_policy().number())?;
    let cycle = match &trace.status {
        CoadaptStatus::Cycling(c) => Some(c.members.clone()),
        _ => None,
    };
    out.set_item("cycle", cycle)?;
    out.set_item(
        "response_cycle",
        trace.response_cycle.as_ref().map(|c| c.members.clone()),
    )?;
    out.set_item("csv", trace.to_csv())?;
    Ok(out.into_any().unbind())
}

/// Fits reward mode and criterion to `targets` (a list of
/// `(digits, value)`; the built-in reference rows when omitted). Returns the
/// report as JSON.
#[pyfunction]
#[pyo3(signature = (model, targets = None))]
fn calibrate(model: &PyModel, targets: Option<Vec<(String, f64)>>) -> PyResult<String> {
    let targets = match targets {
        Some(t) => t.iter().map(|(p, v)| CalibrationTarget::new(p, *v)).collect(),
        None => reference_targets(),
    };
    camdp_core::calibrate(&model.inner, &targets)
        .and_then(|r| r.to_json())
        .map_err(err)
}

/// Threshold scan with agent 0 threshold-gated and agent 1 classical.
/// Returns `(eta, outcome, final_number)` per grid point.
#[pyfunction]
#[pyo3(signature = (model, init, etas, max_iters = 50))]
fn eta_band_scan(
    py: Python<'_>,
    model: &PyModel,
    init: &str,
    etas: Vec<f64>,
    max_iters: usize,
) -> PyResult<Vec<(f64, String, u64)>> {
    let init = model.policy(init)?;
    let mut template = CoadaptConfig::for_model(&model.inner);
    template.max_iters = max_iters;
    let out = py
        .detach(|| camdp_core::eta_band_scan(&model.inner, &init, &etas, &template))
        .map_err(err)?;
    Ok(out
        .into_iter()
        .map(|o| (o.eta, o.outcome.to_string(), o.final_policy))
        .collect())
}

#[pymodule]
fn camdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(policy_number, m)?)?;
    m.add_function(wrap_pyfunction!(policy_digits, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gain, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_optimal, m)?)?;
    m.add_function(wrap_pyfunction!(run_coadapt, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(eta_band_scan, m)?)?;
    Ok(())
}
