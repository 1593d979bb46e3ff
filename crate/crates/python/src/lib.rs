//! Python module `qom`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use qom_core::bounds::{self, BoundInputs, Side};
use qom_core::datagen::{self, ContaminationSpec, GeneratedData};
use qom_core::{io, objective, solver};
use qom_core::{
    Dataset as CoreDataset, FitConfig, LossKind, PartitionScheme, PenaltyKind, QomError, QuantileSpec, ResponseKind,
};

create_exception!(qom, AssumptionError, PyValueError);
create_exception!(qom, DivergenceError, PyException);
create_exception!(qom, SolverError, PyException);

fn err(e: QomError) -> PyErr {
    match e {
        QomError::Assumption(_) => AssumptionError::new_err(e.to_string()),
        QomError::Divergence { .. } => DivergenceError::new_err(e.to_string()),
        QomError::LinearSolve(_) | QomError::Io(_) | QomError::Csv(_) => SolverError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn quantile(q: f64) -> PyResult<QuantileSpec> {
    QuantileSpec::new(q).map_err(err)
}

fn parse_loss(name: &str) -> PyResult<LossKind> {
    name.parse().map_err(err)
}

fn parse_penalty(name: &str) -> PyResult<PenaltyKind> {
    name.parse().map_err(err)
}

fn kind(labels: bool) -> ResponseKind {
    if labels {
        ResponseKind::Label
    } else {
        ResponseKind::Real
    }
}

#[pyclass(frozen, name = "Dataset")]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    /// `features` is a list of rows; `labels=True` requires ±1 responses.
    #[new]
    #[pyo3(signature = (features, responses, labels = false))]
    fn new(features: Vec<Vec<f64>>, responses: Vec<f64>, labels: bool) -> PyResult<Self> {
        let inner = CoreDataset::from_rows(features, responses, kind(labels)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, labels = false))]
    fn load(path: &str, labels: bool) -> PyResult<Self> {
        Ok(Self { inner: io::load_dataset(path, kind(labels)).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_dataset(path, &self.inner).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn labels(&self) -> bool {
        self.inner.kind() == ResponseKind::Label
    }

    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n()).map(|i| self.inner.row(i).to_vec()).collect()
    }

    fn responses(&self) -> Vec<f64> {
        self.inner.responses().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={}, labels={})", self.inner.n(), self.inner.p(), self.labels())
    }
}

#[pyclass(frozen, get_all, name = "FitResult")]
struct PyFitResult {
    weights: Vec<f64>,
    objective_trace: Vec<f64>,
    iterations_run: usize,
    selected_block_trace: Vec<usize>,
    converged: bool,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(weights={:?}, iterations_run={}, converged={})",
            self.weights, self.iterations_run, self.converged
        )
    }
}

impl From<qom_core::FitResult> for PyFitResult {
    fn from(r: qom_core::FitResult) -> Self {
        Self {
            weights: r.weights.into_inner(),
            objective_trace: r.objective_trace,
            iterations_run: r.iterations_run,
            selected_block_trace: r.selected_block_trace,
            converged: r.converged,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn config(
    lam: f64,
    blocks: usize,
    q: f64,
    step0: f64,
    max_iters: usize,
    tol: f64,
    seed: u64,
    reshuffle_every: usize,
) -> PyResult<FitConfig> {
    Ok(FitConfig {
        lambda: lam,
        blocks,
        quantile: quantile(q)?,
        step0,
        max_iters,
        tolerance: tol,
        seed,
        reshuffle_every,
    })
}

#[pyfunction]
#[pyo3(signature = (data, loss = "logistic", penalty = "ridge", lam = 0.0, blocks = 1, q = 0.5,
                    step0 = 1.0, max_iters = 10_000, tol = 1e-8, seed = 0, reshuffle_every = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_qom_gd(
    py: Python<'_>,
    data: &PyDataset,
    loss: &str,
    penalty: &str,
    lam: f64,
    blocks: usize,
    q: f64,
    step0: f64,
    max_iters: usize,
    tol: f64,
    seed: u64,
    reshuffle_every: usize,
) -> PyResult<PyFitResult> {
    let (l, pen) = (parse_loss(loss)?, parse_penalty(penalty)?);
    let cfg = config(lam, blocks, q, step0, max_iters, tol, seed, reshuffle_every)?;
    let r = py.detach(|| solver::fit_qom_gd(&data.inner, l, pen, &cfg)).map_err(err)?;
    Ok(r.into())
}

#[pyfunction]
#[pyo3(signature = (data, loss = "logistic", penalty = "ridge", lam = 0.0, blocks = 1, q = 0.5,
                    step0 = 1.0, max_iters = 100, tol = 1e-8, seed = 0, damping = 0.0))]
#[allow(clippy::too_many_arguments)]
fn fit_qom_newton(
    py: Python<'_>,
    data: &PyDataset,
    loss: &str,
    penalty: &str,
    lam: f64,
    blocks: usize,
    q: f64,
    step0: f64,
    max_iters: usize,
    tol: f64,
    seed: u64,
    damping: f64,
) -> PyResult<PyFitResult> {
    let (l, pen) = (parse_loss(loss)?, parse_penalty(penalty)?);
    let cfg = config(lam, blocks, q, step0, max_iters, tol, seed, 0)?;
    let r = py.detach(|| solver::fit_qom_newton(&data.inner, l, pen, &cfg, damping)).map_err(err)?;
    Ok(r.into())
}

#[pyfunction]
#[pyo3(signature = (data, loss = "logistic", penalty = "ridge", lam = 0.0, step0 = 1.0,
                    max_iters = 10_000, tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn fit_erm_gd(
    py: Python<'_>,
    data: &PyDataset,
    loss: &str,
    penalty: &str,
    lam: f64,
    step0: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<PyFitResult> {
    let (l, pen) = (parse_loss(loss)?, parse_penalty(penalty)?);
    let cfg = config(lam, 1, 0.5, step0, max_iters, tol, 0, 0)?;
    let r = py.detach(|| solver::fit_erm_gd(&data.inner, l, pen, &cfg)).map_err(err)?;
    Ok(r.into())
}

/// Returns `(value, block_index)` of the `q`-quantile block risk.
#[pyfunction]
#[pyo3(signature = (risks, q = 0.5))]
fn quantile_of_risks(risks: Vec<f64>, q: f64) -> PyResult<(f64, usize)> {
    let s = objective::quantile_of_risks(&risks, quantile(q)?).map_err(err)?;
    Ok((s.value, s.block_index))
}

#[pyfunction]
#[pyo3(signature = (w, data, blocks, seed = 0, loss = "logistic", penalty = "ridge", lam = 0.0, q = 0.5))]
#[allow(clippy::too_many_arguments)]
fn qom_objective(
    w: Vec<f64>,
    data: &PyDataset,
    blocks: usize,
    seed: u64,
    loss: &str,
    penalty: &str,
    lam: f64,
    q: f64,
) -> PyResult<f64> {
    let scheme = PartitionScheme::new(data.inner.n(), blocks, seed).map_err(err)?;
    objective::qom_objective(&w, &data.inner, &scheme, parse_loss(loss)?, quantile(q)?, lam, parse_penalty(penalty)?)
        .map_err(err)
}

/// Block partition `n → K` as a list of index lists.
#[pyfunction]
#[pyo3(signature = (n, k, seed = 0))]
fn make_partition(n: usize, k: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    Ok(PartitionScheme::new(n, k, seed).map_err(err)?.blocks().to_vec())
}

#[pyfunction]
#[pyo3(signature = (outliers, q = 0.5, eta = 1.0))]
fn min_blocks(outliers: usize, q: f64, eta: f64) -> PyResult<usize> {
    qom_core::min_blocks(outliers, quantile(q)?, eta).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (outliers, q, eta, k))]
fn validate_partition_assumption(outliers: usize, q: f64, eta: f64, k: usize) -> PyResult<bool> {
    qom_core::validate_partition_assumption(outliers, quantile(q)?, eta, k).map_err(err)
}

#[allow(clippy::too_many_arguments)]
fn bound_inputs(
    v: f64,
    b: f64,
    tau: f64,
    mu_star: f64,
    sigma: f64,
    eta: f64,
    q: f64,
    n: usize,
    k: usize,
    inliers: usize,
    outliers: usize,
    alpha: Option<f64>,
) -> PyResult<BoundInputs> {
    Ok(BoundInputs {
        v,
        b_radius: b,
        tau,
        mu_star,
        sigma,
        eta,
        q: quantile(q)?,
        n,
        k,
        inliers,
        outliers,
        alpha,
    })
}

/// Returns `(bound, confidence)`.
#[pyfunction]
#[pyo3(signature = (v, b, tau, mu_star, sigma, n, k, inliers, outliers, eta = 1.0, q = 0.5))]
#[allow(clippy::too_many_arguments)]
fn main_risk_bound(
    v: f64,
    b: f64,
    tau: f64,
    mu_star: f64,
    sigma: f64,
    n: usize,
    k: usize,
    inliers: usize,
    outliers: usize,
    eta: f64,
    q: f64,
) -> PyResult<(f64, f64)> {
    let inputs = bound_inputs(v, b, tau, mu_star, sigma, eta, q, n, k, inliers, outliers, None)?;
    let r = bounds::main_risk_bound(&inputs).map_err(err)?;
    Ok((r.bound, r.confidence))
}

/// Returns `(epsilon, probability)` for `side` in `{"lower", "upper"}`.
#[pyfunction]
#[pyo3(signature = (side, v, b, tau, mu_star, sigma, n, k, inliers, outliers, eta = 1.0, q = 0.5))]
#[allow(clippy::too_many_arguments)]
fn concentration_epsilon(
    side: &str,
    v: f64,
    b: f64,
    tau: f64,
    mu_star: f64,
    sigma: f64,
    n: usize,
    k: usize,
    inliers: usize,
    outliers: usize,
    eta: f64,
    q: f64,
) -> PyResult<(f64, f64)> {
    let side = match side {
        "lower" => Side::Lower,
        "upper" => Side::Upper,
        other => return Err(PyValueError::new_err(format!("side must be 'lower' or 'upper', got '{other}'"))),
    };
    let inputs = bound_inputs(v, b, tau, mu_star, sigma, eta, q, n, k, inliers, outliers, None)?;
    bounds::concentration_epsilon(&inputs, side).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (v, b, tau, mu_star, sigma, n, k, inliers, outliers, alpha, beta, eta = 1.0, q = 0.5))]
#[allow(clippy::too_many_arguments)]
fn fast_rate_bound(
    v: f64,
    b: f64,
    tau: f64,
    mu_star: f64,
    sigma: f64,
    n: usize,
    k: usize,
    inliers: usize,
    outliers: usize,
    alpha: f64,
    beta: f64,
    eta: f64,
    q: f64,
) -> PyResult<f64> {
    let inputs = bound_inputs(v, b, tau, mu_star, sigma, eta, q, n, k, inliers, outliers, Some(alpha))?;
    bounds::fast_rate_bound(&inputs, beta).map_err(err)
}

/// Returns `(bound, confidence)`.
#[pyfunction]
#[pyo3(signature = (v, b, tau, mu_star, sigma, n, k, inliers, outliers, eps_p, eta = 1.0, q = 0.5))]
#[allow(clippy::too_many_arguments)]
fn misspec_bound(
    v: f64,
    b: f64,
    tau: f64,
    mu_star: f64,
    sigma: f64,
    n: usize,
    k: usize,
    inliers: usize,
    outliers: usize,
    eps_p: f64,
    eta: f64,
    q: f64,
) -> PyResult<(f64, f64)> {
    let inputs = bound_inputs(v, b, tau, mu_star, sigma, eta, q, n, k, inliers, outliers, None)?;
    let r = bounds::misspec_bound(&inputs, eps_p).map_err(err)?;
    Ok((r.bound, r.confidence))
}

#[pyclass(frozen, name = "GeneratedData")]
struct PyGenerated {
    #[pyo3(get)]
    data: Py<PyDataset>,
    /// `True` marks an outlier row.
    #[pyo3(get)]
    outliers: Vec<bool>,
    #[pyo3(get)]
    true_weights: Vec<f64>,
}

fn wrap(py: Python<'_>, g: GeneratedData) -> PyResult<PyGenerated> {
    let outliers = (0..g.tags.len()).map(|i| g.tags.is_outlier(i)).collect();
    Ok(PyGenerated {
        data: Py::new(py, PyDataset { inner: g.data })?,
        outliers,
        true_weights: g.true_weights.into_inner(),
    })
}

#[pyfunction]
#[pyo3(signature = (n_inliers, seed = 0, beta = 0.3))]
fn gen_appendix_e(py: Python<'_>, n_inliers: usize, seed: u64, beta: f64) -> PyResult<PyGenerated> {
    let spec = ContaminationSpec { beta, ..ContaminationSpec::appendix_e(n_inliers, seed) };
    wrap(py, datagen::gen_appendix_e(&spec).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (n_inliers, p = 2, seed = 0, beta = 0.3, inlier_variance = 1.0, outlier_mean = 0.5,
                    outlier_variance = 100.0, noise_std = 1.0))]
#[allow(clippy::too_many_arguments)]
fn gen_regression(
    py: Python<'_>,
    n_inliers: usize,
    p: usize,
    seed: u64,
    beta: f64,
    inlier_variance: f64,
    outlier_mean: f64,
    outlier_variance: f64,
    noise_std: f64,
) -> PyResult<PyGenerated> {
    let spec = ContaminationSpec { n_inliers, p, beta, inlier_variance, outlier_mean, outlier_variance, seed };
    wrap(py, datagen::gen_regression(&spec, noise_std).map_err(err)?)
}

#[pymodule]
fn qom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("AssumptionError", py.get_type::<AssumptionError>())?;
    m.add("DivergenceError", py.get_type::<DivergenceError>())?;
    m.add("SolverError", py.get_type::<SolverError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyGenerated>()?;
    m.add_function(wrap_pyfunction!(fit_qom_gd, m)?)?;
    m.add_function(wrap_pyfunction!(fit_qom_newton, m)?)?;
    m.add_function(wrap_pyfunction!(fit_erm_gd, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_of_risks, m)?)?;
    m.add_function(wrap_pyfunction!(qom_objective, m)?)?;
    m.add_function(wrap_pyfunction!(make_partition, m)?)?;
    m.add_function(wrap_pyfunction!(min_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(validate_partition_assumption, m)?)?;
    m.add_function(wrap_pyfunction!(main_risk_bound, m)?)?;
    m.add_function(wrap_pyfunction!(concentration_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(fast_rate_bound, m)?)?;
    m.add_function(wrap_pyfunction!(misspec_bound, m)?)?;
    m.add_function(wrap_pyfunction!(gen_appendix_e, m)?)?;
    m.add_function(wrap_pyfunction!(gen_regression, m)?)?;
    Ok(())
}
