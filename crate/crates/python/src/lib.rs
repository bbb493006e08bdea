//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use nalgebra::{DMatrix, DVector};
use spam_core::logistic::fit_logistic_with;
use spam_core::selection::{path_from_backfitter, PathOptions};
use spam_core::{Backfitter, Criterion, FitConfig, GroupedDesign, SmootherSpec, SpamError, SyntheticSpec};

fn to_py(e: SpamError) -> PyErr {
    match e {
        SpamError::Io(io) => PyOSError::new_err(io.to_string()),
        e if !e.is_input_error() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn smoother_spec(smoother: &str, d: Option<usize>, bandwidth: Option<f64>, n: usize) -> PyResult<SmootherSpec> {
    match smoother {
        "series" => Ok(d.map_or_else(|| SmootherSpec::default_series(n), SmootherSpec::cosine)),
        "linear" => Ok(SmootherSpec::linear()),
        "loclin" => Ok(SmootherSpec::local_linear(bandwidth)),
        other => Err(PyValueError::new_err(format!(
            "unknown smoother '{other}', expected 'series', 'linear' or 'loclin'"
        ))),
    }
}

fn criterion(name: &str) -> PyResult<Criterion> {
    match name {
        "cp" => Ok(Criterion::Cp),
        "gcv" => Ok(Criterion::Gcv),
        other => Err(PyValueError::new_err(format!("unknown criterion '{other}'"))),
    }
}

/// Covariates scaled to [0, 1] plus a response.
#[pyclass(name = "Dataset", module = "spam_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: spam_core::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Covariates must already lie in [0, 1] unless `scale` is true, in
    /// which case each column is min-max scaled.
    #[new]
    #[pyo3(signature = (x, y, scale = false))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, scale: bool) -> PyResult<Self> {
        let x = matrix(&x)?;
        let y = DVector::from_vec(y);
        let inner = if scale {
            let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
            spam_core::Dataset::from_raw(x, y, names, "y".into())
        } else {
            spam_core::Dataset::new(x, y)
        };
        inner.map(|inner| PyDataset { inner }).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (path, response = "y", scale = true))]
    fn from_csv(path: &str, response: &str, scale: bool) -> PyResult<Self> {
        spam_core::load_csv(path, response, scale)
            .map(|inner| PyDataset { inner })
            .map_err(to_py)
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
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        let x = self.inner.x();
        x.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().iter().copied().collect()
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        self.inner.save_csv(path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// A fitted sparse additive model.
#[pyclass(name = "Model", module = "spam_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: spam_core::SpamModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    /// 1-based indices of the active components.
    #[getter]
    fn active_set(&self) -> Vec<usize> {
        self.inner.active_set().into_iter().collect()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn n_iters(&self) -> usize {
        self.inner.n_iters
    }

    #[getter]
    fn objective_history(&self) -> Vec<f64> {
        self.inner.objective_history.clone()
    }

    /// Component norms `‖f_j‖/√n`.
    #[getter]
    fn norms(&self) -> Vec<f64> {
        self.inner.components.iter().map(|c| c.norm).collect()
    }

    /// Response-scale predictions (probabilities for logistic models) for
    /// raw covariate rows.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.predict(&matrix(&x)?).map_err(to_py)
    }

    /// Evaluates component `j` (1-based) at raw covariate values.
    fn component(&self, j: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let c = j
            .checked_sub(1)
            .and_then(|k| self.inner.components.get(k))
            .ok_or_else(|| PyValueError::new_err(format!("no component {j}")))?;
        Ok(x.iter().map(|&v| c.eval_raw(v)).collect())
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        spam_core::SpamModel::from_json(text)
            .map(|inner| PyModel { inner })
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(lambda={:.4e}, active_set={:?})",
            self.inner.lambda,
            self.inner.active_set()
        )
    }
}

/// Models over a decreasing penalty grid with risk estimates.
#[pyclass(name = "Path", module = "spam_py", frozen, skip_from_py_object)]
struct PyPath {
    inner: spam_core::LambdaPath,
}

#[pymethods]
impl PyPath {
    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas.clone()
    }

    #[getter]
    fn df(&self) -> Vec<f64> {
        self.inner.risk.iter().map(|r| r.df).collect()
    }

    #[getter]
    fn cp(&self) -> Vec<f64> {
        self.inner.risk.iter().map(|r| r.cp).collect()
    }

    #[getter]
    fn gcv(&self) -> Vec<f64> {
        self.inner.risk.iter().map(|r| r.gcv).collect()
    }

    #[getter]
    fn normalized(&self) -> Vec<f64> {
        self.inner.normalized.clone()
    }

    #[getter]
    fn sigma2_hat(&self) -> f64 {
        self.inner.sigma2_hat
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn model(&self, k: usize) -> PyResult<PyModel> {
        self.inner
            .models
            .get(k)
            .map(|m| PyModel { inner: m.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("path has {} models", self.inner.len())))
    }

    /// Index of the model minimising `criterion` ("cp" or "gcv").
    #[pyo3(signature = (criterion = "cp"))]
    fn select(&self, criterion: &str) -> PyResult<usize> {
        Ok(self.inner.select(self::criterion(criterion)?))
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| to_py(e.into()))?;
        self.inner.write_csv(file).map_err(to_py)
    }
}

/// Synthetic additive data; returns the dataset and the 1-based true support.
#[pyfunction]
#[pyo3(signature = (n, p, noise_sd = 1.0, seed = 0))]
fn generate_synthetic(n: usize, p: usize, noise_sd: f64, seed: u64) -> PyResult<(PyDataset, Vec<usize>)> {
    let (inner, truth) = spam_core::generate_synthetic(&SyntheticSpec::new(n, p, noise_sd, seed)).map_err(to_py)?;
    Ok((PyDataset { inner }, truth.support))
}

fn config(data: &spam_core::Dataset, lam: f64, smoother: &str, d: Option<usize>, bandwidth: Option<f64>, tol: f64, max_iter: usize) -> PyResult<FitConfig> {
    let spec = smoother_spec(smoother, d, bandwidth, data.n())?;
    Ok(FitConfig::new(lam, spec).with_tol(tol).with_max_iters(max_iter))
}

/// Sparse backfitting at penalty `lam`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (data, lam, smoother = "series", d = None, bandwidth = None, tol = 1e-4, max_iter = 100))]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    lam: f64,
    smoother: &str,
    d: Option<usize>,
    bandwidth: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyModel> {
    let cfg = config(&data.inner, lam, smoother, d, bandwidth, tol, max_iter)?;
    py.detach(|| spam_core::fit(&data.inner, &cfg, None))
        .map(|inner| PyModel { inner })
        .map_err(to_py)
}

/// Sparse additive logistic regression at penalty `lam`; `y` must be 0/1.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (data, lam, smoother = "series", d = None, bandwidth = None, tol = 1e-4, max_iter = 100))]
fn fit_logistic(
    py: Python<'_>,
    data: &PyDataset,
    lam: f64,
    smoother: &str,
    d: Option<usize>,
    bandwidth: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyModel> {
    let cfg = config(&data.inner, lam, smoother, d, bandwidth, tol, max_iter)?;
    py.detach(|| {
        let bf = Backfitter::new(&data.inner, cfg.smoother)?;
        fit_logistic_with(&bf, &cfg, None)
    })
    .map(|inner| PyModel { inner })
    .map_err(to_py)
}

/// Warm-started path over a log-spaced grid from the null-model penalty.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (data, smoother = "series", d = None, bandwidth = None, grid_size = 50, min_ratio = 1e-3, sigma2 = None))]
fn compute_path(
    py: Python<'_>,
    data: &PyDataset,
    smoother: &str,
    d: Option<usize>,
    bandwidth: Option<f64>,
    grid_size: usize,
    min_ratio: f64,
    sigma2: Option<f64>,
) -> PyResult<PyPath> {
    let cfg = config(&data.inner, 0.0, smoother, d, bandwidth, FitConfig::DEFAULT_TOL, FitConfig::DEFAULT_MAX_ITERS)?;
    let opts = PathOptions {
        grid: None,
        grid_size,
        min_ratio,
        sigma2,
    };
    py.detach(|| {
        let bf = Backfitter::new(&data.inner, cfg.smoother)?;
        path_from_backfitter(&bf, &cfg, &opts)
    })
    .map(|inner| PyPath { inner })
    .map_err(to_py)
}

/// Lasso `(1/2)‖y - Xβ‖² + lam‖β‖₁` on unit-norm columns; returns
/// coefficients on the original column scale.
#[pyfunction]
fn lasso_cd(x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    let fit = spam_core::lasso_cd(&matrix(&x)?, &DVector::from_vec(y), lam).map_err(to_py)?;
    Ok(fit.coefficients().iter().copied().collect())
}

/// Grouped lasso; `groups` is a list of row-major group matrices. Returns
/// per-group coefficients and the KKT residual.
#[pyfunction]
fn grouped_lasso(groups: Vec<Vec<Vec<f64>>>, y: Vec<f64>, lam: f64) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let groups = groups
        .iter()
        .enumerate()
        .map(|(k, g)| Ok((format!("group{}", k + 1), matrix(g)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let design = GroupedDesign::new(groups, DVector::from_vec(y)).map_err(to_py)?;
    let sol = spam_core::grouped_lasso(&design, lam).map_err(to_py)?;
    let beta = sol.beta.iter().map(|b| b.iter().copied().collect()).collect();
    Ok((beta, sol.kkt_residual))
}

#[pymodule]
fn spam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPath>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(compute_path, m)?)?;
    m.add_function(wrap_pyfunction!(lasso_cd, m)?)?;
    m.add_function(wrap_pyfunction!(grouped_lasso, m)?)?;
    Ok(())
}
