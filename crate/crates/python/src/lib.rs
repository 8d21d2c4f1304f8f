//! Python module `tukey_gh`: the transform, the likelihood, simulation designs, trained
//! models and prediction intervals.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use tukey_gh::eval::{self, IntervalVariant};
use tukey_gh::io::{load_csv_with_extra, ExperimentConfig};
use tukey_gh::synth::{self, GAndHFunctions, StudentTFunctions, Truth};
use tukey_gh::{loss, transform, Error, InverseSolverConfig, Matrix, ShapeParams};

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else if matches!(e, Error::Io { .. }) {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn variant(name: &str) -> PyResult<IntervalVariant> {
    name.parse().map_err(|e: Error| to_py(e))
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, width: usize) -> PyResult<Matrix> {
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!(
            "expected {width} values per row, got {}",
            r.len()
        )));
    }
    Ok(Matrix::from_vec(rows.len(), width, rows.concat()))
}

/// Parameters `(mu, sigma, g, h)` of one g-and-h distribution.
#[pyclass(name = "TghParams", module = "tukey_gh", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyTghParams(tukey_gh::TghParams);

#[pymethods]
impl PyTghParams {
    #[new]
    #[pyo3(signature = (mu, sigma, g = 0.0, h = 0.0))]
    fn new(mu: f64, sigma: f64, g: f64, h: f64) -> PyResult<Self> {
        tukey_gh::TghParams::new(mu, sigma, g, h).map(Self).map_err(to_py)
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn g(&self) -> f64 {
        self.0.g
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h
    }

    fn log_density(&self, y: f64) -> PyResult<f64> {
        transform::log_density(y, &self.0, &InverseSolverConfig::default()).map_err(to_py)
    }

    fn quantile(&self, alpha: f64) -> PyResult<f64> {
        transform::quantile(alpha, &self.0).map_err(to_py)
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        transform::sample(&self.0, n, seed).map_err(to_py)
    }

    /// `(lower, upper)` of the `1 - alpha` interval.
    #[pyo3(signature = (alpha = 0.05, variant = "symmetric"))]
    fn interval(&self, alpha: f64, variant: &str) -> PyResult<(f64, f64)> {
        let iv = eval::interval(&self.0, alpha, self::variant(variant)?).map_err(to_py)?;
        Ok((iv.lower, iv.upper))
    }

    fn __repr__(&self) -> String {
        let p = self.0;
        format!("TghParams(mu={}, sigma={}, g={}, h={})", p.mu, p.sigma, p.g, p.h)
    }
}

/// `tau_{g,h}(z)`.
#[pyfunction]
fn tau(z: f64, g: f64, h: f64) -> PyResult<f64> {
    transform::tau(z, ShapeParams::new(g, h).map_err(to_py)?).map_err(to_py)
}

/// Solves `tau_{g,h}(z) = t` for `z`.
#[pyfunction]
fn tau_inverse(t: f64, g: f64, h: f64) -> PyResult<f64> {
    let shape = ShapeParams::new(g, h).map_err(to_py)?;
    transform::tau_inverse(t, shape, &InverseSolverConfig::default()).map_err(to_py)
}

/// Negative log-likelihood (without the `ln(2 pi) / 2` constant) and its gradient with
/// respect to `(mu, sigma, g, h)`.
#[pyfunction]
fn nll_and_grad(y: f64, params: PyTghParams) -> PyResult<(f64, [f64; 4])> {
    let r = loss::nll_and_grad(y, &params.0, &InverseSolverConfig::default()).map_err(to_py)?;
    Ok((r.value, r.grad))
}

/// Gaussian counterpart of `nll_and_grad`, gradient with respect to `(mu, sigma)`.
#[pyfunction]
fn gaussian_nll_and_grad(y: f64, mu: f64, sigma: f64) -> (f64, [f64; 2]) {
    let r = loss::gaussian_nll_and_grad(y, mu, sigma);
    (r.value, r.grad)
}

/// Generates a synthetic design (`gandh`, `student_t` or `spatial`) as a dict of columns.
#[pyfunction]
#[pyo3(signature = (design, n, seed = 0))]
fn simulate(design: &str, n: usize, seed: u64) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let data = match design {
        "gandh" => synth::generate_gandh(n, &GAndHFunctions::default(), seed),
        "student_t" | "student-t" => synth::generate_student_t(n, &StudentTFunctions::default(), seed),
        "spatial" => synth::generate_spatial(n, seed),
        other => return Err(PyValueError::new_err(format!("unknown design {other:?}"))),
    }
    .map_err(to_py)?;
    let mut cols = BTreeMap::new();
    for (j, name) in data.feature_names.iter().enumerate() {
        cols.insert(name.clone(), (0..data.len()).map(|i| data.x.get(i, j)).collect());
    }
    cols.insert("y".into(), data.y.clone());
    match &data.truth {
        Truth::GAndH(p) => {
            cols.insert("mu".into(), p.iter().map(|q| q.mu).collect());
            cols.insert("sigma".into(), p.iter().map(|q| q.sigma).collect());
            cols.insert("g".into(), p.iter().map(|q| q.g).collect());
            cols.insert("h".into(), p.iter().map(|q| q.h).collect());
        }
        Truth::StudentT(p) => {
            cols.insert("mu".into(), p.iter().map(|q| q.mu).collect());
            cols.insert("sigma".into(), p.iter().map(|q| q.sigma).collect());
            cols.insert("nu".into(), p.iter().map(|q| q.nu).collect());
        }
    }
    Ok(cols)
}

/// PIT residual diagnostics: `(ks_statistic, mean_nll, u)`.
#[pyfunction]
fn residuals(y: Vec<f64>, params: Vec<PyTghParams>) -> PyResult<(f64, f64, Vec<f64>)> {
    let params: Vec<_> = params.into_iter().map(|p| p.0).collect();
    let r = eval::residuals(&y, &params, &InverseSolverConfig::default()).map_err(to_py)?;
    Ok((r.ks_statistic, r.mean_nll, r.u))
}

/// A trained network with its likelihood, feature names and standardizer.
#[pyclass(name = "Model", module = "tukey_gh")]
struct PyModel(tukey_gh::TrainedModel);

#[pymethods]
impl PyModel {
    /// Trains from a JSON experiment config on a CSV file. Returns the model and the
    /// per-epoch `(epoch, lr, train_loss, val_loss)` history.
    #[staticmethod]
    fn fit(
        py: Python<'_>,
        config_json: &str,
        csv_path: PathBuf,
    ) -> PyResult<(Self, Vec<(usize, f64, f64, f64)>)> {
        let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
        let (model, history) = py
            .detach(|| {
                let features = cfg.all_features();
                let extra = cfg.split.extra_columns(&features, &cfg.target);
                let mut ds = load_csv_with_extra(&csv_path, &cfg.target, &features, &extra)?;
                tukey_gh::TrainedModel::fit(&cfg, &mut ds)
            })
            .map_err(to_py)?;
        let rows = history
            .epochs
            .iter()
            .map(|e| (e.epoch, e.lr, e.train_loss, e.val_loss))
            .collect();
        Ok((Self(model), rows))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        tukey_gh::TrainedModel::load(&path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.0.features.clone()
    }

    #[getter]
    fn target(&self) -> String {
        self.0.target.clone()
    }

    #[getter]
    fn loss(&self) -> &'static str {
        match self.0.likelihood.kind {
            tukey_gh::LossKind::Tukey => "tukey",
            tukey_gh::LossKind::Gaussian => "gaussian",
        }
    }

    /// Predicted distribution for each row of raw (unstandardized) features.
    fn predict(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Vec<PyTghParams>> {
        let x = rows_to_matrix(rows, self.0.features.len())?;
        let params = py.detach(|| self.0.predict_params(&x)).map_err(to_py)?;
        Ok(params.into_iter().map(PyTghParams).collect())
    }

    /// `(lower, upper)` per row.
    #[pyo3(signature = (rows, alpha = 0.05, variant = "symmetric"))]
    fn intervals(
        &self,
        py: Python<'_>,
        rows: Vec<Vec<f64>>,
        alpha: f64,
        variant: &str,
    ) -> PyResult<Vec<(f64, f64)>> {
        let v = self::variant(variant)?;
        let x = rows_to_matrix(rows, self.0.features.len())?;
        let out = py
            .detach(|| {
                let params = self.0.predict_params(&x)?;
                eval::intervals(&params, alpha, v)
            })
            .map_err(to_py)?;
        Ok(out.into_iter().map(|iv| (iv.lower, iv.upper)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(loss={:?}, features={:?}, params={})",
            self.loss(),
            self.0.features,
            self.0.network.num_params()
        )
    }
}

#[pymodule(name = "tukey_gh")]
fn tukey_gh_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTghParams>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(tau, m)?)?;
    m.add_function(wrap_pyfunction!(tau_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(nll_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_nll_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(residuals, m)?)?;
    Ok(())
}
