//! Python bindings: datasets, representations, predictors, routing and the
//! sweep metrics. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use costroute::dataset::{load_dataset, normalize_embeddings, save_dataset, split};
use costroute::evaluation::{self, OracleRouter, SweepResult};
use costroute::experiment::{self, build_reps, predictive_router, route_embedding, ExperimentConfig, RepresentationConfig};
use costroute::predictors::{self, load_predictor, predict_matrix, save_predictor};
use costroute::routing;
use costroute::synth::synth_generate;
use costroute::{
    Architecture, Predictor, PredictorConfig, RepresentationSet, RewardFamily, RewardSpec, RoutingDataset, SplitSpec,
    SynthSpec, Target,
};
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(costroute_py, CostrouteError, PyException);

fn check<T>(r: costroute::Result<T>) -> PyResult<T> {
    r.map_err(|e| CostrouteError::new_err(e.to_string()))
}

fn family(name: &str) -> PyResult<RewardFamily> {
    check(name.parse())
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Dataset", module = "costroute_py", frozen)]
pub struct PyDataset {
    pub inner: RoutingDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: check(load_dataset(&path))? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        check(save_dataset(&self.inner, &path))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} queries, pool={:?})", self.inner.len(), self.inner.pool())
    }

    #[getter]
    fn pool(&self) -> Vec<String> {
        self.inner.pool().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    fn embeddings(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.embedding_matrix())
    }

    fn quality(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.quality_matrix())
    }

    fn cost(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.cost_matrix())
    }

    /// Seeded train/validation/test split.
    #[pyo3(signature = (train=0.75, val=0.05, test=0.2, seed=0))]
    fn split(&self, train: f64, val: f64, test: f64, seed: u64) -> PyResult<(Self, Self, Self)> {
        let (a, b, c) = check(split(&self.inner, &SplitSpec { train, val, test, seed }))?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    fn with_pool(&self, models: Vec<String>) -> PyResult<Self> {
        Ok(Self { inner: check(self.inner.with_pool(&models))? })
    }

    fn normalized(&self) -> PyResult<Self> {
        Ok(Self { inner: check(normalize_embeddings(&self.inner))? })
    }
}

#[pyclass(name = "Representations", module = "costroute_py", frozen)]
pub struct PyRepresentations {
    pub inner: RepresentationSet,
}

#[pymethods]
impl PyRepresentations {
    /// Cluster `train` and average each model's quality per cluster.
    #[staticmethod]
    #[pyo3(signature = (train, clusters=20, sample_frac=0.2, seed=0, max_iters=100))]
    fn build(train: &PyDataset, clusters: usize, sample_frac: f64, seed: u64, max_iters: usize) -> PyResult<Self> {
        let cfg = RepresentationConfig { clusters, sample_frac, seed, max_iters };
        Ok(Self { inner: check(build_reps(&cfg, &train.inner))? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: check(RepresentationSet::load(&path))? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        check(self.inner.save(&path))
    }

    #[getter]
    fn models(&self) -> Vec<String> {
        self.inner.models().iter().map(|m| m.model.clone()).collect()
    }

    #[getter]
    fn clusters(&self) -> usize {
        self.inner.clusters()
    }

    fn values(&self, model: &str) -> PyResult<Vec<f64>> {
        self.inner
            .get(model)
            .map(|m| m.values.clone())
            .ok_or_else(|| CostrouteError::new_err(format!("no representation for model `{model}`")))
    }

    fn matrix(&self, pool: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&check(self.inner.matrix_for(&pool))?))
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }
}

#[pyclass(name = "TrainReport", module = "costroute_py", frozen, get_all)]
pub struct PyTrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

#[pyclass(name = "Predictor", module = "costroute_py", frozen)]
pub struct PyPredictor {
    pub inner: Predictor,
}

#[pymethods]
impl PyPredictor {
    /// Train a quality or cost predictor. Unset hyperparameters take the
    /// defaults of the target.
    #[staticmethod]
    #[pyo3(signature = (
        train, val, architecture, target, reps=None, epochs=None, learning_rate=None,
        batch_size=None, weight_decay=None, internal_dim=None, seed=0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        train: &PyDataset,
        val: &PyDataset,
        architecture: &str,
        target: &str,
        reps: Option<&PyRepresentations>,
        epochs: Option<usize>,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        weight_decay: Option<f64>,
        internal_dim: Option<usize>,
        seed: u64,
    ) -> PyResult<(Self, PyTrainReport)> {
        let arch: Architecture = check(architecture.parse())?;
        let target: Target = check(target.parse())?;
        let mut cfg = PredictorConfig::new(arch, target);
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
        cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
        cfg.weight_decay = weight_decay.unwrap_or(cfg.weight_decay);
        cfg.internal_dim = internal_dim.unwrap_or(cfg.internal_dim);
        cfg.seed = seed;
        let (p, r) = check(predictors::train(&train.inner, &val.inner, reps.map(|r| &r.inner), &cfg))?;
        let report =
            PyTrainReport { train_loss: r.train_loss, val_loss: r.val_loss, best_epoch: r.best_epoch, best_loss: r.best_loss };
        Ok((Self { inner: p }, report))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: check(load_predictor(&path, None))? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        check(save_predictor(&self.inner, &path))
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.architecture().to_string()
    }

    #[getter]
    fn target(&self) -> String {
        self.inner.target().to_string()
    }

    /// Estimates for every query of `dataset`, one column per pool model.
    #[pyo3(signature = (dataset, reps=None))]
    fn predict(&self, dataset: &PyDataset, reps: Option<&PyRepresentations>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&check(predict_matrix(&self.inner, &dataset.inner, reps.map(|r| &r.inner)))?.values))
    }

    fn __repr__(&self) -> String {
        format!("Predictor({} {})", self.inner.architecture(), self.inner.target())
    }
}

#[pyclass(name = "SweepPoint", module = "costroute_py", frozen, get_all)]
pub struct PySweepPoint {
    pub lambda_: f64,
    pub avg_cost: f64,
    pub avg_perf: f64,
    pub calls: Vec<f64>,
}

#[pyclass(name = "Metrics", module = "costroute_py", frozen, get_all)]
pub struct PyMetrics {
    pub aiq: Option<f64>,
    pub perf_max: f64,
    pub sens_perf: f64,
    pub sens_cost: f64,
    pub max_calls: f64,
}

#[pyclass(name = "Sweep", module = "costroute_py", frozen)]
pub struct PySweep {
    pub inner: SweepResult,
}

#[pymethods]
impl PySweep {
    #[getter]
    fn family(&self) -> String {
        self.inner.family.to_string()
    }

    #[getter]
    fn pool(&self) -> Vec<String> {
        self.inner.pool.clone()
    }

    #[getter]
    fn points(&self) -> Vec<PySweepPoint> {
        self.inner
            .points
            .iter()
            .map(|p| PySweepPoint { lambda_: p.lambda, avg_cost: p.avg_cost, avg_perf: p.avg_perf, calls: p.calls.clone() })
            .collect()
    }

    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas()
    }

    /// `(avg_cost, avg_perf)` of every λ.
    fn cost_perf(&self) -> Vec<(f64, f64)> {
        self.inner.cost_perf()
    }

    #[pyo3(signature = (strongest, absolute=false))]
    fn metrics(&self, strongest: &str, absolute: bool) -> PyResult<PyMetrics> {
        let m = check(evaluation::metrics_report(&self.inner, strongest, absolute))?;
        Ok(PyMetrics {
            aiq: m.aiq,
            perf_max: m.perf_max,
            sens_perf: m.sens_perf,
            sens_cost: m.sens_cost,
            max_calls: m.max_calls,
        })
    }
}

/// Synthetic routing dataset.
#[pyfunction]
#[pyo3(signature = (n=1000, models=5, dim=32, clusters=20, noise=0.1, seed=0))]
fn synth(n: usize, models: usize, dim: usize, clusters: usize, noise: f64, seed: u64) -> PyResult<PyDataset> {
    let spec = SynthSpec { n, models, dim, clusters, noise, ..SynthSpec::default() };
    Ok(PyDataset { inner: check(synth_generate(&spec, seed))? })
}

/// Reward of one model: `family` is "r1" (linear) or "r2" (exponential).
#[pyfunction]
fn reward(quality: f64, cost: f64, family: &str, lam: f64) -> PyResult<f64> {
    let spec = check(RewardSpec::new(self::family(family)?, lam))?;
    Ok(routing::reward(quality, cost, &spec))
}

/// Index of the reward-maximizing model and every model's reward.
#[pyfunction]
fn route(quality: Vec<f64>, cost: Vec<f64>, family: &str, lam: f64) -> PyResult<(usize, Vec<f64>)> {
    let spec = check(RewardSpec::new(self::family(family)?, lam))?;
    let choice = check(routing::route(&quality, &cost, &spec))?;
    Ok((choice.index, choice.rewards))
}

/// Route one embedding with trained predictors. Returns the chosen model and
/// its predicted quality and cost.
#[pyfunction]
#[pyo3(signature = (quality, cost, embedding, family, lam, reps=None, pool=None))]
fn route_query(
    quality: &PyPredictor,
    cost: &PyPredictor,
    embedding: Vec<f64>,
    family: &str,
    lam: f64,
    reps: Option<&PyRepresentations>,
    pool: Option<Vec<String>>,
) -> PyResult<(String, f64, f64)> {
    let spec = check(RewardSpec::new(self::family(family)?, lam))?;
    let pool = match (pool, reps) {
        (Some(p), _) => p,
        (None, Some(r)) => r.inner.models().iter().map(|m| m.model.clone()).collect(),
        (None, None) => return Err(CostrouteError::new_err("pass `pool` or `reps` to name the models")),
    };
    let d = check(route_embedding(&quality.inner, &cost.inner, reps.map(|r| &r.inner), &pool, &embedding, &spec, "query"))?;
    Ok((d.model, d.predicted_quality, d.predicted_cost))
}

/// Upper convex hull of `(cost, perf)` points, cheapest vertex first.
#[pyfunction]
fn pareto_hull(points: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64)>> {
    Ok(check(evaluation::pareto_hull(&points))?.hull)
}

/// Area under the hull of `points` divided by their cost range.
#[pyfunction]
fn aiq(points: Vec<(f64, f64)>) -> PyResult<f64> {
    check(evaluation::pareto_hull(&points).and_then(|c| evaluation::aiq(&c)))
}

#[pyfunction]
#[pyo3(signature = (lambdas, values, absolute=false))]
fn lambda_sensitivity(lambdas: Vec<f64>, values: Vec<f64>, absolute: bool) -> PyResult<f64> {
    check(evaluation::lambda_sensitivity(&lambdas, &values, absolute))
}

#[pyfunction]
fn default_lambda_grid() -> Vec<f64> {
    evaluation::default_lambda_grid()
}

#[pyfunction]
fn log_grid(lo: f64, hi: f64, n: usize) -> PyResult<Vec<f64>> {
    check(evaluation::log_grid(lo, hi, n))
}

/// Sweep the oracle router, which sees the true quality and cost.
#[pyfunction]
#[pyo3(signature = (dataset, family="r2", lambdas=None))]
fn sweep_oracle(dataset: &PyDataset, family: &str, lambdas: Option<Vec<f64>>) -> PyResult<PySweep> {
    let lambdas = lambdas.unwrap_or_else(evaluation::default_lambda_grid);
    let s = check(evaluation::sweep(&OracleRouter, &dataset.inner, &lambdas, self::family(family)?))?;
    Ok(PySweep { inner: s })
}

/// Sweep a router driven by trained quality and cost predictors.
#[pyfunction]
#[pyo3(signature = (quality, cost, dataset, reps=None, family="r2", lambdas=None))]
fn sweep_predictors(
    quality: &PyPredictor,
    cost: &PyPredictor,
    dataset: &PyDataset,
    reps: Option<&PyRepresentations>,
    family: &str,
    lambdas: Option<Vec<f64>>,
) -> PyResult<PySweep> {
    let lambdas = lambdas.unwrap_or_else(evaluation::default_lambda_grid);
    let router = check(predictive_router(&quality.inner, &cost.inner, &dataset.inner, reps.map(|r| &r.inner)))?;
    let s = check(evaluation::sweep(&router, &dataset.inner, &lambdas, self::family(family)?))?;
    Ok(PySweep { inner: s })
}

/// Run the experiment described by a TOML config file and return the text report.
#[pyfunction]
fn run_experiment(config: PathBuf) -> PyResult<String> {
    let cfg = check(ExperimentConfig::load(&config))?;
    Ok(check(experiment::run_experiment(&cfg))?.to_text())
}

#[pymodule]
pub fn costroute_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CostrouteError", m.py().get_type::<CostrouteError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRepresentations>()?;
    m.add_class::<PyPredictor>()?;
    m.add_class::<PyTrainReport>()?;
    m.add_class::<PySweep>()?;
    m.add_class::<PySweepPoint>()?;
    m.add_class::<PyMetrics>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(route, m)?)?;
    m.add_function(wrap_pyfunction!(route_query, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_hull, m)?)?;
    m.add_function(wrap_pyfunction!(aiq, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(default_lambda_grid, m)?)?;
    m.add_function(wrap_pyfunction!(log_grid, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_predictors, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
