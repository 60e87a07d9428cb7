//! Quality and cost predictors.
//!
//! Every predictor maps a batch of query embeddings to one estimate per pool
//! model. The routing policy never sees the predictors' internals, only the
//! resulting [`PredictionMatrix`].

mod artifact;
pub mod attention;
pub mod knn;
pub mod linear;
pub mod mlp;
pub mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use artifact::{load_predictor, predictor_from_bytes, predictor_to_bytes, save_predictor, ARTIFACT_VERSION};
pub use attention::{softmax_rows, AttentionNet, AttentionShape, AttentionTrace};
pub use knn::KnnIndex;
pub use linear::{fit_least_squares, LinearFit, RIDGE};
pub use mlp::MlpNet;
pub use train::{cosine_lr, Adam, TrainOptions, TrainReport};

use crate::dataset::RoutingDataset;
use crate::error::{Error, Result};
use crate::representations::RepresentationSet;
use train::{fit, Network, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Attention,
    Regression,
    Fcn2,
    Fcn3,
    RegressionEmb,
    Fcn2Emb,
    Fcn3Emb,
    Knn,
}

impl Architecture {
    pub const ALL: [Architecture; 8] = [
        Architecture::Attention,
        Architecture::Regression,
        Architecture::Fcn2,
        Architecture::Fcn3,
        Architecture::RegressionEmb,
        Architecture::Fcn2Emb,
        Architecture::Fcn3Emb,
        Architecture::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Attention => "attention",
            Architecture::Regression => "regression",
            Architecture::Fcn2 => "fcn2",
            Architecture::Fcn3 => "fcn3",
            Architecture::RegressionEmb => "regression_emb",
            Architecture::Fcn2Emb => "fcn2_emb",
            Architecture::Fcn3Emb => "fcn3_emb",
            Architecture::Knn => "knn",
        }
    }

    /// Whether the predictor consumes model representations.
    pub fn uses_representations(self) -> bool {
        matches!(
            self,
            Architecture::Attention
                | Architecture::RegressionEmb
                | Architecture::Fcn2Emb
                | Architecture::Fcn3Emb
        )
    }

    pub fn default_hidden(self) -> Vec<usize> {
        match self {
            Architecture::Fcn2 | Architecture::Fcn2Emb => vec![256],
            Architecture::Fcn3 | Architecture::Fcn3Emb => vec![256, 64],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "attn" => "attention",
            "reg" => "regression",
            "reg_emb" => "regression_emb",
            other => other,
        };
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == alias)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Quality,
    Cost,
}

impl Target {
    pub fn head(self) -> Head {
        match self {
            Target::Quality => Head::Logistic,
            Target::Cost => Head::Softplus,
        }
    }

    pub fn targets(self, ds: &RoutingDataset) -> Array2<f64> {
        match self {
            Target::Quality => ds.quality_matrix(),
            Target::Cost => ds.cost_matrix(),
        }
    }

    /// Clamp a raw estimate into the target's range.
    pub fn clamp(self, x: f64) -> f64 {
        match self {
            Target::Quality => x.clamp(0.0, 1.0),
            Target::Cost => x.max(0.0),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quality" => Ok(Target::Quality),
            "cost" => Ok(Target::Cost),
            other => Err(Error::Config(format!("unknown target `{other}` (expected quality or cost)"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Quality => "quality",
            Target::Cost => "cost",
        })
    }
}

/// Output non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Logistic,
    Softplus,
    Identity,
}

impl Head {
    pub fn apply(self, r: f64) -> f64 {
        match self {
            Head::Logistic => logistic(r),
            Head::Softplus => softplus(r),
            Head::Identity => r,
        }
    }

    pub fn derivative(self, r: f64) -> f64 {
        match self {
            Head::Logistic => {
                let s = logistic(r);
                s * (1.0 - s)
            }
            Head::Softplus => logistic(r),
            Head::Identity => 1.0,
        }
    }
}

pub fn logistic(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(r: f64) -> f64 {
    if r > 30.0 {
        r
    } else {
        r.exp().ln_1p()
    }
}

/// `x` such that `softplus(x) = y`, for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub architecture: Architecture,
    pub target: Target,
    pub internal_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub k: usize,
}

impl PredictorConfig {
    /// Defaults for `architecture` predicting `target`: learning rate 1e-3 and
    /// weight decay 1e-5 for quality, 1e-4 and 1e-7 for cost; batch 1024,
    /// 1000 epochs, internal dimension 20.
    pub fn new(architecture: Architecture, target: Target) -> Self {
        let (learning_rate, weight_decay) = match target {
            Target::Quality => (1e-3, 1e-5),
            Target::Cost => (1e-4, 1e-7),
        };
        Self {
            architecture,
            target,
            internal_dim: 20,
            hidden_dims: architecture.default_hidden(),
            learning_rate,
            batch_size: 1024,
            weight_decay,
            epochs: 1000,
            seed: 0,
            k: knn::DEFAULT_K,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{} predictor: {m}", self.architecture)));
        if self.internal_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("dimensions must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.k == 0 {
            return bad("batch size, epochs and k must be positive");
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Model {
    Attention(AttentionNet),
    Mlp(MlpNet),
    Linear(LinearFit),
    Knn(KnnIndex),
}

/// A trained quality or cost predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub(crate) config: PredictorConfig,
    pub(crate) query_dim: usize,
    /// Representation length; 0 when the architecture does not use them.
    pub(crate) rep_dim: usize,
    /// Pool size at training time.
    pub(crate) num_models: usize,
    pub(crate) model: Model,
}

impl Predictor {
    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn target(&self) -> Target {
        self.config.target
    }

    pub fn query_dim(&self) -> usize {
        self.query_dim
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_dim
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn attention(&self) -> Option<&AttentionNet> {
        match &self.model {
            Model::Attention(net) => Some(net),
            _ => None,
        }
    }

    /// Per-model estimates for each row of `emb`. `reps` (one row per model)
    /// is required by the representation-based architectures and decides the
    /// pool they score; the others always score their training pool.
    pub fn predict(&self, emb: ArrayView2<f64>, reps: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        if emb.ncols() != self.query_dim {
            return Err(Error::Shape(format!(
                "predictor expects {}-dimensional embeddings, got {}",
                self.query_dim,
                emb.ncols()
            )));
        }
        let need_reps = || {
            reps.ok_or_else(|| {
                Error::Invalid(format!("{} predictor needs model representations", self.architecture()))
            })
        };
        let target = self.target();
        match &self.model {
            Model::Attention(net) => net.predict(emb, need_reps()?),
            Model::Mlp(net) if net.pairwise => net.predict(emb, need_reps()?),
            Model::Mlp(net) => net.predict(emb, Array2::zeros((0, 0)).view()),
            Model::Linear(fit) => Ok(fit.predict(emb)?.mapv(|x| target.clamp(x))),
            Model::Knn(index) => index.predict(emb),
        }
    }

    /// Dense parameter vector of gradient-trained predictors.
    pub fn params(&self) -> Option<&[f64]> {
        match &self.model {
            Model::Attention(net) => Some(net.params()),
            Model::Mlp(net) => Some(net.params()),
            _ => None,
        }
    }
}

/// Estimates for every (query, model) pair of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub values: Array2<f64>,
    pub target: Target,
}

impl PredictionMatrix {
    /// The dataset's own quality or cost, used for oracle cells.
    pub fn ground_truth(ds: &RoutingDataset, target: Target) -> Self {
        Self { values: target.targets(ds), target }
    }

    pub fn num_queries(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_models(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(i)
    }
}

fn representation_matrix(
    arch: Architecture,
    reps: Option<&RepresentationSet>,
    pool: &[String],
) -> Result<Option<Array2<f64>>> {
    if !arch.uses_representations() {
        return Ok(None);
    }
    let reps = reps.ok_or_else(|| Error::Invalid(format!("{arch} predictor needs model representations")))?;
    reps.matrix_for(pool).map(Some)
}

/// Run `predictor` on every query of `ds`.
pub fn predict_matrix(
    predictor: &Predictor,
    ds: &RoutingDataset,
    reps: Option<&RepresentationSet>,
) -> Result<PredictionMatrix> {
    let rep_matrix = representation_matrix(predictor.architecture(), reps, ds.pool())?;
    let emb = ds.embedding_matrix();
    let values = predictor.predict(emb.view(), rep_matrix.as_ref().map(|m| m.view()))?;
    if values.ncols() != ds.num_models() {
        return Err(Error::Shape(format!(
            "predictor scores {} models, dataset pool has {}",
            values.ncols(),
            ds.num_models()
        )));
    }
    for (row, r) in values.outer_iter().zip(ds.records()) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("prediction for query `{}`", r.id)));
        }
    }
    Ok(PredictionMatrix { values, target: predictor.target() })
}

fn xavier(rng: &mut ChaCha8Rng, params: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for p in params {
        *p = dist.sample(rng);
    }
}

fn init_attention(shape: AttentionShape, head: Head, seed: u64) -> AttentionNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = AttentionNet::zeros(shape, head);
    let AttentionShape { query_dim, rep_dim, internal_dim: d } = shape;
    let blocks = [(query_dim, d), (rep_dim, d), (rep_dim, d), (d, 1)];
    let mut offset = 0;
    for (fan_in, fan_out) in blocks {
        let n = fan_in * fan_out;
        xavier(&mut rng, &mut net.params[offset..offset + n], fan_in, fan_out);
        offset += n;
    }
    net
}

fn init_mlp(dims: Vec<usize>, head: Head, pairwise: bool, seed: u64) -> MlpNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpNet::zeros(dims, head, pairwise);
    for l in 0..net.num_layers() {
        let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
        let o = net.weight_offset(l);
        xavier(&mut rng, &mut net.params[o..o + fan_in * fan_out], fan_in, fan_out);
    }
    net
}

/// Closed-form linear predictor with intercept.
pub fn fit_regression(train: &RoutingDataset, target: Target) -> Result<Predictor> {
    let mut config = PredictorConfig::new(Architecture::Regression, target);
    config.epochs = 1;
    let fit = fit_least_squares(train.embedding_matrix().view(), target.targets(train).view(), true, RIDGE)?;
    Ok(Predictor {
        config,
        query_dim: train.dim(),
        rep_dim: 0,
        num_models: train.num_models(),
        model: Model::Linear(fit),
    })
}

/// Train a predictor. `val` drives best-snapshot selection for the
/// gradient-trained architectures and is ignored by the others.
pub fn train(
    train_ds: &RoutingDataset,
    val_ds: &RoutingDataset,
    reps: Option<&RepresentationSet>,
    config: &PredictorConfig,
) -> Result<(Predictor, TrainReport)> {
    config.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let arch = config.architecture;
    let target = config.target;
    let k = train_ds.num_models();
    let dq = train_ds.dim();

    match arch {
        Architecture::Regression => {
            let mut p = fit_regression(train_ds, target)?;
            p.config = config.clone();
            return Ok((p, TrainReport::default()));
        }
        Architecture::Knn => {
            let index = KnnIndex::new(train_ds.embedding_matrix(), target.targets(train_ds), config.k)?;
            let p = Predictor { config: config.clone(), query_dim: dq, rep_dim: 0, num_models: k, model: Model::Knn(index) };
            return Ok((p, TrainReport::default()));
        }
        _ => {}
    }

    let rep_matrix = representation_matrix(arch, reps, train_ds.pool())?;
    let rep_dim = rep_matrix.as_ref().map_or(0, |m| m.ncols());
    let rep_view = rep_matrix.as_ref().map_or(Array2::zeros((k, 0)), |m| m.clone());
    let head = target.head();
    let train_emb = train_ds.embedding_matrix();
    let train_t = target.targets(train_ds);
    let val_emb = val_ds.embedding_matrix();
    let val_t = target.targets(val_ds);
    if !val_ds.is_empty() && (val_ds.dim() != dq || val_ds.pool() != train_ds.pool()) {
        return Err(Error::Shape("validation set does not match the training pool".into()));
    }
    let mean_cost = train_ds.cost_matrix().mean().unwrap_or(0.0);
    let cost_bias = (target == Target::Cost && mean_cost > 0.0).then(|| inverse_softplus(mean_cost));

    let data = || TrainData { emb: train_emb.view(), targets: train_t.view() };
    let val = || Some(TrainData { emb: val_emb.view(), targets: val_t.view() });
    let opts = config.train_options();

    let (model, report) = if arch == Architecture::Attention {
        let shape = AttentionShape { query_dim: dq, rep_dim, internal_dim: config.internal_dim };
        let mut net = init_attention(shape, head, config.seed);
        if let Some(b) = cost_bias {
            *net.bias_mut() = b;
        }
        let report = fit(&mut net, rep_view.view(), data(), val(), &opts)?;
        (Model::Attention(net), report)
    } else {
        let pairwise = arch.uses_representations();
        let mut dims = vec![if pairwise { dq + rep_dim } else { dq }];
        dims.extend(config.hidden_dims.iter().copied());
        dims.push(if pairwise { 1 } else { k });
        let mut net = init_mlp(dims, head, pairwise, config.seed);
        if let Some(b) = cost_bias {
            let last = net.num_layers() - 1;
            net.bias_mut(last).iter_mut().for_each(|x| *x = b);
        }
        let report = fit(&mut net, rep_view.view(), data(), val(), &opts)?;
        (Model::Mlp(net), report)
    };
    let p = Predictor { config: config.clone(), query_dim: dq, rep_dim, num_models: k, model };
    Ok((p, report))
}

/// Gradient-trained linear model (identity head, MSE) on raw matrices.
pub fn fit_linear_gradient(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    opts: &TrainOptions,
) -> Result<(LinearFit, TrainReport)> {
    let (d, k) = (x.ncols(), targets.ncols());
    let mut net = init_mlp(vec![d, k], Head::Identity, false, opts.seed);
    let empty = Array2::zeros((k, 0));
    let report = fit(&mut net, empty.view(), TrainData { emb: x, targets }, None, opts)?;
    let mut weights = Array2::zeros((d + 1, k));
    weights.slice_mut(ndarray::s![..d, ..]).assign(&net.weight(0));
    let bias_off = net.weight_offset(0) + d * k;
    for j in 0..k {
        weights[(d, j)] = net.params[bias_off + j];
    }
    Ok((LinearFit { weights, intercept: true }, report))
}
