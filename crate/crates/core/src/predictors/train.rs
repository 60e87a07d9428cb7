//! Mini-batch MSE training: Adam with decoupled weight decay, a per-epoch
//! cosine-annealed learning rate and best-validation snapshotting.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// A differentiable model with a flat parameter vector.
pub(crate) trait Network {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Head outputs, one row per query and one column per model.
    fn forward(&self, emb: ArrayView2<f64>, reps: ArrayView2<f64>) -> Array2<f64>;
    /// Mean squared error over the batch; the gradient is written into `grad`.
    fn loss_grad(
        &self,
        emb: ArrayView2<f64>,
        reps: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Sample-weighted mean batch loss of every epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE after every epoch (empty when there is no validation set).
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Learning rate at epoch `t` of `total`: `η_max/2 · (1 + cos(π t / T))`.
pub fn cosine_lr(max_lr: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return max_lr;
    }
    let frac = epoch.min(total) as f64 / total as f64;
    0.5 * max_lr * (1.0 + (std::f64::consts::PI * frac).cos())
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    weight_decay: f64,
}

impl Adam {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            weight_decay,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p *= decay;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        }
    }
}

pub(crate) fn mse(pred: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

pub(crate) struct TrainData<'a> {
    pub emb: ArrayView2<'a, f64>,
    pub targets: ArrayView2<'a, f64>,
}

pub(crate) fn fit<N: Network>(
    net: &mut N,
    reps: ArrayView2<f64>,
    train: TrainData<'_>,
    val: Option<TrainData<'_>>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let n = train.emb.nrows();
    if n == 0 {
        return Err(Error::Dataset("empty training set".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(Error::Config("batch size and epochs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x005e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; net.params().len()];
    let mut adam = Adam::new(grad.len(), opts.weight_decay);
    let mut report = TrainReport {
        best_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best = net.params().to_vec();

    for epoch in 0..opts.epochs {
        let lr = cosine_lr(opts.learning_rate, epoch, opts.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let emb = train.emb.select(Axis(0), chunk);
            let tgt = train.targets.select(Axis(0), chunk);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = net.loss_grad(emb.view(), reps, tgt.view(), &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.update(net.params_mut(), &grad, lr);
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / n as f64;
        report.train_loss.push(train_loss);

        let score = match &val {
            Some(v) if v.emb.nrows() > 0 => {
                let l = mse(net.forward(v.emb, reps).view(), v.targets);
                report.val_loss.push(l);
                l
            }
            _ => train_loss,
        };
        if !score.is_finite() {
            return Err(Error::Diverged { epoch, loss: score });
        }
        if score < report.best_loss {
            report.best_loss = score;
            report.best_epoch = epoch;
            best.copy_from_slice(net.params());
        }
    }
    net.params_mut().copy_from_slice(&best);
    Ok(report)
}
