//! Single-head cross-attention predictor.
//!
//! The query embedding attends over the model representations:
//!
//! ```text
//! q   = Wqᵀ e                 keys  kᵢ = Wkᵀ Iᵢ     values vᵢ = Wvᵀ Iᵢ
//! α   = softmax(q·kᵢ / √d)    context c = Σ αᵢ vᵢ
//! rᵢ  = w · (c ⊙ vᵢ) + b      ŷᵢ = head(rᵢ)
//! ```
//!
//! Keys and values depend only on the representations, so for a batch they
//! are computed once and shared by every query.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::train::Network;
use super::Head;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub query_dim: usize,
    pub rep_dim: usize,
    pub internal_dim: usize,
}

impl AttentionShape {
    pub fn num_params(&self) -> usize {
        let AttentionShape { query_dim, rep_dim, internal_dim: d } = *self;
        query_dim * d + 2 * rep_dim * d + d + 1
    }

    fn offsets(&self) -> [usize; 5] {
        let AttentionShape { query_dim, rep_dim, internal_dim: d } = *self;
        let wk = query_dim * d;
        let wv = wk + rep_dim * d;
        let w = wv + rep_dim * d;
        [0, wk, wv, w, w + d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionNet {
    pub(crate) shape: AttentionShape,
    pub(crate) head: Head,
    pub(crate) params: Vec<f64>,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub query: Array1<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    pub logits: Array1<f64>,
    pub weights: Array1<f64>,
    pub context: Array1<f64>,
    pub raw: Array1<f64>,
    pub output: Array1<f64>,
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

impl AttentionNet {
    pub fn zeros(shape: AttentionShape, head: Head) -> Self {
        Self { shape, head, params: vec![0.0; shape.num_params()] }
    }

    pub fn from_params(shape: AttentionShape, head: Head, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.num_params() {
            return Err(Error::Shape(format!(
                "attention expects {} parameters, got {}",
                shape.num_params(),
                params.len()
            )));
        }
        Ok(Self { shape, head, params })
    }

    pub fn shape(&self) -> AttentionShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn block(&self, i: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        let o = self.shape.offsets()[i];
        ArrayView2::from_shape((rows, cols), &self.params[o..o + rows * cols]).expect("layout")
    }

    pub fn w_query(&self) -> ArrayView2<'_, f64> {
        self.block(0, self.shape.query_dim, self.shape.internal_dim)
    }

    pub fn w_key(&self) -> ArrayView2<'_, f64> {
        self.block(1, self.shape.rep_dim, self.shape.internal_dim)
    }

    pub fn w_value(&self) -> ArrayView2<'_, f64> {
        self.block(2, self.shape.rep_dim, self.shape.internal_dim)
    }

    pub fn readout(&self) -> ArrayView1<'_, f64> {
        let o = self.shape.offsets()[3];
        ArrayView1::from(&self.params[o..o + self.shape.internal_dim])
    }

    pub fn bias(&self) -> f64 {
        self.params[self.shape.offsets()[4]]
    }

    pub(crate) fn bias_mut(&mut self) -> &mut f64 {
        let o = self.shape.offsets()[4];
        &mut self.params[o]
    }

    fn check(&self, emb: &ArrayView2<f64>, reps: &ArrayView2<f64>) -> Result<()> {
        if emb.ncols() != self.shape.query_dim || reps.ncols() != self.shape.rep_dim {
            return Err(Error::Shape(format!(
                "attention built for query dim {} / representation dim {}, got {} / {}",
                self.shape.query_dim,
                self.shape.rep_dim,
                emb.ncols(),
                reps.ncols()
            )));
        }
        if reps.nrows() == 0 {
            return Err(Error::Shape("attention needs at least one model".into()));
        }
        Ok(())
    }

    /// Forward pass for one query, keeping every intermediate.
    pub fn forward_one(&self, emb: ArrayView1<f64>, reps: ArrayView2<f64>) -> Result<AttentionTrace> {
        let e = emb.insert_axis(Axis(0));
        self.check(&e, &reps)?;
        let (keys, values) = self.keys_values(reps);
        let t = self.infer(emb.dot(&self.w_query()), keys, values);
        if t.output.iter().chain(&t.weights).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("attention forward pass".into()));
        }
        Ok(t)
    }

    /// Batch inference. Each model's output depends only on the set of
    /// representations, not their order: reordering the rows of `reps`
    /// reorders the output columns bit for bit.
    pub fn predict(&self, emb: ArrayView2<f64>, reps: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&emb, &reps)?;
        let (keys, values) = self.keys_values(reps);
        let mut out = Array2::zeros((emb.nrows(), reps.nrows()));
        for (e, mut row) in emb.outer_iter().zip(out.outer_iter_mut()) {
            let t = self.infer(e.dot(&self.w_query()), keys.clone(), values.clone());
            row.assign(&t.output);
        }
        Ok(out)
    }

    fn keys_values(&self, reps: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let d = self.shape.internal_dim;
        let (mut keys, mut values) = (Array2::zeros((reps.nrows(), d)), Array2::zeros((reps.nrows(), d)));
        for (i, r) in reps.outer_iter().enumerate() {
            keys.row_mut(i).assign(&r.dot(&self.w_key()));
            values.row_mut(i).assign(&r.dot(&self.w_value()));
        }
        (keys, values)
    }

    /// Sums over models are taken in sorted order so they do not depend on
    /// the order of the pool.
    fn infer(&self, query: Array1<f64>, keys: Array2<f64>, values: Array2<f64>) -> AttentionTrace {
        let scale = (self.shape.internal_dim as f64).sqrt();
        let logits = keys.dot(&query) / scale;
        let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps = logits.mapv(|z| (z - max).exp());
        let total = ordered_sum(exps.to_vec());
        let weights = exps / total;
        let context: Array1<f64> = values
            .columns()
            .into_iter()
            .map(|col| ordered_sum(col.iter().zip(&weights).map(|(v, a)| a * v).collect()))
            .collect();
        let weighted = &context * &self.readout();
        let raw = values.dot(&weighted) + self.bias();
        let output = raw.mapv(|r| self.head.apply(r));
        AttentionTrace { query, keys, values, logits, weights, context, raw, output }
    }

    /// Mean squared error against `targets` and its gradient with respect to
    /// the flat parameter vector.
    pub fn loss_and_gradient(
        &self,
        emb: ArrayView2<f64>,
        reps: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(&emb, &reps)?;
        if targets.dim() != (emb.nrows(), reps.nrows()) {
            return Err(Error::Shape(format!(
                "targets are {:?}, expected ({}, {})",
                targets.dim(),
                emb.nrows(),
                reps.nrows()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.loss_grad(emb, reps, targets, &mut grad);
        Ok((loss, grad))
    }
}

struct Cache {
    keys: Array2<f64>,
    values: Array2<f64>,
    query: Array2<f64>,
    weights: Array2<f64>,
    context: Array2<f64>,
    raw: Array2<f64>,
}

impl AttentionNet {
    fn forward_cached(&self, emb: ArrayView2<f64>, reps: ArrayView2<f64>) -> Cache {
        let scale = (self.shape.internal_dim as f64).sqrt();
        let keys = reps.dot(&self.w_key());
        let values = reps.dot(&self.w_value());
        let query = emb.dot(&self.w_query());
        let weights = softmax_rows(&(query.dot(&keys.t()) / scale));
        let context = weights.dot(&values);
        let raw = (&context * &self.readout()).dot(&values.t()) + self.bias();
        Cache { keys, values, query, weights, context, raw }
    }
}

impl Network for AttentionNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, emb: ArrayView2<f64>, reps: ArrayView2<f64>) -> Array2<f64> {
        let head = self.head;
        self.forward_cached(emb, reps).raw.mapv(|r| head.apply(r))
    }

    fn loss_grad(
        &self,
        emb: ArrayView2<f64>,
        reps: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> f64 {
        let AttentionShape { query_dim, rep_dim, internal_dim: d } = self.shape;
        let scale = (d as f64).sqrt();
        let c = self.forward_cached(emb, reps);
        let n = c.raw.len() as f64;
        let head = self.head;

        let mut loss = 0.0;
        let mut g_raw = c.raw.clone();
        for (g, t) in g_raw.iter_mut().zip(targets) {
            let r = *g;
            let diff = head.apply(r) - t;
            loss += diff * diff;
            *g = 2.0 * diff / n * head.derivative(r);
        }
        loss /= n;

        let w = self.readout();
        // raw = (context ⊙ w) · valuesᵀ + b
        let g_cw = g_raw.dot(&c.values);
        let mut g_values = g_raw.t().dot(&(&c.context * &w));
        let g_w = (&g_cw * &c.context).sum_axis(Axis(0));
        let g_context = &g_cw * &w;
        // context = weights · values
        let g_weights = g_context.dot(&c.values.t());
        g_values += &c.weights.t().dot(&g_context);
        // weights = softmax(logits)
        let inner = (&g_weights * &c.weights).sum_axis(Axis(1)).insert_axis(Axis(1));
        let g_logits = &c.weights * &(&g_weights - &inner) / scale;
        // logits = query · keysᵀ / √d
        let g_query = g_logits.dot(&c.keys);
        let g_keys = g_logits.t().dot(&c.query);

        let [_, o_wk, o_wv, o_w, o_b] = self.shape.offsets();
        let mut put = |offset: usize, m: &Array2<f64>| {
            for (g, v) in grad[offset..offset + m.len()].iter_mut().zip(m.iter()) {
                *g += v;
            }
        };
        put(0, &emb.t().dot(&g_query));
        put(o_wk, &reps.t().dot(&g_keys));
        put(o_wv, &reps.t().dot(&g_values));
        debug_assert_eq!(o_wk, query_dim * d);
        debug_assert_eq!(o_w - o_wv, rep_dim * d);
        for (g, v) in grad[o_w..o_b].iter_mut().zip(g_w.iter()) {
            *g += v;
        }
        grad[o_b] += g_raw.sum();
        loss
    }
}
