//! Fully connected predictors: `regression_emb`, `fcn2`, `fcn3` and their
//! embedding-augmented variants.
//!
//! Plain variants map a query embedding to one output per model. The `*_emb`
//! variants score one (query, model) pair at a time from the concatenation
//! `[e; Iₘ]`, so the pool can change without retraining.

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use super::train::Network;
use super::Head;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    /// Layer widths, input first and output last.
    pub(crate) dims: Vec<usize>,
    pub(crate) head: Head,
    /// Inputs are `[query; representation]` pairs rather than queries.
    pub(crate) pairwise: bool,
    pub(crate) params: Vec<f64>,
}

pub fn mlp_num_params(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpNet {
    pub fn zeros(dims: Vec<usize>, head: Head, pairwise: bool) -> Self {
        let n = mlp_num_params(&dims);
        Self { dims, head, pairwise, params: vec![0.0; n] }
    }

    pub fn from_params(dims: Vec<usize>, head: Head, pairwise: bool, params: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {dims:?}")));
        }
        let expected = mlp_num_params(&dims);
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "network {dims:?} expects {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { dims, head, pairwise, params })
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// (weight offset, bias offset) of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let w = mlp_num_params(&self.dims[..=l]);
        (w, w + self.dims[l] * self.dims[l + 1])
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (o, _) = self.offsets(l);
        let shape = (self.dims[l], self.dims[l + 1]);
        ArrayView2::from_shape(shape, &self.params[o..o + shape.0 * shape.1]).expect("layout")
    }

    fn bias_slice(&self, l: usize) -> &[f64] {
        let (_, o) = self.offsets(l);
        &self.params[o..o + self.dims[l + 1]]
    }

    pub(crate) fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, o) = self.offsets(l);
        let n = self.dims[l + 1];
        &mut self.params[o..o + n]
    }

    pub(crate) fn weight_offset(&self, l: usize) -> usize {
        self.offsets(l).0
    }

    fn inputs(&self, emb: ArrayView2<f64>, reps: ArrayView2<f64>) -> Array2<f64> {
        if !self.pairwise {
            return emb.to_owned();
        }
        let (b, k) = (emb.nrows(), reps.nrows());
        let mut x = Array2::zeros((b * k, emb.ncols() + reps.ncols()));
        for (row, mut out) in x.outer_iter_mut().enumerate() {
            let (q, m) = (row / k, row % k);
            let joined = concatenate![Axis(0), emb.row(q), reps.row(m)];
            out.assign(&joined);
        }
        x
    }

    pub fn check(&self, emb: &ArrayView2<f64>, reps: &ArrayView2<f64>) -> Result<()> {
        let in_dim = if self.pairwise { emb.ncols() + reps.ncols() } else { emb.ncols() };
        if in_dim != self.dims[0] {
            return Err(Error::Shape(format!(
                "network input width is {}, got {in_dim}",
                self.dims[0]
            )));
        }
        if self.pairwise && reps.nrows() == 0 {
            return Err(Error::Shape("no model representations given".into()));
        }
        Ok(())
    }

    /// Raw outputs plus every layer's input (post-activation).
    fn forward_raw(&self, x: Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut acts = vec![x];
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let mut z = acts[l].dot(&self.weight(l));
            for mut row in z.rows_mut() {
                for (v, b) in row.iter_mut().zip(self.bias_slice(l)) {
                    *v += b;
                }
            }
            if l == last {
                return (acts, z);
            }
            z.mapv_inplace(|v| v.max(0.0));
            acts.push(z);
        }
        unreachable!("at least one layer")
    }

    fn to_batch(&self, raw: Array2<f64>, batch: usize) -> Array2<f64> {
        if self.pairwise {
            let k = raw.len() / batch.max(1);
            raw.into_shape_with_order((batch, k)).expect("pairs are query-major")
        } else {
            raw
        }
    }

    pub fn predict(&self, emb: ArrayView2<f64>, reps: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&emb, &reps)?;
        Ok(self.forward(emb, reps))
    }
}

impl Network for MlpNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, emb: ArrayView2<f64>, reps: ArrayView2<f64>) -> Array2<f64> {
        let (_, raw) = self.forward_raw(self.inputs(emb, reps));
        let head = self.head;
        self.to_batch(raw.mapv(|r| head.apply(r)), emb.nrows())
    }

    fn loss_grad(
        &self,
        emb: ArrayView2<f64>,
        reps: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> f64 {
        let (acts, raw) = self.forward_raw(self.inputs(emb, reps));
        let n = raw.len() as f64;
        let head = self.head;
        let mut loss = 0.0;
        let mut g = raw;
        // `g` is in query-major pair order, which matches the row-major target order.
        for (v, t) in g.iter_mut().zip(targets.iter()) {
            let r = *v;
            let diff = head.apply(r) - t;
            loss += diff * diff;
            *v = 2.0 * diff / n * head.derivative(r);
        }
        for l in (0..self.num_layers()).rev() {
            let gw = acts[l].t().dot(&g);
            let (ow, ob) = self.offsets(l);
            for (dst, v) in grad[ow..ob].iter_mut().zip(gw.iter()) {
                *dst += v;
            }
            for (dst, v) in grad[ob..ob + self.dims[l + 1]].iter_mut().zip(g.sum_axis(Axis(0))) {
                *dst += v;
            }
            if l > 0 {
                let mut ga = g.dot(&self.weight(l).t());
                ga.zip_mut_with(&acts[l], |ga, &a| {
                    if a <= 0.0 {
                        *ga = 0.0;
                    }
                });
                g = ga;
            }
        }
        loss / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, dims: Vec<usize>, head: Head, pairwise: bool) -> MlpNet {
        let n = mlp_num_params(&dims);
        MlpNet::from_params(dims, head, pairwise, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for (dims, pairwise, head) in [
            (vec![5, 6, 3], false, Head::Logistic),
            (vec![5, 7, 4, 3], false, Head::Softplus),
            (vec![8, 6, 1], true, Head::Logistic),
            (vec![8, 1], true, Head::Identity),
        ] {
            let mut net = random(&mut rng, dims, head, pairwise);
            let emb = matrix(&mut rng, 4, 5);
            let reps = matrix(&mut rng, 3, 3);
            let targets = Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..1.0));
            let mut grad = vec![0.0; net.params.len()];
            net.loss_grad(emb.view(), reps.view(), targets.view(), &mut grad);
            let mut scratch = vec![0.0; grad.len()];
            for i in 0..net.params.len() {
                let p = net.params[i];
                net.params[i] = p + h;
                let up = net.loss_grad(emb.view(), reps.view(), targets.view(), &mut scratch);
                net.params[i] = p - h;
                let down = net.loss_grad(emb.view(), reps.view(), targets.view(), &mut scratch);
                net.params[i] = p;
                let fd = (up - down) / (2.0 * h);
                let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(err < 1e-4, "param {i}: analytic {} vs numeric {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn pairwise_outputs_are_query_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = random(&mut rng, vec![6, 4, 1], Head::Softplus, true);
        let emb = matrix(&mut rng, 3, 4);
        let reps = matrix(&mut rng, 5, 2);
        let all = net.predict(emb.view(), reps.view()).unwrap();
        assert_eq!(all.dim(), (3, 5));
        for q in 0..3 {
            for m in 0..5 {
                let one = net
                    .predict(emb.slice(ndarray::s![q..q + 1, ..]), reps.slice(ndarray::s![m..m + 1, ..]))
                    .unwrap();
                assert!((one[(0, 0)] - all[(q, m)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let net = MlpNet::zeros(vec![6, 4, 1], Head::Logistic, true);
        let out = net.predict(Array2::ones((2, 4)).view(), Array2::ones((3, 2)).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let net = MlpNet::zeros(vec![6, 1], Head::Logistic, true);
        assert!(net.predict(Array2::ones((2, 4)).view(), Array2::ones((3, 3)).view()).is_err());
        assert!(MlpNet::from_params(vec![3, 2], Head::Identity, false, vec![0.0; 7]).is_err());
    }
}
