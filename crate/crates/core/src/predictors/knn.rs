//! Nearest-neighbour baseline: per-model mean quality (or cost) of the `k`
//! closest training queries.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    pub(crate) embeddings: Array2<f64>,
    /// Quality or cost of each training query, depending on the target.
    pub(crate) targets: Array2<f64>,
    pub(crate) k: usize,
}

impl KnnIndex {
    pub fn new(embeddings: Array2<f64>, targets: Array2<f64>, k: usize) -> Result<Self> {
        let n = embeddings.nrows();
        if n == 0 {
            return Err(Error::Dataset("KNN needs a non-empty training set".into()));
        }
        if targets.nrows() != n {
            return Err(Error::Shape("KNN targets do not match the training rows".into()));
        }
        if k == 0 || k > n {
            return Err(Error::Config(format!("KNN needs 1 <= k <= {n}, got {k}")));
        }
        Ok(Self { embeddings, targets, k })
    }

    /// Indices of the `k` nearest training rows; ties keep record order.
    pub fn neighbours(&self, query: ArrayView1<f64>) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = self
            .embeddings
            .outer_iter()
            .enumerate()
            .map(|(i, row)| {
                let d: f64 = row.iter().zip(query.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    pub fn predict(&self, emb: ArrayView2<f64>) -> Result<Array2<f64>> {
        if emb.ncols() != self.embeddings.ncols() {
            return Err(Error::Shape(format!(
                "KNN index has dimension {}, query has {}",
                self.embeddings.ncols(),
                emb.ncols()
            )));
        }
        let k = self.targets.ncols();
        let mut out = Array2::zeros((emb.nrows(), k));
        for (q, mut row) in emb.outer_iter().zip(out.outer_iter_mut()) {
            let nb = self.neighbours(q);
            for &i in &nb {
                row += &self.targets.row(i);
            }
            row /= nb.len() as f64;
        }
        Ok(out)
    }
}
