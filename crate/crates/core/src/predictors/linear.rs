//! Closed-form ridge-regularized least squares.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Tikhonov term used by the regression predictors.
pub const RIDGE: f64 = 1e-8;

/// Linear map from inputs to targets, with an optional intercept stored as
/// the last row of `weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub weights: Array2<f64>,
    pub intercept: bool,
}

impl LinearFit {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows() - usize::from(self.intercept)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let d = self.input_dim();
        if x.ncols() != d {
            return Err(Error::Shape(format!("linear model expects {d} inputs, got {}", x.ncols())));
        }
        let mut out = x.dot(&self.weights.slice(ndarray::s![..d, ..]));
        if self.intercept {
            out += &self.weights.row(d);
        }
        Ok(out)
    }
}

/// Solve `(QᵀQ + ridge·I) X = QᵀT`, where `Q` is `x` with a trailing column
/// of ones when `intercept` is set.
pub fn fit_least_squares(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    intercept: bool,
    ridge: f64,
) -> Result<LinearFit> {
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::Dataset("regression needs at least one row".into()));
    }
    if targets.nrows() != n {
        return Err(Error::Shape(format!("{n} inputs but {} target rows", targets.nrows())));
    }
    let p = d + usize::from(intercept);
    let q = DMatrix::from_fn(n, p, |i, j| if j < d { x[(i, j)] } else { 1.0 });
    let t = DMatrix::from_fn(n, targets.ncols(), |i, j| targets[(i, j)]);
    let qt = q.transpose();
    let gram = &qt * &q + DMatrix::identity(p, p) * ridge;
    let rhs = &qt * &t;
    let sol = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonFinite("singular normal equations".into()))?,
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression solution".into()));
    }
    let weights = Array2::from_shape_fn((p, targets.ncols()), |(i, j)| sol[(i, j)]);
    Ok(LinearFit { weights, intercept })
}
