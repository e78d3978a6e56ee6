//! Importance scores. Higher means more important, so kept preferentially.
//!
//! All functions work in the pruning view of a weight: rows are output
//! neurons and columns are input features.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Per-weight importance, same shape as the weight it ranks. Always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Matrix);

impl ScoreMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::NonFinite("score matrix"));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

/// `|W|`.
pub fn score_magnitude(w: &Matrix) -> ScoreMatrix {
    ScoreMatrix(w.map(f64::abs))
}

/// `−|W|`: prunes the largest weights first.
pub fn score_neg_magnitude(w: &Matrix) -> ScoreMatrix {
    ScoreMatrix(w.map(|v| -v.abs()))
}

/// `|W_ij| · ‖x_j‖`.
pub fn score_wanda(w: &Matrix, act_norms: &Vector) -> Result<ScoreMatrix> {
    if act_norms.len() != w.cols() {
        return Err(Error::Dimension {
            op: "score_wanda",
            left: w.shape(),
            right: (1, act_norms.len()),
        });
    }
    if act_norms.as_slice().iter().any(|&n| !(n >= 0.0) || !n.is_finite()) {
        return Err(Error::Invalid("activation norms must be finite and non-negative".into()));
    }
    let mut s = w.map(f64::abs);
    for r in 0..s.rows() {
        for (v, n) in s.row_mut(r).iter_mut().zip(act_norms.as_slice()) {
            *v *= n;
        }
    }
    ScoreMatrix::new(s)
}

/// Whole-matrix z-score with population standard deviation; all zeros when
/// the spread is below `1e-12`.
fn zscore(x: &Matrix) -> Matrix {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Matrix::zeros(x.rows(), x.cols());
    }
    x.map(|v| (v - mean) / std)
}

/// `zscore(|W|) + λ · zscore(movement)`.
pub fn score_mama(w: &Matrix, movement: &Matrix, lambda: f64) -> Result<ScoreMatrix> {
    w.ensure_same_shape(movement, "score_mama")?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Invalid(format!("mama lambda must be finite and >= 0, got {lambda}")));
    }
    let mut s = zscore(&w.map(f64::abs));
    if lambda != 0.0 {
        let m = zscore(movement);
        for (a, b) in s.data_mut().iter_mut().zip(m.data()) {
            *a += lambda * b;
        }
    }
    ScoreMatrix::new(s)
}
