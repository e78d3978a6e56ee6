//! SparseGPT-style layer reconstruction with optimal-brain-surgeon updates.
//!
//! One block spanning every column, with the mask fixed before any update.
//! `U` is the upper Cholesky factor of the damped inverse Gram matrix
//! (`H⁻¹ = UᵀU`); its diagonal plays the role of the per-column curvature and
//! its rows carry the compensating update, as in the reference algorithm.

use crate::error::{Error, Result};
use crate::numerics::{upper_cholesky_of_inverse, Matrix};

use super::mask::{select_mask, Granularity, SparsityLevel};
use super::score::ScoreMatrix;

pub const DEFAULT_DAMPING: f64 = 0.01;

/// Prune `w` (`out × in`) against `gram` (`in × in`) at per-row granularity.
pub fn prune_layer_sparsegpt(w: &Matrix, gram: &Matrix, level: SparsityLevel, damping: f64) -> Result<Matrix> {
    obs_prune(w, gram, level, damping, Granularity::PerRow, "layer")
}

pub(crate) fn obs_prune(
    w: &Matrix,
    gram: &Matrix,
    level: SparsityLevel,
    damping: f64,
    gran: Granularity,
    label: &str,
) -> Result<Matrix> {
    let n = w.cols();
    if gram.shape() != (n, n) {
        return Err(Error::Dimension {
            op: "prune_layer_sparsegpt",
            left: w.shape(),
            right: gram.shape(),
        });
    }
    if !(damping >= 0.0) || !damping.is_finite() {
        return Err(Error::Invalid(format!("damping must be finite and >= 0, got {damping}")));
    }
    if gran.pruned_count(w.rows(), n, level) == 0 {
        return Ok(w.clone());
    }

    let mut h = gram.clone();
    let lambda = damping * (0..n).map(|i| gram.get(i, i)).sum::<f64>() / n as f64;
    for i in 0..n {
        h.set(i, i, h.get(i, i) + lambda);
    }
    let u = upper_cholesky_of_inverse(&h, label)?;

    let mut scores = w.clone();
    for r in 0..w.rows() {
        for (j, s) in scores.row_mut(r).iter_mut().enumerate() {
            let d = u.get(j, j);
            *s = *s * *s / (d * d);
        }
    }
    let mask = select_mask(&ScoreMatrix::new(scores)?, level, gran);

    let mut out = w.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for j in 0..n {
            if mask.is_kept(r, j) {
                continue;
            }
            let e = row[j] / u.get(j, j);
            row[j] = 0.0;
            for (k, &ujk) in u.row(j).iter().enumerate().skip(j + 1) {
                if ujk != 0.0 {
                    row[k] -= e * ujk;
                }
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("prune_layer_sparsegpt"));
    }
    Ok(out)
}
