//! Exact-count mask selection, MAMA redistribution and mask application.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::score::ScoreMatrix;

/// Fraction of weights to remove, in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SparsityLevel(f64);

impl SparsityLevel {
    pub const ZERO: SparsityLevel = SparsityLevel(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Level(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Entries removed from a unit of `n`: `floor(level · n)`.
    pub fn prune_count(self, n: usize) -> usize {
        (self.0 * n as f64).floor() as usize
    }
}

impl TryFrom<f64> for SparsityLevel {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SparsityLevel> for f64 {
    fn from(l: SparsityLevel) -> f64 {
        l.0
    }
}

impl std::fmt::Display for SparsityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The unit within which the sparsity quota is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerLayer,
    PerRow,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::PerLayer => "per-layer",
            Granularity::PerRow => "per-row",
        }
    }

    /// Number of entries the quota removes from a `rows × cols` matrix.
    pub fn pruned_count(self, rows: usize, cols: usize, level: SparsityLevel) -> usize {
        match self {
            Granularity::PerLayer => level.prune_count(rows * cols),
            Granularity::PerRow => rows * level.prune_count(cols),
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-layer" | "layer" => Ok(Granularity::PerLayer),
            "per-row" | "row" => Ok(Granularity::PerRow),
            _ => Err(Error::Invalid(format!(
                "unknown granularity {s:?} (valid: per-layer, per-row)"
            ))),
        }
    }
}

/// Boolean keep-mask (`true` = keep), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl PruneMask {
    pub fn all_keep(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn from_keep(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::Dimension {
                op: "PruneMask::from_keep",
                left: (rows, cols),
                right: (1, keep.len()),
            });
        }
        Ok(Self { rows, cols, keep })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.keep[r * self.cols..(r + 1) * self.cols]
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.keep.len() - self.kept_count()
    }

    fn check_shape(&self, m: &Matrix, op: &'static str) -> Result<()> {
        if m.shape() != self.shape() {
            return Err(Error::Dimension {
                op,
                left: m.shape(),
                right: self.shape(),
            });
        }
        Ok(())
    }
}

/// Mark the `k` lowest-scoring entries of `unit` (flat offsets into `scores`)
/// as pruned. Ties go to the lower index.
fn prune_lowest(scores: &[f64], unit: std::ops::Range<usize>, k: usize, keep: &mut [bool]) {
    if k == 0 {
        return;
    }
    let mut order: Vec<usize> = unit.collect();
    // `+ 0.0` folds −0 into +0 so signed zeros tie.
    order.sort_by(|&a, &b| (scores[a] + 0.0).total_cmp(&(scores[b] + 0.0)).then(a.cmp(&b)));
    for &i in &order[..k] {
        keep[i] = false;
    }
}

/// Prune exactly `floor(level · unit)` lowest-scoring entries per unit.
pub fn select_mask(scores: &ScoreMatrix, level: SparsityLevel, gran: Granularity) -> PruneMask {
    let (rows, cols) = scores.shape();
    let data = scores.matrix().data();
    let mut keep = vec![true; rows * cols];
    match gran {
        Granularity::PerLayer => prune_lowest(data, 0..rows * cols, level.prune_count(rows * cols), &mut keep),
        Granularity::PerRow => {
            let k = level.prune_count(cols);
            for r in 0..rows {
                prune_lowest(data, r * cols..(r + 1) * cols, k, &mut keep);
            }
        }
    }
    PruneMask { rows, cols, keep }
}

/// Move each row's pruned L1 mass onto its kept entries in proportion to
/// their scores, growing each kept weight away from zero.
///
/// Returns the adjusted weights (pruned entries untouched) and the number of
/// fully pruned rows whose mass had nowhere to go.
pub fn redistribute(w: &Matrix, mask: &PruneMask, scores: &ScoreMatrix) -> Result<(Matrix, usize)> {
    mask.check_shape(w, "redistribute")?;
    mask.check_shape(scores.matrix(), "redistribute")?;
    let mut out = w.clone();
    let mut discarded = 0;
    for r in 0..w.rows() {
        let keep = mask.row(r);
        let row = w.row(r);
        let mass: f64 = row.iter().zip(keep).filter(|(_, &k)| !k).map(|(v, _)| v.abs()).sum();
        let kept: Vec<usize> = (0..row.len()).filter(|&c| keep[c]).collect();
        if kept.is_empty() {
            discarded += 1;
            continue;
        }
        if mass == 0.0 {
            continue;
        }
        let srow = scores.matrix().row(r);
        let min = kept.iter().map(|&c| srow[c]).fold(f64::INFINITY, f64::min);
        let shift = if min < 0.0 { -min } else { 0.0 };
        let shares: Vec<f64> = kept.iter().map(|&c| srow[c] + shift).collect();
        let total: f64 = shares.iter().sum();
        let orow = out.row_mut(r);
        for (&c, &s) in kept.iter().zip(&shares) {
            let frac = if total > 0.0 { s / total } else { 1.0 / kept.len() as f64 };
            let sign = if orow[c] < 0.0 { -1.0 } else { 1.0 };
            orow[c] += sign * mass * frac;
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("redistribute"));
    }
    Ok((out, discarded))
}

/// Zero the pruned entries; kept entries are copied bit-for-bit.
pub fn apply_mask(w: &Matrix, mask: &PruneMask) -> Result<Matrix> {
    mask.check_shape(w, "apply_mask")?;
    let mut out = w.clone();
    for (v, &k) in out.data_mut().iter_mut().zip(&mask.keep) {
        if !k {
            *v = 0.0;
        }
    }
    Ok(out)
}
