//! Pruning criteria, exact-count masking, MAMA redistribution and
//! SparseGPT-style reconstruction.
//!
//! Weights are stored input-major (`in × out`). Every routine here works on
//! the transposed view, where a row is one output neuron and a column is one
//! input feature, so "per-row" means per output neuron and activation
//! statistics index columns.

mod mask;
mod obs;
mod score;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibStats, LayerStats};
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;
use crate::numerics::Matrix;

pub use mask::{apply_mask, redistribute, select_mask, Granularity, PruneMask, SparsityLevel};
pub use obs::{prune_layer_sparsegpt, DEFAULT_DAMPING};
pub use score::{score_magnitude, score_mama, score_neg_magnitude, score_wanda, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "magnitude")]
    Magnitude,
    #[serde(rename = "neg_magnitude")]
    NegMagnitude,
    #[serde(rename = "wanda")]
    Wanda,
    #[serde(rename = "sparsegpt")]
    SparseGpt,
    #[serde(rename = "mama")]
    Mama,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Magnitude,
        Method::NegMagnitude,
        Method::Wanda,
        Method::SparseGpt,
        Method::Mama,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Magnitude => "magnitude",
            Method::NegMagnitude => "neg_magnitude",
            Method::Wanda => "wanda",
            Method::SparseGpt => "sparsegpt",
            Method::Mama => "mama",
        }
    }

    pub fn default_granularity(self) -> Granularity {
        match self {
            Method::Magnitude | Method::NegMagnitude => Granularity::PerLayer,
            Method::Wanda | Method::SparseGpt | Method::Mama => Granularity::PerRow,
        }
    }

    /// Which calibration statistic the method reads, if any.
    pub fn needed_stats(self) -> Option<&'static str> {
        match self {
            Method::Magnitude | Method::NegMagnitude => None,
            Method::Wanda => Some("activation-norm"),
            Method::SparseGpt => Some("gram"),
            Method::Mama => Some("movement"),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneParams {
    /// Weight of the movement term in the MAMA score.
    pub lambda: f64,
    /// Run the MAMA redistribution step.
    pub redistribute: bool,
    /// SparseGPT damping as a fraction of the mean Gram diagonal.
    pub damping: f64,
}

impl Default for PruneParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            redistribute: true,
            damping: DEFAULT_DAMPING,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSparsity {
    pub name: String,
    pub numel: usize,
    pub zeros: usize,
}

impl TensorSparsity {
    pub fn sparsity(&self) -> f64 {
        self.zeros as f64 / self.numel as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSummary {
    pub tensors: Vec<TensorSparsity>,
    /// Rows whose every entry was pruned, so redistribution had no target.
    pub discarded_rows: usize,
}

impl PruneSummary {
    /// Zero fraction over the whole prunable set.
    pub fn achieved_sparsity(&self) -> f64 {
        let zeros: usize = self.tensors.iter().map(|t| t.zeros).sum();
        let numel: usize = self.tensors.iter().map(|t| t.numel).sum();
        zeros as f64 / numel as f64
    }
}

/// Fraction of prunable weights the quota removes, before counting any
/// weights that were already zero.
pub fn expected_sparsity(ckpt: &ModelCheckpoint, level: SparsityLevel, gran: Granularity) -> f64 {
    let set = ckpt.prunable_set();
    let (mut pruned, mut numel) = (0, 0);
    for &i in set.indices() {
        // Pruning view is the transpose of storage.
        let (cols, rows) = ckpt.tensors()[i].value.shape();
        pruned += gran.pruned_count(rows, cols, level);
        numel += rows * cols;
    }
    pruned as f64 / numel as f64
}

/// Prune one weight given in the pruning view. Returns the new view and the
/// count of fully pruned rows.
pub fn prune_view(
    w: &Matrix,
    method: Method,
    level: SparsityLevel,
    gran: Granularity,
    stats: Option<&LayerStats>,
    params: &PruneParams,
    label: &str,
) -> Result<(Matrix, usize)> {
    let needs = |needed| {
        stats.ok_or(Error::MissingStats {
            method: method.name(),
            needed,
        })
    };
    let scores = match method {
        Method::Magnitude => score_magnitude(w),
        Method::NegMagnitude => score_neg_magnitude(w),
        Method::Wanda => score_wanda(w, &needs("activation-norm")?.act_norms)?,
        Method::SparseGpt => {
            let gram = &needs("gram")?.gram;
            return Ok((obs::obs_prune(w, gram, level, params.damping, gran, label)?, 0));
        }
        Method::Mama => score_mama(w, &needs("movement")?.movement.transpose(), params.lambda)?,
    };
    let mask = select_mask(&scores, level, gran);
    if method == Method::Mama && params.redistribute {
        let (moved, discarded) = redistribute(w, &mask, &scores)?;
        return Ok((apply_mask(&moved, &mask)?, discarded));
    }
    Ok((apply_mask(w, &mask)?, 0))
}

/// Prune every prunable matrix of a copy of `ckpt`.
///
/// `gran` overrides the method's default granularity. Statistics are
/// required for wanda, sparsegpt and mama.
pub fn prune_model(
    ckpt: &ModelCheckpoint,
    method: Method,
    level: SparsityLevel,
    gran: Option<Granularity>,
    stats: Option<&CalibStats>,
    params: &PruneParams,
) -> Result<(ModelCheckpoint, PruneSummary)> {
    let gran = gran.unwrap_or_else(|| method.default_granularity());
    if let (Some(needed), None) = (method.needed_stats(), stats) {
        return Err(Error::MissingStats {
            method: method.name(),
            needed,
        });
    }
    if let Some(s) = stats {
        s.check_compatible(ckpt)?;
    }
    let mut out = ckpt.clone();
    let set = ckpt.prunable_set();
    let mut tensors = Vec::with_capacity(set.len());
    let mut discarded_rows = 0;
    for (slot, &i) in set.indices().iter().enumerate() {
        let t = &ckpt.tensors()[i];
        let layer = stats.map(|s| &s.layers[slot]);
        let (view, discarded) = prune_view(&t.value.transpose(), method, level, gran, layer, params, &t.name)?;
        discarded_rows += discarded;
        out.set_tensor(i, view.transpose())?;
        let value = &out.tensors()[i].value;
        tensors.push(TensorSparsity {
            name: t.name.clone(),
            numel: value.len(),
            zeros: value.count_zeros(),
        });
    }
    Ok((
        out,
        PruneSummary {
            tensors,
            discarded_rows,
        },
    ))
}
