//! Calibration statistics consumed by the data-aware pruning criteria.
//!
//! For every prunable matrix we gather the column L2 norms of its input
//! activations, the token-averaged Gram matrix `XᵀX / n` of those inputs, and
//! an accumulated movement score `Σ −g ⊙ W` over a few calibration batches.
//! Activations come from fixed seeded windows of the calibration corpus.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerHeader, Descriptor};
use crate::error::{Error, Result};
use crate::model::{batch_loss_and_grads, forward_trace, sample_windows, ModelCheckpoint};
use crate::numerics::{gemm_tn_acc, Matrix, Vector};
use crate::rng::{Prng, Stream};

pub const STATS_MAGIC: &[u8; 4] = b"MAMC";

/// Windows pushed through one forward pass while collecting activations.
const FORWARD_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibParams {
    /// Number of `ctx_len` windows used for activation statistics.
    pub samples: usize,
    /// Number of gradient batches summed into the movement score.
    pub movement_batches: usize,
    /// Windows per movement batch.
    pub batch_windows: usize,
}

impl Default for CalibParams {
    fn default() -> Self {
        Self {
            samples: 32,
            movement_batches: 8,
            batch_windows: 4,
        }
    }
}

/// Statistics for one prunable matrix. Shapes follow the stored weight
/// (`in × out`): `act_norms` has `in` entries and `gram` is `in × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub name: String,
    pub act_norms: Vector,
    pub gram: Matrix,
    pub movement: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibStats {
    pub n_tokens: usize,
    /// One entry per prunable matrix, in prunable-set order.
    pub layers: Vec<LayerStats>,
}

impl CalibStats {
    pub fn get(&self, name: &str) -> Option<&LayerStats> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Check that these statistics describe the prunable matrices of `ckpt`.
    pub fn check_compatible(&self, ckpt: &ModelCheckpoint) -> Result<()> {
        let set = ckpt.prunable_set();
        if set.len() != self.layers.len() {
            return Err(Error::Invalid(format!(
                "statistics cover {} matrices, checkpoint has {} prunable",
                self.layers.len(),
                set.len()
            )));
        }
        for (&i, layer) in set.indices().iter().zip(&self.layers) {
            let t = &ckpt.tensors()[i];
            let (rows, cols) = t.value.shape();
            if t.name != layer.name
                || layer.act_norms.len() != rows
                || layer.gram.shape() != (rows, rows)
                || layer.movement.shape() != (rows, cols)
            {
                return Err(Error::Invalid(format!(
                    "statistics for {} do not match checkpoint tensor {} ({rows}x{cols})",
                    layer.name, t.name
                )));
            }
        }
        Ok(())
    }
}

/// Raw activation sums over a set of windows, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSums {
    pub n_tokens: usize,
    /// `Σ x_j²` per input feature, one vector per prunable matrix.
    pub sq_sums: Vec<Vector>,
    /// `Σ xxᵀ`, one matrix per prunable matrix.
    pub outer: Vec<Matrix>,
}

impl ActivationSums {
    pub fn act_norms(&self) -> Vec<Vector> {
        self.sq_sums
            .iter()
            .map(|s| s.as_slice().iter().map(|v| v.sqrt()).collect::<Vec<_>>().into())
            .collect()
    }

    pub fn grams(&self) -> Vec<Matrix> {
        let inv = 1.0 / self.n_tokens as f64;
        self.outer
            .iter()
            .map(|m| {
                let mut g = m.clone();
                g.scale(inv);
                g
            })
            .collect()
    }
}

fn calibration_windows<'a>(
    ckpt: &ModelCheckpoint,
    corpus: &'a [u8],
    count: usize,
    stream: Stream,
) -> Result<Vec<&'a [u8]>> {
    let ctx = ckpt.config().ctx_len;
    if corpus.len() < ctx {
        return Err(Error::Corpus(format!(
            "calibration needs one {ctx}-byte window, got {} bytes",
            corpus.len()
        )));
    }
    if count == 0 {
        return Err(Error::Invalid("calibration sample count must be at least 1".into()));
    }
    let mut rng = Prng::for_stream(ckpt.config().seed, stream);
    Ok(sample_windows(corpus, ctx, count, &mut rng))
}

/// Accumulate activation sums over explicit windows (all the same length).
pub fn activation_sums(ckpt: &ModelCheckpoint, windows: &[&[u8]]) -> Result<ActivationSums> {
    let set = ckpt.prunable_set();
    let mut sq_sums = Vec::with_capacity(set.len());
    let mut outer = Vec::with_capacity(set.len());
    for &i in set.indices() {
        let n_in = ckpt.tensors()[i].value.rows();
        sq_sums.push(Vector::zeros(n_in));
        outer.push(Matrix::zeros(n_in, n_in));
    }
    let mut n_tokens = 0;
    let layout = ckpt.layout();
    for group in windows.chunks(FORWARD_BATCH) {
        let trace = forward_trace(ckpt, group)?;
        for (slot, (_, x)) in trace.prunable_inputs(&layout).into_iter().enumerate() {
            let (rows, cols) = x.shape();
            for r in 0..rows {
                for (s, v) in sq_sums[slot].as_mut_slice().iter_mut().zip(x.row(r)) {
                    *s += v * v;
                }
            }
            gemm_tn_acc(x.data(), rows, cols, x.data(), cols, outer[slot].data_mut());
        }
        n_tokens += group.len() * group[0].len();
    }
    Ok(ActivationSums {
        n_tokens,
        sq_sums,
        outer,
    })
}

/// `Σ_b −g_b ⊙ W` over explicit batches of windows, one matrix per prunable matrix.
pub fn movement_sums(ckpt: &ModelCheckpoint, batches: &[Vec<&[u8]>]) -> Result<Vec<Matrix>> {
    let set = ckpt.prunable_set();
    let mut out: Vec<Matrix> = set
        .indices()
        .iter()
        .map(|&i| {
            let (r, c) = ckpt.tensors()[i].value.shape();
            Matrix::zeros(r, c)
        })
        .collect();
    for batch in batches {
        let (_, grads) = batch_loss_and_grads(ckpt, batch)?;
        for (acc, &i) in out.iter_mut().zip(set.indices()) {
            let w = ckpt.tensors()[i].value.data();
            for ((m, g), w) in acc.data_mut().iter_mut().zip(grads.at(i).data()).zip(w) {
                *m += -g * w;
            }
        }
    }
    Ok(out)
}

/// Per-matrix input feature norms `sqrt(Σ x_j²)` over `n_samples` windows.
pub fn collect_activation_norms(
    ckpt: &ModelCheckpoint,
    corpus: &[u8],
    n_samples: usize,
) -> Result<Vec<Vector>> {
    let windows = calibration_windows(ckpt, corpus, n_samples, Stream::Calibration)?;
    Ok(activation_sums(ckpt, &windows)?.act_norms())
}

/// Per-matrix `XᵀX / n_tokens` over `n_samples` windows. Damping is left to
/// the consumer.
pub fn collect_gram(ckpt: &ModelCheckpoint, corpus: &[u8], n_samples: usize) -> Result<Vec<Matrix>> {
    let windows = calibration_windows(ckpt, corpus, n_samples, Stream::Calibration)?;
    Ok(activation_sums(ckpt, &windows)?.grams())
}

/// Movement scores accumulated over `n_batches` batches of `batch_windows` windows.
pub fn collect_movement(
    ckpt: &ModelCheckpoint,
    corpus: &[u8],
    n_batches: usize,
    batch_windows: usize,
) -> Result<Vec<Matrix>> {
    let windows = calibration_windows(ckpt, corpus, n_batches * batch_windows, Stream::Movement)?;
    let batches: Vec<Vec<&[u8]>> = windows.chunks(batch_windows).map(<[_]>::to_vec).collect();
    movement_sums(ckpt, &batches)
}

/// All three statistics, sharing one activation pass.
pub fn collect(ckpt: &ModelCheckpoint, corpus: &[u8], params: &CalibParams) -> Result<CalibStats> {
    let windows = calibration_windows(ckpt, corpus, params.samples, Stream::Calibration)?;
    let sums = activation_sums(ckpt, &windows)?;
    let movement = collect_movement(ckpt, corpus, params.movement_batches, params.batch_windows)?;
    let set = ckpt.prunable_set();
    let names = set.indices().iter().map(|&i| ckpt.tensors()[i].name.clone());
    let layers = names
        .zip(sums.act_norms())
        .zip(sums.grams())
        .zip(movement)
        .map(|(((name, act_norms), gram), movement)| LayerStats {
            name,
            act_norms,
            gram,
            movement,
        })
        .collect();
    Ok(CalibStats {
        n_tokens: sums.n_tokens,
        layers,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsHeader {
    n_tokens: usize,
    tensors: Vec<Descriptor>,
}

impl ContainerHeader for StatsHeader {
    fn descriptors(&self) -> &[Descriptor] {
        &self.tensors
    }
}

const SUFFIXES: [&str; 3] = ["act_norms", "gram", "movement"];

pub fn encode_stats(stats: &CalibStats) -> Result<Vec<u8>> {
    let norms: Vec<Matrix> = stats
        .layers
        .iter()
        .map(|l| Matrix::from_vec(1, l.act_norms.len(), l.act_norms.as_slice().to_vec()))
        .collect::<Result<_>>()?;
    let mut tensors = Vec::new();
    let mut payloads = Vec::new();
    for (l, n) in stats.layers.iter().zip(&norms) {
        for (suffix, m) in SUFFIXES.iter().zip([n, &l.gram, &l.movement]) {
            tensors.push(Descriptor::of(format!("{}.{suffix}", l.name), m));
            payloads.push(m);
        }
    }
    let header = StatsHeader {
        n_tokens: stats.n_tokens,
        tensors,
    };
    container::encode(STATS_MAGIC, &header, &payloads)
}

pub fn decode_stats(bytes: &[u8]) -> Result<CalibStats> {
    let (header, payloads) = container::decode::<StatsHeader>(STATS_MAGIC, bytes)?;
    if header.tensors.len() % 3 != 0 {
        return Err(Error::Header(format!(
            "{} tensors is not a whole number of layers",
            header.tensors.len()
        )));
    }
    let mut layers = Vec::with_capacity(header.tensors.len() / 3);
    let mut payloads = payloads.into_iter();
    for descs in header.tensors.chunks(3) {
        let name = descs[0]
            .name
            .strip_suffix(".act_norms")
            .ok_or_else(|| Error::Header(format!("unexpected tensor {}", descs[0].name)))?;
        for (d, suffix) in descs.iter().zip(SUFFIXES) {
            if d.name != format!("{name}.{suffix}") {
                return Err(Error::Header(format!("expected {name}.{suffix}, found {}", d.name)));
            }
        }
        let (norms, gram, movement) = (
            payloads.next().unwrap(),
            payloads.next().unwrap(),
            payloads.next().unwrap(),
        );
        let n_in = norms.len();
        if norms.rows() != 1 || gram.shape() != (n_in, n_in) || movement.rows() != n_in {
            return Err(Error::Header(format!("inconsistent statistic shapes for {name}")));
        }
        layers.push(LayerStats {
            name: name.to_string(),
            act_norms: norms.into_data().into(),
            gram,
            movement,
        });
    }
    Ok(CalibStats {
        n_tokens: header.n_tokens,
        layers,
    })
}

pub fn save_stats(stats: &CalibStats, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &encode_stats(stats)?)
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<CalibStats> {
    decode_stats(&container::read_file(path.as_ref())?)
}
