use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{Prng, Stream};

use super::ModelConfig;

const INIT_STD: f64 = 0.02;

/// Per-layer tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerTensor {
    Ln1Gain,
    Ln1Shift,
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    Ln2Gain,
    Ln2Shift,
    MlpIn,
    MlpOut,
}

impl LayerTensor {
    pub const ALL: [LayerTensor; 10] = [
        LayerTensor::Ln1Gain,
        LayerTensor::Ln1Shift,
        LayerTensor::AttnQ,
        LayerTensor::AttnK,
        LayerTensor::AttnV,
        LayerTensor::AttnO,
        LayerTensor::Ln2Gain,
        LayerTensor::Ln2Shift,
        LayerTensor::MlpIn,
        LayerTensor::MlpOut,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            LayerTensor::Ln1Gain => "ln1.gain",
            LayerTensor::Ln1Shift => "ln1.shift",
            LayerTensor::AttnQ => "attn_q",
            LayerTensor::AttnK => "attn_k",
            LayerTensor::AttnV => "attn_v",
            LayerTensor::AttnO => "attn_o",
            LayerTensor::Ln2Gain => "ln2.gain",
            LayerTensor::Ln2Shift => "ln2.shift",
            LayerTensor::MlpIn => "mlp_in",
            LayerTensor::MlpOut => "mlp_out",
        }
    }

    pub fn is_prunable(self) -> bool {
        matches!(
            self,
            LayerTensor::AttnQ
                | LayerTensor::AttnK
                | LayerTensor::AttnV
                | LayerTensor::AttnO
                | LayerTensor::MlpIn
                | LayerTensor::MlpOut
        )
    }
}

/// Index arithmetic over the fixed tensor order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    n_layers: usize,
}

impl Layout {
    pub const TOK_EMB: usize = 0;
    pub const POS_EMB: usize = 1;
    const PER_LAYER: usize = 10;

    pub fn new(config: &ModelConfig) -> Self {
        Self {
            n_layers: config.n_layers,
        }
    }

    #[inline]
    pub fn layer(&self, l: usize, t: LayerTensor) -> usize {
        2 + Self::PER_LAYER * l + t as usize
    }

    #[inline]
    pub fn lnf_gain(&self) -> usize {
        2 + Self::PER_LAYER * self.n_layers
    }

    #[inline]
    pub fn lnf_shift(&self) -> usize {
        self.lnf_gain() + 1
    }

    #[inline]
    pub fn head(&self) -> usize {
        self.lnf_gain() + 2
    }

    #[cfg(test)]
    pub fn count(&self) -> usize {
        self.head() + 1
    }
}

/// Name and shape of every tensor a config implies, in storage order.
pub fn tensor_specs(config: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = config.d_model;
    let ff = config.ff_dim();
    let mut specs = vec![
        ("tok_emb".to_string(), config.vocab_size, d),
        ("pos_emb".to_string(), config.ctx_len, d),
    ];
    for l in 0..config.n_layers {
        for t in LayerTensor::ALL {
            let (rows, cols) = match t {
                LayerTensor::MlpIn => (d, ff),
                LayerTensor::MlpOut => (ff, d),
                LayerTensor::AttnQ | LayerTensor::AttnK | LayerTensor::AttnV | LayerTensor::AttnO => {
                    (d, d)
                }
                _ => (1, d),
            };
            specs.push((format!("layers.{l}.{}", t.suffix()), rows, cols));
        }
    }
    specs.push(("ln_f.gain".to_string(), 1, d));
    specs.push(("ln_f.shift".to_string(), 1, d));
    specs.push(("head".to_string(), d, config.vocab_size));
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Matrix,
}

/// A configuration together with all of its weights.
///
/// Linear maps are stored input-major (`in × out`, applied as `x · W`).
/// Every stored value is exactly representable as a 32-bit float, so the
/// in-memory checkpoint and its serialized form describe the same model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

/// Indices (into [`ModelCheckpoint::tensors`]) of the prunable matrices:
/// every attention projection and both MLP matrices of every layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunableSet {
    indices: Vec<usize>,
}

impl PrunableSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }
}

impl ModelCheckpoint {
    /// Assemble from tensors, checking names and shapes against the config.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Header(format!(
                "config implies {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, rows, cols), t) in specs.iter().zip(&tensors) {
            if *name != t.name || (*rows, *cols) != t.value.shape() {
                return Err(Error::Header(format!(
                    "expected tensor {name} {rows}x{cols}, found {} {}x{}",
                    t.name,
                    t.value.rows(),
                    t.value.cols()
                )));
            }
        }
        let mut ckpt = Self { config, tensors };
        ckpt.round_to_f32();
        Ok(ckpt)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    #[inline]
    pub(crate) fn at(&self, index: usize) -> &Matrix {
        &self.tensors[index].value
    }

    /// Replace a tensor's values; the shape must not change.
    pub fn set_tensor(&mut self, index: usize, mut value: Matrix) -> Result<()> {
        self.tensors[index].value.ensure_same_shape(&value, "set_tensor")?;
        value.round_to_f32();
        self.tensors[index].value = value;
        Ok(())
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn prunable_set(&self) -> PrunableSet {
        let layout = self.layout();
        let indices = (0..self.config.n_layers)
            .flat_map(|l| {
                LayerTensor::ALL
                    .into_iter()
                    .filter(|t| t.is_prunable())
                    .map(move |t| layout.layer(l, t))
            })
            .collect();
        PrunableSet { indices }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub(crate) fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.value.round_to_f32();
        }
    }
}

/// Deterministic initialization: N(0, 0.02) for matrices, unit gains, zero shifts.
pub fn init_model(config: &ModelConfig) -> Result<ModelCheckpoint> {
    config.validate()?;
    let mut rng = Prng::for_stream(config.seed, Stream::Init);
    let tensors = tensor_specs(config)
        .into_iter()
        .map(|(name, rows, cols)| {
            let value = if name.ends_with(".gain") {
                Matrix::filled(rows, cols, 1.0)
            } else if name.ends_with(".shift") {
                Matrix::zeros(rows, cols)
            } else {
                let data = (0..rows * cols).map(|_| rng.normal() * INIT_STD).collect();
                Matrix::from_vec(rows, cols, data).expect("shape from spec")
            };
            Tensor { name, value }
        })
        .collect();
    ModelCheckpoint::from_tensors(config.clone(), tensors)
}
