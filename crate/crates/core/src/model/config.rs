use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and seed of the byte-level transformer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ctx_len: usize,
    pub ff_mult: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ctx_len: 64,
            ff_mult: 4,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ctx_len", self.ctx_len),
            ("ff_mult", self.ff_mult),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        // Tokens are raw bytes.
        if self.vocab_size > 256 {
            return Err(Error::Config(format!(
                "vocab_size {} exceeds the byte alphabet",
                self.vocab_size
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    #[inline]
    pub fn ff_dim(&self) -> usize {
        self.d_model * self.ff_mult
    }
}
