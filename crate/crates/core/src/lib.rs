//! Pruning laboratory for a tiny byte-level transformer.
//!
//! The crate trains a small decoder-only model, gathers calibration
//! statistics, prunes it with one of several criteria (magnitude, negated
//! magnitude, Wanda, SparseGPT-style OBS reconstruction, and the
//! movement-and-magnitude pipeline with weight redistribution) and measures
//! perplexity across sparsity sweeps.

pub mod calibration;
pub mod cli;
pub mod container;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod pruning;
pub mod rng;

pub use error::{Error, Result};
