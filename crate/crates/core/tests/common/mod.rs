//! Shared helpers for the integration tests: shipped corpora and cached
//! default base models.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use prunelab::harness::{base_checkpoint, LevelGrid, SweepSpec};
use prunelab::model::ModelCheckpoint;
use prunelab::pruning::Method;

pub const SEEDS: [u64; 3] = [7, 8, 9];

pub fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn train_corpus() -> &'static [u8] {
    static C: OnceLock<Vec<u8>> = OnceLock::new();
    C.get_or_init(|| std::fs::read(data_path("train.txt")).expect("shipped training corpus"))
}

pub fn heldout_corpus() -> &'static [u8] {
    static C: OnceLock<Vec<u8>> = OnceLock::new();
    C.get_or_init(|| std::fs::read(data_path("heldout.txt")).expect("shipped held-out corpus"))
}

/// Default-config sweep spec over the shipped corpora, caching base models
/// under the build directory so repeat runs skip training.
pub fn default_spec(methods: Vec<Method>, levels: LevelGrid) -> SweepSpec {
    let mut spec = SweepSpec::new(
        methods,
        levels,
        SEEDS.to_vec(),
        data_path("heldout.txt"),
        data_path("train.txt"),
    );
    spec.checkpoint_dir = Some(Path::new(env!("CARGO_TARGET_TMPDIR")).join("base-models"));
    spec
}

/// Trained default base model for `seed`, shared across tests in a binary.
pub fn base_model(seed: u64) -> ModelCheckpoint {
    static LOCK: Mutex<()> = Mutex::new(());
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let spec = default_spec(vec![Method::Magnitude], LevelGrid::Explicit(vec![]));
    base_checkpoint(&spec, seed, train_corpus()).expect("base model")
}
