//! Sweeps over (method × level × seed) and their tabular reports.
//!
//! Each seed gets one base model, trained or loaded from a checkpoint cache,
//! and one set of calibration statistics. Every (method, level) cell then
//! prunes a fresh copy of that base and measures held-out perplexity.

mod fixtures;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{self, CalibParams, CalibStats};
use crate::container::read_file;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, perplexity, save_checkpoint, train, ModelCheckpoint, ModelConfig, TrainHyper};
use crate::pruning::{prune_model, Granularity, Method, PruneParams, SparsityLevel};

pub use fixtures::load_paper_fixture;
pub use report::{emit_csv, emit_markdown, PruneReport, ReportMetadata, ReportRow, CSV_COLUMNS};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "PRUNELAB_THREADS";

pub const TABLE1_LEVELS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const TABLE2_LEVELS: [f64; 8] = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedGrid {
    Table1,
    Table2,
}

/// Either an explicit list of levels or one of the two standard grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelGrid {
    Named(NamedGrid),
    Explicit(Vec<SparsityLevel>),
}

impl Default for LevelGrid {
    fn default() -> Self {
        LevelGrid::Named(NamedGrid::Table2)
    }
}

impl LevelGrid {
    pub fn levels(&self) -> Vec<SparsityLevel> {
        let raw: &[f64] = match self {
            LevelGrid::Named(NamedGrid::Table1) => &TABLE1_LEVELS,
            LevelGrid::Named(NamedGrid::Table2) => &TABLE2_LEVELS,
            LevelGrid::Explicit(v) => return v.clone(),
        };
        raw.iter()
            .map(|&l| SparsityLevel::new(l).expect("grid levels are in range"))
            .collect()
    }
}

/// Sweep description, read from JSON. Relative paths in a file are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    #[serde(default)]
    pub levels: LevelGrid,
    pub seeds: Vec<u64>,
    /// Per-method override of the default granularity.
    #[serde(default)]
    pub granularity: BTreeMap<Method, Granularity>,
    pub eval_corpus: PathBuf,
    pub calib_corpus: PathBuf,
    /// Training text for base models; defaults to the calibration corpus.
    #[serde(default)]
    pub train_corpus: Option<PathBuf>,
    /// Directory caching trained base models between runs.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(default)]
    pub config: ModelConfig,
    #[serde(default)]
    pub train: TrainHyper,
    #[serde(default)]
    pub calib: CalibParams,
    #[serde(default)]
    pub prune: PruneParams,
}

impl SweepSpec {
    pub fn new(methods: Vec<Method>, levels: LevelGrid, seeds: Vec<u64>, eval: PathBuf, calib: PathBuf) -> Self {
        Self {
            methods,
            levels,
            seeds,
            granularity: BTreeMap::new(),
            eval_corpus: eval,
            calib_corpus: calib,
            train_corpus: None,
            checkpoint_dir: None,
            config: ModelConfig::default(),
            train: TrainHyper::default(),
            calib: CalibParams::default(),
            prune: PruneParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Invalid(format!("{} is not UTF-8", path.display())))?;
        let mut spec = Self::from_json(text).map_err(|e| e.context(path.display().to_string()))?;
        if let Some(base) = path.parent() {
            spec.resolve_paths(base);
        }
        Ok(spec)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.eval_corpus);
        fix(&mut self.calib_corpus);
        self.train_corpus.as_mut().map(fix);
        self.checkpoint_dir.as_mut().map(fix);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Invalid(format!("sweep spec: {msg}")));
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.levels.levels().is_empty() {
            return bad("levels must not be empty");
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(&format!("method {m} listed twice"));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(&format!("seed {s} listed twice"));
            }
        }
        self.config.validate()
    }

    pub fn granularity_for(&self, method: Method) -> Granularity {
        self.granularity
            .get(&method)
            .copied()
            .unwrap_or_else(|| method.default_granularity())
    }

    fn needs_stats(&self) -> bool {
        self.methods.iter().any(|m| m.needed_stats().is_some())
    }
}

/// Corpus bytes referenced by a spec.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub train: Vec<u8>,
    pub calib: Vec<u8>,
    pub eval: Vec<u8>,
}

impl Corpora {
    pub fn load(spec: &SweepSpec) -> Result<Self> {
        let calib = read_file(&spec.calib_corpus)?;
        let train = match &spec.train_corpus {
            Some(p) => read_file(p)?,
            None => calib.clone(),
        };
        Ok(Self {
            train,
            calib,
            eval: read_file(&spec.eval_corpus)?,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Worker count from `PRUNELAB_THREADS`, or all available cores.
pub fn sweep_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Invalid(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// A seed's trained model and, when some method needs them, its statistics.
#[derive(Debug, Clone)]
pub struct SeedBase {
    pub seed: u64,
    pub checkpoint: ModelCheckpoint,
    pub stats: Option<CalibStats>,
}

fn base_cache_path(dir: &Path, config: &ModelConfig, hyper: &TrainHyper, corpus: &[u8]) -> Result<PathBuf> {
    let key = serde_json::to_vec(&(config, hyper, sha256_hex(corpus)))?;
    let hash = sha256_hex(&key);
    Ok(dir.join(format!("base-seed{}-{}.mama", config.seed, &hash[..16])))
}

/// Train (or load from the cache) the base model for `seed`.
pub fn base_checkpoint(spec: &SweepSpec, seed: u64, corpus: &[u8]) -> Result<ModelCheckpoint> {
    let config = spec.config.clone().with_seed(seed);
    let Some(dir) = &spec.checkpoint_dir else {
        return train(&config, corpus, &spec.train);
    };
    let path = base_cache_path(dir, &config, &spec.train, corpus)?;
    if path.exists() {
        let ckpt = load_checkpoint(&path)?;
        if *ckpt.config() == config {
            return Ok(ckpt);
        }
    }
    let ckpt = train(&config, corpus, &spec.train)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&ckpt, &path)?;
    Ok(ckpt)
}

pub fn prepare_base(spec: &SweepSpec, seed: u64, corpora: &Corpora) -> Result<SeedBase> {
    let checkpoint = base_checkpoint(spec, seed, &corpora.train)?;
    let stats = if spec.needs_stats() {
        Some(calibration::collect(&checkpoint, &corpora.calib, &spec.calib)?)
    } else {
        None
    };
    Ok(SeedBase {
        seed,
        checkpoint,
        stats,
    })
}

/// Prune `base` with one method and level and measure perplexity on `eval`.
pub fn evaluate_cell(
    base: &SeedBase,
    method: Method,
    level: SparsityLevel,
    gran: Granularity,
    params: &PruneParams,
    eval: &[u8],
) -> Result<ReportRow> {
    let (pruned, summary) = prune_model(&base.checkpoint, method, level, Some(gran), base.stats.as_ref(), params)?;
    Ok(ReportRow {
        method,
        level: level.value(),
        seed: base.seed,
        perplexity: perplexity(&pruned, eval)?,
        achieved_sparsity: summary.achieved_sparsity(),
        discarded_rows: summary.discarded_rows,
    })
}

fn metadata(spec: &SweepSpec, corpora: &Corpora) -> Result<ReportMetadata> {
    let config = serde_json::to_vec(&(&spec.config, &spec.train, &spec.calib, &spec.prune, &spec.granularity))?;
    let corpus_hashes = [
        ("calib", &corpora.calib),
        ("eval", &corpora.eval),
        ("train", &corpora.train),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), sha256_hex(v)))
    .collect();
    Ok(ReportMetadata {
        config_hash: sha256_hex(&config),
        corpus_hashes,
        build_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// Run a sweep over corpora already in memory.
pub fn run_sweep_with(spec: &SweepSpec, corpora: &Corpora) -> Result<PruneReport> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads()?)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start sweep workers: {e}")))?;
    let levels = spec.levels.levels();
    pool.install(|| {
        let bases = spec
            .seeds
            .par_iter()
            .map(|&seed| prepare_base(spec, seed, corpora).map_err(|e| e.context(format!("seed {seed}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::with_capacity(bases.len() * spec.methods.len() * levels.len());
        for base in &bases {
            for &method in &spec.methods {
                cells.extend(levels.iter().map(|&level| (base, method, level)));
            }
        }
        let rows = cells
            .par_iter()
            .map(|&(base, method, level)| {
                evaluate_cell(base, method, level, spec.granularity_for(method), &spec.prune, &corpora.eval)
                    .map_err(|e| e.context(format!("method {method} level {level} seed {}", base.seed)))
            })
            .collect::<Result<Vec<_>>>()?;
        PruneReport::new(spec.methods.clone(), rows, metadata(spec, corpora)?)
    })
}

pub fn run_sweep(spec: &SweepSpec) -> Result<PruneReport> {
    run_sweep_with(spec, &Corpora::load(spec)?)
}

#[cfg(test)]
mod tests;
