//! Sweep results and their CSV and markdown renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::pruning::Method;

pub const CSV_COLUMNS: [&str; 6] = [
    "method",
    "level",
    "seed",
    "perplexity",
    "achieved_sparsity",
    "discarded_rows",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub level: f64,
    pub seed: u64,
    pub perplexity: f64,
    pub achieved_sparsity: f64,
    pub discarded_rows: usize,
}

/// Provenance attached to a report. Hashes are lowercase hex SHA-256.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub corpus_hashes: BTreeMap<String, String>,
    pub build_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    /// Column order for tables; rows are sorted by position in this list.
    pub methods: Vec<Method>,
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMetadata,
}

impl PruneReport {
    /// Build a report, putting rows in canonical `(method, level, seed)` order.
    pub fn new(methods: Vec<Method>, rows: Vec<ReportRow>, metadata: ReportMetadata) -> Result<Self> {
        let mut report = Self {
            methods,
            rows,
            metadata,
        };
        for row in &report.rows {
            if !report.methods.contains(&row.method) {
                report.methods.push(row.method);
            }
        }
        report.sort_rows();
        report.validate()?;
        Ok(report)
    }

    fn method_rank(&self, m: Method) -> usize {
        self.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX)
    }

    fn sort_rows(&mut self) {
        let mut rows = std::mem::take(&mut self.rows);
        rows.sort_by(|a, b| {
            self.method_rank(a.method)
                .cmp(&self.method_rank(b.method))
                .then(a.level.total_cmp(&b.level))
                .then(a.seed.cmp(&b.seed))
        });
        self.rows = rows;
    }

    fn validate(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.method == b.method && a.level == b.level && a.seed == b.seed {
                return Err(Error::Invalid(format!(
                    "duplicate report row for {} at level {} seed {}",
                    a.method, a.level, a.seed
                )));
            }
        }
        if let Some(r) = self.rows.iter().find(|r| !(r.perplexity > 0.0)) {
            return Err(Error::Invalid(format!(
                "perplexity must be positive, got {} for {} at level {} seed {}",
                r.perplexity, r.method, r.level, r.seed
            )));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, method: Method, level: f64, seed: u64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.level == level && r.seed == seed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn levels(&self) -> Vec<f64> {
        let mut l: Vec<f64> = self.rows.iter().map(|r| r.level).collect();
        l.sort_by(f64::total_cmp);
        l.dedup();
        l
    }

    /// Median perplexity over seeds for one cell. Even counts average the
    /// two middle values.
    pub fn median_perplexity(&self, method: Method, level: f64) -> Option<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.level == level)
            .map(|r| r.perplexity)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }

    fn require_rows(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Invalid("report has no rows".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        self.require_rows()?;
        let mut out = String::new();
        let md = &self.metadata;
        let _ = writeln!(out, "# config_hash={}", md.config_hash);
        for (name, hash) in &md.corpus_hashes {
            let _ = writeln!(out, "# corpus_hash.{name}={hash}");
        }
        let _ = writeln!(out, "# build_version={}", md.build_version);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.method.name().to_string(),
                r.level.to_string(),
                r.seed.to_string(),
                format!("{:.3}", r.perplexity),
                r.achieved_sparsity.to_string(),
                r.discarded_rows.to_string(),
            ])?;
        }
        let body = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Invalid(e.to_string()))?);
        Ok(out)
    }

    /// Parse text produced by [`PruneReport::to_csv`]. Method column order
    /// follows first appearance.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metadata = ReportMetadata::default();
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            match key {
                "config_hash" => metadata.config_hash = value.to_string(),
                "build_version" => metadata.build_version = value.to_string(),
                _ => {
                    if let Some(name) = key.strip_prefix("corpus_hash.") {
                        metadata.corpus_hashes.insert(name.to_string(), value.to_string());
                    }
                }
            }
        }
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = rd.headers()?.clone();
        if headers.iter().ne(CSV_COLUMNS) {
            return Err(Error::Invalid(format!(
                "unexpected csv columns {:?}, expected {:?}",
                headers.iter().collect::<Vec<_>>(),
                CSV_COLUMNS
            )));
        }
        let mut rows = Vec::new();
        let mut methods = Vec::new();
        for rec in rd.deserialize::<ReportRow>() {
            let row = rec?;
            if !methods.contains(&row.method) {
                methods.push(row.method);
            }
            rows.push(row);
        }
        let report = Self::new(methods, rows, metadata)?;
        report.require_rows()?;
        Ok(report)
    }

    /// One table per seed: a row per level, a column per method.
    pub fn to_markdown(&self) -> Result<String> {
        self.require_rows()?;
        let levels = self.levels();
        let mut out = String::new();
        for (i, seed) in self.seeds().into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "### seed {seed}\n");
            out.push_str("| level |");
            for m in &self.methods {
                let _ = write!(out, " {m} |");
            }
            out.push_str("\n|---|");
            for _ in &self.methods {
                out.push_str("---|");
            }
            out.push('\n');
            for &level in &levels {
                let _ = write!(out, "| {level:.2} |");
                for &m in &self.methods {
                    match self.row(m, level, seed) {
                        Some(r) => {
                            let _ = write!(out, " {:.3} |", r.perplexity);
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn emit_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv()?.as_bytes())
    }

    pub fn emit_markdown(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_markdown()?.as_bytes())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Invalid(format!("{} is not UTF-8", path.display())))?;
        Self::from_csv(&text)
    }
}

pub fn emit_csv(report: &PruneReport, path: impl AsRef<Path>) -> Result<()> {
    report.emit_csv(path)
}

pub fn emit_markdown(report: &PruneReport, path: impl AsRef<Path>) -> Result<()> {
    report.emit_markdown(path)
}
