//! Command-line front end: train, calib, prune, eval, sweep and report.
//!
//! Exit status is 0 on success, 1 on a runtime failure (one diagnostic line
//! on stderr) and 2 on a usage error. Every output file is written through a
//! temp file and a rename, so a failed command leaves nothing behind.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{self, load_stats, save_stats, CalibParams};
use crate::container::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::harness::{run_sweep, PruneReport, SweepSpec};
use crate::model::{load_checkpoint, perplexity, save_checkpoint, train_with_report, ModelConfig, TrainHyper};
use crate::pruning::{prune_model, Granularity, Method, PruneParams, SparsityLevel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Training progress is logged every this many steps.
const LOG_EVERY: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "prunelab", version, about = "Prune a tiny byte-level transformer and measure perplexity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a base model on a byte corpus.
    Train(TrainArgs),
    /// Collect calibration statistics for a checkpoint.
    Calib(CalibArgs),
    /// Prune a checkpoint with one method at one level.
    Prune(PruneArgs),
    /// Print held-out perplexity of a checkpoint.
    Eval(EvalArgs),
    /// Run a (method × level × seed) sweep from a JSON spec.
    Sweep(SweepArgs),
    /// Render a sweep CSV as markdown or canonical CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON model config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = TrainHyper::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = TrainHyper::default().batch)]
    pub batch: usize,
    #[arg(long, default_value_t = TrainHyper::default().lr)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct CalibArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = CalibParams::default().samples)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Calibration statistics; required by wanda, sparsegpt and mama.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, value_parser = parse_level)]
    pub level: SparsityLevel,
    /// Defaults to per-layer for magnitude criteria, per-row otherwise.
    #[arg(long, value_parser = parse_granularity)]
    pub granularity: Option<Granularity>,
    #[arg(long, default_value_t = PruneParams::default().lambda)]
    pub lambda: f64,
    #[arg(long)]
    pub no_redistribute: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_md: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
    pub format: ReportFormat,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_level(s: &str) -> std::result::Result<SparsityLevel, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    SparsityLevel::new(v).map_err(|e| e.to_string())
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{}: no such file", path.display())))
    }
}

fn require_out_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Error::Invalid(format!("{}: no such directory", dir.display())))
        }
        _ if path.is_dir() => Err(Error::Invalid(format!("{} is a directory", path.display()))),
        _ => Ok(()),
    }
}

impl Command {
    /// Check every input exists and every output has a directory to land in.
    pub fn validate_paths(&self) -> Result<()> {
        let (inputs, outputs): (Vec<&Path>, Vec<&Path>) = match self {
            Command::Train(a) => (
                a.config.iter().map(|p| p.as_path()).chain([a.corpus.as_path()]).collect(),
                vec![&a.out],
            ),
            Command::Calib(a) => (vec![&a.ckpt, &a.corpus], vec![&a.out]),
            Command::Prune(a) => (
                [a.ckpt.as_path()].into_iter().chain(a.stats.as_deref()).collect(),
                vec![&a.out],
            ),
            Command::Eval(a) => (vec![&a.ckpt, &a.corpus], vec![]),
            Command::Sweep(a) => (
                vec![&a.spec],
                a.out_csv.iter().chain(&a.out_md).map(|p| p.as_path()).collect(),
            ),
            Command::Report(a) => (vec![&a.input], vec![]),
        };
        inputs.into_iter().try_for_each(require_file)?;
        outputs.into_iter().try_for_each(require_out_dir)
    }
}

fn run_train(a: &TrainArgs, log: &mut dyn Write) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let bytes = read_file(p)?;
            serde_json::from_slice::<ModelConfig>(&bytes).map_err(|e| Error::from(e).context(p.display().to_string()))?
        }
        None => ModelConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let hyper = TrainHyper {
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
    };
    let corpus = read_file(&a.corpus)?;
    let report = train_with_report(&config, &corpus, &hyper, |step, loss| {
        if step % LOG_EVERY == 0 || step + 1 == hyper.steps {
            let _ = writeln!(log, "step {step} loss {loss:.4}");
        }
    })?;
    save_checkpoint(&report.checkpoint, &a.out)
}

fn run_calib(a: &CalibArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let corpus = read_file(&a.corpus)?;
    let params = CalibParams {
        samples: a.samples,
        ..CalibParams::default()
    };
    save_stats(&calibration::collect(&ckpt, &corpus, &params)?, &a.out)
}

fn run_prune(a: &PruneArgs, log: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let stats = a.stats.as_ref().map(load_stats).transpose()?;
    let params = PruneParams {
        lambda: a.lambda,
        redistribute: !a.no_redistribute,
        ..PruneParams::default()
    };
    let (pruned, summary) = prune_model(&ckpt, a.method, a.level, a.granularity, stats.as_ref(), &params)?;
    save_checkpoint(&pruned, &a.out)?;
    let _ = writeln!(
        log,
        "method={} level={} sparsity={:.6} discarded_rows={}",
        a.method,
        a.level,
        summary.achieved_sparsity(),
        summary.discarded_rows
    );
    Ok(())
}

fn run_sweep_cmd(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let report = run_sweep(&SweepSpec::load(&a.spec)?)?;
    // Render both before writing either, so a failure leaves no outputs.
    let csv = report.to_csv()?;
    let md = report.to_markdown()?;
    if let Some(p) = &a.out_csv {
        write_atomic(p, csv.as_bytes())?;
    }
    if let Some(p) = &a.out_md {
        write_atomic(p, md.as_bytes())?;
    }
    if a.out_csv.is_none() && a.out_md.is_none() {
        out.write_all(md.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn run_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let report = PruneReport::load_csv(&a.input)?;
    let text = match a.format {
        ReportFormat::Markdown => report.to_markdown()?,
        ReportFormat::Csv => report.to_csv()?,
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Execute a parsed command. `out` receives results, `log` progress lines.
pub fn execute(cli: &Cli, out: &mut dyn Write, log: &mut dyn Write) -> Result<()> {
    cli.command.validate_paths()?;
    match &cli.command {
        Command::Train(a) => run_train(a, log),
        Command::Calib(a) => run_calib(a),
        Command::Prune(a) => run_prune(a, log),
        Command::Eval(a) => {
            let ckpt = load_checkpoint(&a.ckpt)?;
            let ppl = perplexity(&ckpt, &read_file(&a.corpus)?)?;
            writeln!(out, "perplexity={ppl:.3}").map_err(|e| Error::io("<stdout>", e))
        }
        Command::Sweep(a) => run_sweep_cmd(a, out),
        Command::Report(a) => run_report(a, out),
    }
}

/// Parse `argv`, run, and map the outcome to an exit status.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error: {line}");
            EXIT_FAILURE
        }
    }
}
