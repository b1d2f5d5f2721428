//! Command-line driver for `gmlot`: fitting, domain adaptation runs and the
//! label-shift experiments, with results written as RawF64 matrices and CSV
//! tables.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gmlot::adapt::Method;

use config::{Overrides, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "gmlot", version, about = "Optimal transport with a learned ground metric")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a transport plan and metric; writes gamma.bin, metric.bin, objective.csv.
    Fit(Common),
    /// Domain adaptation on given files; writes report.csv and report.json.
    Adapt(Common),
    /// MNIST label-shift protocol; writes runs.csv and table.csv.
    ExperimentSkew(SkewArgs),
    /// Caltech-Office tasks on precomputed features; writes runs.csv and table.csv.
    ExperimentOffice(OfficeArgs),
    /// Average a report CSV per method (and skew or task); writes summary.csv.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Method(s): OT_I, OT_W, OT_Winv, Proposed (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,
    /// Single entropic weight instead of the tuning grid.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    /// Seed(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single-threaded linear algebra, for bit-reproducible outputs.
    #[arg(long)]
    pub deterministic: bool,
    /// Fail (exit 3) when a Sinkhorn solve misses its tolerance.
    #[arg(long)]
    pub strict: bool,
    /// Source points (CSV or RawF64).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target points (CSV or RawF64).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Held-out target points for `adapt`.
    #[arg(long)]
    pub target_test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SkewArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with the MNIST IDX files.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Work on 14×14 images.
    #[arg(long)]
    pub downsample: bool,
    /// One skew class per (skew, seed) pair instead of all of them.
    #[arg(long)]
    pub rotate_classes: bool,
    #[arg(long)]
    pub source_size: Option<usize>,
    #[arg(long)]
    pub target_size: Option<usize>,
    /// Skew percentages, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub skews: Vec<f64>,
    /// Skewed classes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub skew_classes: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct OfficeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with amazon.csv, caltech.csv, dslr.csv, webcam.csv.
    #[arg(long)]
    pub office_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Report CSV files (adapt report.csv or experiment runs.csv).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: gmlot::Error| e.to_string())
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        self.config_with(|_| {})
    }

    fn config_with(&self, extra: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(Overrides {
            methods: self.method.clone(),
            lambda: self.lambda,
            outer_iters: self.outer_iters,
            eps: self.eps,
            seeds: self.seed.clone(),
            out: self.out.clone(),
            deterministic: self.deterministic,
            strict: self.strict,
            source: self.source.clone(),
            target: self.target.clone(),
            target_test: self.target_test.clone(),
        });
        extra(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one parsed command line; the returned text belongs on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let (result, out) = match cli.command {
        Command::Summarize(a) => (commands::summarize(&a.inputs)?, a.out),
        command => {
            let cfg = match &command {
                Command::Fit(c) | Command::Adapt(c) => c.config()?,
                Command::ExperimentSkew(a) => a.common.config_with(|cfg| {
                    let e = &mut cfg.experiment;
                    if a.mnist_dir.is_some() {
                        e.mnist_dir = a.mnist_dir.clone();
                    }
                    e.downsample |= a.downsample;
                    e.rotate_classes |= a.rotate_classes;
                    if let Some(m) = a.source_size {
                        e.source_size = m;
                    }
                    if let Some(n) = a.target_size {
                        e.target_size = n;
                    }
                    if !a.skews.is_empty() {
                        e.skews = a.skews.clone();
                    }
                    if !a.skew_classes.is_empty() {
                        e.skew_classes = a.skew_classes.clone();
                    }
                })?,
                Command::ExperimentOffice(a) => a.common.config_with(|cfg| {
                    if a.office_dir.is_some() {
                        cfg.office.dir = a.office_dir.clone();
                    }
                })?,
                Command::Summarize(_) => unreachable!(),
            };
            let out = cfg.out_dir()?.to_path_buf();
            if cfg.deterministic {
                gmlot::force_single_thread();
            }
            let result = match command {
                Command::Fit(_) => commands::fit(&cfg)?,
                Command::Adapt(_) => commands::adapt(&cfg)?,
                Command::ExperimentSkew(_) => commands::experiment_skew(&cfg)?,
                Command::ExperimentOffice(_) => commands::experiment_office(&cfg)?,
                Command::Summarize(_) => unreachable!(),
            };
            (result, Some(out))
        }
    };
    if let Some(dir) = out {
        result.files.commit(&dir)?;
    }
    Ok(result.stdout)
}
