//! Run configuration: a JSON file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use gmlot::adapt::{Method, DEFAULT_LAMBDA_GRID};
use gmlot::data::{self, Format, RawDataset};
use gmlot::gml::{DChoice, EpsPolicy, GmlConfig, LambdaScale};
use gmlot::sinkhorn::{SinkhornConfig, SinkhornMethod};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DSpec {
    #[default]
    Identity,
    GramSum,
    GramSumInverse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// `eps · trace(C_γ)/d`.
    #[default]
    Relative,
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Csv,
    RawF64,
    Idx,
}

/// One input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: PathBuf,
    /// Guessed from the extension when absent (`.csv`, otherwise RawF64).
    #[serde(default)]
    pub format: Option<FileFormat>,
    /// CSV only: whether the last column holds labels. Defaults to what the
    /// command needs (unlabeled for `fit`, labeled otherwise).
    #[serde(default)]
    pub labeled: Option<bool>,
    /// IDX only: the label file.
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

impl DataSpec {
    pub fn from_path(path: PathBuf) -> Self {
        Self {
            path,
            format: None,
            labeled: None,
            labels: None,
        }
    }

    fn format(&self) -> FileFormat {
        self.format.unwrap_or_else(|| {
            match self.path.extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("csv") => FileFormat::Csv,
                _ => FileFormat::RawF64,
            }
        })
    }

    pub fn load(&self, want_labels: bool) -> Result<RawDataset<f64>, CliError> {
        let ds = self.read(want_labels).map_err(|e| match CliError::from(e) {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", self.path.display())),
            other => other,
        })?;
        if want_labels && ds.labels.is_none() {
            return Err(CliError::Data(format!("{} has no labels", self.path.display())));
        }
        Ok(ds)
    }

    fn read(&self, want_labels: bool) -> gmlot::Result<RawDataset<f64>> {
        Ok(match self.format() {
            FileFormat::Csv => {
                let labeled = self.labeled.unwrap_or(want_labels);
                data::load_matrix(&self.path, Format::Csv { labeled })?
            }
            FileFormat::RawF64 => data::load_matrix(&self.path, Format::RawF64)?,
            FileFormat::Idx => match &self.labels {
                Some(l) => data::load_idx_pair(&self.path, l)?,
                None => data::load_matrix(&self.path, Format::Idx)?,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornSpec {
    pub method: SinkhornMethod,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornSpec {
    fn default() -> Self {
        Self {
            method: SinkhornMethod::Newton,
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

/// Settings of `experiment-skew`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewExperiment {
    pub skews: Vec<f64>,
    pub skew_classes: Vec<u32>,
    /// Size of the uniform source sample X.
    pub source_size: usize,
    /// Size of each skewed target sample (Z_t and Z_e).
    pub target_size: usize,
    /// Halve both image sides (28×28 → 14×14) before sampling.
    pub downsample: bool,
    /// Run one skew class per (skew, seed) pair, cycling through
    /// `skew_classes`, instead of every class for every seed.
    pub rotate_classes: bool,
    /// Directory with the four MNIST IDX files. X is drawn from the t10k
    /// pair, Z_t and Z_e from the train pair. Ignored when `source` and
    /// `target` are both given.
    pub mnist_dir: Option<PathBuf>,
}

impl Default for SkewExperiment {
    fn default() -> Self {
        Self {
            skews: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            skew_classes: (0..10).collect(),
            source_size: 500,
            target_size: 500,
            downsample: false,
            rotate_classes: false,
            mnist_dir: None,
        }
    }
}

/// Settings of `experiment-office`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfficeExperiment {
    /// Directory with `amazon.csv`, `caltech.csv`, `dslr.csv`, `webcam.csv`
    /// (one feature vector per row, label in the last column).
    pub dir: Option<PathBuf>,
    pub per_class: usize,
    /// Per-class source size when the source domain is DSLR.
    pub per_class_dslr: usize,
}

impl Default for OfficeExperiment {
    fn default() -> Self {
        Self {
            dir: None,
            per_class: 10,
            per_class_dslr: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Methods to run; `fit` takes exactly one and defaults to `Proposed`,
    /// the other commands default to all four.
    pub methods: Vec<Method>,
    pub d_choice: DSpec,
    /// Single entropic weight; replaces `lambda_grid` when set.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub lambda_scale: LambdaScale,
    pub outer_iters: usize,
    pub eps: f64,
    pub eps_mode: EpsMode,
    pub objective_rtol: f64,
    pub sinkhorn: SinkhornSpec,
    pub seeds: Vec<u64>,
    pub source: Option<DataSpec>,
    pub target: Option<DataSpec>,
    /// Held-out target set for `adapt`; without it each seed splits
    /// `target` into halves.
    pub target_test: Option<DataSpec>,
    pub out: Option<PathBuf>,
    /// Single-threaded linear algebra.
    pub deterministic: bool,
    /// Treat a Sinkhorn solve that misses its tolerance as a failure.
    pub strict: bool,
    pub experiment: SkewExperiment,
    pub office: OfficeExperiment,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            methods: Vec::new(),
            d_choice: DSpec::Identity,
            lambda: None,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            lambda_scale: LambdaScale::MedianCost,
            outer_iters: 10,
            eps: 1e-6,
            eps_mode: EpsMode::Relative,
            objective_rtol: 1e-6,
            sinkhorn: SinkhornSpec::default(),
            seeds: vec![0, 1, 2, 3, 4],
            source: None,
            target: None,
            target_test: None,
            out: None,
            deterministic: false,
            strict: false,
            experiment: SkewExperiment::default(),
            office: OfficeExperiment::default(),
        }
    }
}

/// Flag values that replace config fields when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub methods: Vec<Method>,
    pub lambda: Option<f64>,
    pub outer_iters: Option<usize>,
    pub eps: Option<f64>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    pub strict: bool,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: Overrides) {
        if !o.methods.is_empty() {
            self.methods = o.methods;
        }
        if o.lambda.is_some() {
            self.lambda = o.lambda;
        }
        if let Some(l) = o.outer_iters {
            self.outer_iters = l;
        }
        if let Some(e) = o.eps {
            self.eps = e;
        }
        if !o.seeds.is_empty() {
            self.seeds = o.seeds;
        }
        if o.out.is_some() {
            self.out = o.out;
        }
        self.deterministic |= o.deterministic;
        self.strict |= o.strict;
        if let Some(p) = o.source {
            self.source = Some(DataSpec::from_path(p));
        }
        if let Some(p) = o.target {
            self.target = Some(DataSpec::from_path(p));
        }
        if let Some(p) = o.target_test {
            self.target_test = Some(DataSpec::from_path(p));
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.lambdas().is_empty() {
            return bad("lambda grid is empty".into());
        }
        if let Some(l) = self.lambdas().iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return bad(format!("lambda must be positive, got {l}"));
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("duplicate seeds".into());
        }
        let mut methods = self.methods.clone();
        methods.sort_unstable();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return bad("duplicate methods".into());
        }
        if self.experiment.skews.is_empty() || self.experiment.skew_classes.is_empty() {
            return bad("experiment needs at least one skew and one skew class".into());
        }
        // the remaining numeric checks are the library's
        self.gml_config(self.lambdas()[0]).validate()?;
        Ok(())
    }

    pub fn lambdas(&self) -> Vec<f64> {
        match self.lambda {
            Some(l) => vec![l],
            None => self.lambda_grid.clone(),
        }
    }

    /// Methods for the evaluation commands, in table order.
    pub fn eval_methods(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            Method::ALL.to_vec()
        } else {
            let mut m = self.methods.clone();
            m.sort_unstable();
            m
        }
    }

    pub fn gml_config(&self, lambda: f64) -> GmlConfig<f64> {
        let mut cfg = GmlConfig::new(lambda);
        cfg.outer_iters = self.outer_iters;
        cfg.eps = match self.eps_mode {
            EpsMode::Relative => EpsPolicy::TraceRelative(self.eps),
            EpsMode::Absolute => EpsPolicy::Absolute(self.eps),
        };
        cfg.d_choice = match self.d_choice {
            DSpec::Identity => DChoice::Identity,
            DSpec::GramSum => DChoice::GramSum,
            DSpec::GramSumInverse => DChoice::GramSumInverse,
        };
        cfg.sinkhorn = SinkhornConfig::new(lambda)
            .with_method(self.sinkhorn.method)
            .with_tol(self.sinkhorn.tol)
            .with_max_iter(self.sinkhorn.max_iter);
        cfg.objective_rtol = self.objective_rtol;
        cfg.lambda_scale = self.lambda_scale;
        cfg
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory (--out)".into()))
    }
}
