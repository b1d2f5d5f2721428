//! Subcommand bodies. Each returns the files to write and the text for
//! standard output; nothing touches the output directory until the whole
//! computation has succeeded.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gmlot::adapt::{self, AdaptationReport, Method};
use gmlot::data::{self, RawDataset, SkewSpec};
use gmlot::gml;
use gmlot::sinkhorn::Histogram;
use gmlot::{LabeledCloud, PointCloud};

use crate::config::{DataSpec, FileFormat, RunConfig};
use crate::error::CliError;
use crate::output::{csv_bytes, num, Outputs};

pub struct CommandOutput {
    pub files: Outputs,
    pub stdout: String,
}

fn require<'a>(spec: &'a Option<DataSpec>, what: &str) -> Result<&'a DataSpec, CliError> {
    spec.as_ref()
        .ok_or_else(|| CliError::Config(format!("no {what} input given")))
}

fn check_strict(cfg: &RunConfig, converged: bool, what: &str) -> Result<(), CliError> {
    if converged {
        return Ok(());
    }
    if cfg.strict {
        return Err(CliError::Numerical(format!("Sinkhorn did not reach its tolerance ({what})")));
    }
    eprintln!("warning: Sinkhorn did not reach its tolerance ({what})");
    Ok(())
}

fn report_rows(reports: &[AdaptationReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.seed.to_string(),
                num(r.lambda_chosen),
                num(r.train_accuracy),
                num(r.test_accuracy),
            ]
        })
        .collect()
}

const REPORT_HEADER: [&str; 5] = ["method", "seed", "lambda_chosen", "train_acc", "test_acc"];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Learns a plan (and, for `Proposed`, a metric) between `source` and
/// `target` with uniform weights.
pub fn fit(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let method = match cfg.methods.as_slice() {
        [] => Method::Proposed,
        [m] => *m,
        _ => return Err(CliError::Config("fit takes a single method".into())),
    };
    let lambda = match cfg.lambdas().as_slice() {
        [l] => *l,
        _ => return Err(CliError::Config("fit needs a single lambda (--lambda)".into())),
    };
    let source = require(&cfg.source, "source")?.load(false)?;
    let target = require(&cfg.target, "target")?.load(false)?;
    let x = PointCloud::new(source.features);
    let z = PointCloud::new(target.features);
    let gcfg = adapt::method_config(method, &x, &z, &cfg.gml_config(lambda))?;
    let p = Histogram::uniform(x.len())?;
    let q = Histogram::uniform(z.len())?;
    let res = gml::fit(&x, &z, &p, &q, &gcfg)?;
    check_strict(cfg, res.sinkhorn_converged, "fit")?;

    let mut files = Outputs::new();
    let mut gamma = Vec::new();
    data::write_raw_f64_to(&mut gamma, res.plan.matrix(), None)?;
    files.add("gamma.bin", gamma);
    let mut metric = Vec::new();
    data::write_raw_f64_to(&mut metric, res.metric.as_matrix(), None)?;
    files.add("metric.bin", metric);
    let rows: Vec<Vec<String>> = res
        .objective_history
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1).to_string(), num(*v)])
        .collect();
    files.add("objective.csv", csv_bytes(&["iteration", "objective"], &rows)?);

    let last = res.objective_history.last().copied().unwrap_or(f64::NAN);
    let stdout = format!(
        "method {method}\nlambda {}\nobjective {}\niterations {}\nconverged {}\n",
        num(res.lambda),
        num(last),
        res.iters_run,
        res.converged
    );
    Ok(CommandOutput { files, stdout })
}

/// Runs every (seed, method) pair on fixed source/target files.
pub fn adapt(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let source = require(&cfg.source, "source")?.load(true)?;
    let target = require(&cfg.target, "target")?.load(true)?;
    let test = match &cfg.target_test {
        Some(s) => Some(s.load(true)?),
        None => None,
    };
    let x = source.to_labeled()?;
    let methods = cfg.eval_methods();
    let lambdas = cfg.lambdas();
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();

    let mut reports = Vec::with_capacity(seeds.len() * methods.len());
    for &seed in &seeds {
        let (zt, ze) = match &test {
            Some(t) => (target.to_labeled()?, t.to_labeled()?),
            None => {
                let (a, b) = data::half_split_indices(&target, seed)?;
                (target.select(&a)?, target.select(&b)?)
            }
        };
        for &method in &methods {
            let r = adapt::run_task(&x, &zt, &ze, method, &lambdas, &cfg.gml_config(lambdas[0]), seed)?;
            check_strict(cfg, r.sinkhorn_converged, &format!("{method}, seed {seed}"))?;
            reports.push(r);
        }
    }

    let csv = csv_bytes(&REPORT_HEADER, &report_rows(&reports))?;
    let json = serde_json::to_vec_pretty(&reports).map_err(|e| CliError::Data(e.to_string()))?;
    let mut files = Outputs::new();
    let stdout = String::from_utf8_lossy(&csv).into_owned();
    files.add("report.csv", csv);
    files.add("report.json", json);
    Ok(CommandOutput { files, stdout })
}

/// Sampling seed of one experiment unit; distinct for distinct inputs.
fn unit_seed(seed: u64, a: u64, b: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(a.wrapping_mul(1_009)).wrapping_add(b)
}

fn mnist_pair(dir: &Path, prefix: &str) -> DataSpec {
    DataSpec {
        path: dir.join(format!("{prefix}-images-idx3-ubyte")),
        format: Some(FileFormat::Idx),
        labeled: None,
        labels: Some(dir.join(format!("{prefix}-labels-idx1-ubyte"))),
    }
}

fn skew_pools(cfg: &RunConfig) -> Result<(RawDataset<f64>, RawDataset<f64>), CliError> {
    let exp = &cfg.experiment;
    let (s, t) = match (&cfg.source, &cfg.target, &exp.mnist_dir) {
        (Some(s), Some(t), _) => (s.clone(), t.clone()),
        (_, _, Some(dir)) => (mnist_pair(dir, "t10k"), mnist_pair(dir, "train")),
        _ => {
            return Err(CliError::Config(
                "experiment-skew needs --mnist-dir or both --source and --target".into(),
            ))
        }
    };
    let mut source = s.load(true)?;
    let mut target = t.load(true)?;
    if exp.downsample {
        source = source.downsample_2x()?;
        target = target.downsample_2x()?;
    }
    Ok((source, target))
}

/// Label-shift experiment: uniform source sample, skewed target samples.
pub fn experiment_skew(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let exp = &cfg.experiment;
    let (source, target) = skew_pools(cfg)?;
    for &w in &exp.skews {
        for &c in &exp.skew_classes {
            SkewSpec::new(c, w, exp.target_size).validate(target.class_count)?;
        }
    }
    let methods = cfg.eval_methods();
    let lambdas = cfg.lambdas();
    let gcfg = cfg.gml_config(lambdas[0]);
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let mut skews = exp.skews.clone();
    skews.sort_by(f64::total_cmp);
    let mut classes = exp.skew_classes.clone();
    classes.sort_unstable();

    let mut runs = Vec::new();
    let mut acc: HashMap<(usize, Method), Vec<f64>> = HashMap::new();
    let mut units = Vec::new();
    for (wi, &w) in skews.iter().enumerate() {
        if exp.rotate_classes {
            for (si, &seed) in seeds.iter().enumerate() {
                units.push((wi, w, classes[(wi * seeds.len() + si) % classes.len()], seed));
            }
        } else {
            for &c in &classes {
                units.extend(seeds.iter().map(|&seed| (wi, w, c, seed)));
            }
        }
    }
    for (wi, w, c, seed) in units {
        let s = unit_seed(seed, w.to_bits(), u64::from(c));
        let x = data::uniform_sample(&source, exp.source_size, s)?;
        let spec = SkewSpec::new(c, w, exp.target_size);
        let (zt, ze) = data::disjoint_split(&target, &spec, &spec, s)?;
        for &method in &methods {
            let t0 = Instant::now();
            let r = adapt::run_task(&x, &zt, &ze, method, &lambdas, &gcfg, seed)?;
            check_strict(cfg, r.sinkhorn_converged, &format!("skew {w}, class {c}, seed {seed}, {method}"))?;
            eprintln!(
                "skew {w} class {c} seed {seed} {method}: test {:.4} ({:.1} s)",
                r.test_accuracy,
                t0.elapsed().as_secs_f64()
            );
            acc.entry((wi, method)).or_default().push(r.test_accuracy);
            runs.push(vec![
                num(w),
                c.to_string(),
                seed.to_string(),
                method.to_string(),
                num(r.lambda_chosen),
                num(r.train_accuracy),
                num(r.test_accuracy),
            ]);
        }
    }

    let mut header = vec!["skew"];
    header.extend(methods.iter().map(|m| m.as_str()));
    let table: Vec<Vec<String>> = skews
        .iter()
        .enumerate()
        .map(|(wi, &w)| {
            let mut row = vec![num(w)];
            row.extend(methods.iter().map(|m| num(mean(&acc[&(wi, *m)]))));
            row
        })
        .collect();
    let table = csv_bytes(&header, &table)?;
    let mut files = Outputs::new();
    files.add(
        "runs.csv",
        csv_bytes(
            &["skew", "skew_class", "seed", "method", "lambda_chosen", "train_acc", "test_acc"],
            &runs,
        )?,
    );
    let stdout = String::from_utf8_lossy(&table).into_owned();
    files.add("table.csv", table);
    Ok(CommandOutput { files, stdout })
}

pub const OFFICE_DOMAINS: [(&str, &str); 4] = [
    ("A", "amazon.csv"),
    ("C", "caltech.csv"),
    ("D", "dslr.csv"),
    ("W", "webcam.csv"),
];

/// Paths of the four domain files, or the first one missing.
pub fn office_files(dir: &Path) -> Result<Vec<PathBuf>, PathBuf> {
    OFFICE_DOMAINS
        .iter()
        .map(|(_, f)| {
            let p = dir.join(f);
            if p.is_file() {
                Ok(p)
            } else {
                Err(p)
            }
        })
        .collect()
}

/// The twelve ordered domain pairs over precomputed feature files.
pub fn experiment_office(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let dir = cfg
        .office
        .dir
        .as_deref()
        .ok_or_else(|| CliError::Config("experiment-office needs --office-dir".into()))?;
    let paths = office_files(dir).map_err(|p| CliError::Data(format!("missing {}", p.display())))?;
    let domains: Vec<RawDataset<f64>> = paths
        .into_iter()
        .map(|p| {
            DataSpec {
                path: p,
                format: Some(FileFormat::Csv),
                labeled: Some(true),
                labels: None,
            }
            .load(true)
        })
        .collect::<Result<_, _>>()?;
    let methods = cfg.eval_methods();
    let lambdas = cfg.lambdas();
    let gcfg = cfg.gml_config(lambdas[0]);
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();

    let mut runs = Vec::new();
    let mut table = Vec::new();
    let mut task_means: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    for (si, (sname, _)) in OFFICE_DOMAINS.iter().enumerate() {
        for (ti, (tname, _)) in OFFICE_DOMAINS.iter().enumerate() {
            if si == ti {
                continue;
            }
            let task = format!("{sname}->{tname}");
            let per_class = if *sname == "D" {
                cfg.office.per_class_dslr
            } else {
                cfg.office.per_class
            };
            let mut acc: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
            for &seed in &seeds {
                let s = unit_seed(seed, si as u64, ti as u64);
                let xi = data::per_class_sample_indices(&domains[si], per_class, s)?;
                let x: LabeledCloud<f64> = domains[si].select(&xi)?;
                let (a, b) = data::half_split_indices(&domains[ti], s)?;
                let zt = domains[ti].select(&a)?;
                let ze = domains[ti].select(&b)?;
                for (k, &method) in methods.iter().enumerate() {
                    let r = adapt::run_task(&x, &zt, &ze, method, &lambdas, &gcfg, seed)?;
                    check_strict(cfg, r.sinkhorn_converged, &format!("{task}, seed {seed}, {method}"))?;
                    eprintln!("{task} seed {seed} {method}: test {:.4}", r.test_accuracy);
                    acc[k].push(r.test_accuracy);
                    runs.push(vec![
                        task.clone(),
                        seed.to_string(),
                        method.to_string(),
                        num(r.lambda_chosen),
                        num(r.train_accuracy),
                        num(r.test_accuracy),
                    ]);
                }
            }
            let mut row = vec![task];
            for (k, a) in acc.iter().enumerate() {
                let m = mean(a);
                task_means[k].push(m);
                row.push(num(m));
            }
            table.push(row);
        }
    }
    let mut avg = vec!["Average".to_string()];
    avg.extend(task_means.iter().map(|t| num(mean(t))));
    table.push(avg);

    let mut header = vec!["task"];
    header.extend(methods.iter().map(|m| m.as_str()));
    let table = csv_bytes(&header, &table)?;
    let mut files = Outputs::new();
    files.add(
        "runs.csv",
        csv_bytes(&["task", "seed", "method", "lambda_chosen", "train_acc", "test_acc"], &runs)?,
    );
    let stdout = String::from_utf8_lossy(&table).into_owned();
    files.add("table.csv", table);
    Ok(CommandOutput { files, stdout })
}

/// Columns that vary within a group and are averaged over or dropped.
const PER_RUN_COLUMNS: [&str; 6] = ["seed", "skew_class", "lambda_chosen", "train_acc", "test_acc", "sinkhorn_converged"];

/// Mean accuracies of a report CSV, grouped by every remaining column
/// (method, and skew or task when present). Groups keep the order in which
/// they first appear.
pub fn summarize(inputs: &[PathBuf]) -> Result<CommandOutput, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Config("summarize needs at least one report file".into()));
    }
    let mut key_names: Option<Vec<String>> = None;
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut sums: HashMap<Vec<String>, (usize, Vec<f64>, Vec<f64>)> = HashMap::new();
    for path in inputs {
        let mut rd = csv::Reader::from_path(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::Data(format!("{}: no {name} column", path.display())))
        };
        let (train, test) = (col("train_acc")?, col("test_acc")?);
        let keys: Vec<usize> = (0..header.len())
            .filter(|&i| !PER_RUN_COLUMNS.contains(&header[i].as_str()))
            .collect();
        let names: Vec<String> = keys.iter().map(|&i| header[i].clone()).collect();
        match &key_names {
            None => key_names = Some(names),
            Some(k) if *k != names => {
                return Err(CliError::Data(format!("{}: columns differ from the first file", path.display())))
            }
            _ => {}
        }
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| CliError::Data(format!("{}: {:?}: {e}", path.display(), &rec[i])))
            };
            let key: Vec<String> = keys.iter().map(|&i| rec[i].to_string()).collect();
            let (tr, te) = (parse(train)?, parse(test)?);
            let entry = sums.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0, Vec::new(), Vec::new())
            });
            entry.0 += 1;
            entry.1.push(tr);
            entry.2.push(te);
        }
    }
    let key_names = key_names.unwrap_or_default();
    let mut header: Vec<&str> = key_names.iter().map(String::as_str).collect();
    header.extend(["runs", "mean_train_acc", "mean_test_acc"]);
    let rows: Vec<Vec<String>> = order
        .iter()
        .map(|k| {
            let (n, tr, te) = &sums[k];
            let mut row = k.clone();
            row.extend([n.to_string(), num(mean(tr)), num(mean(te))]);
            row
        })
        .collect();
    let csv = csv_bytes(&header, &rows)?;
    let mut files = Outputs::new();
    let stdout = String::from_utf8_lossy(&csv).into_owned();
    files.add("summary.csv", csv);
    Ok(CommandOutput { files, stdout })
}
