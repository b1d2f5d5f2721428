//! Domain adaptation through transport.
//!
//! Source points are carried into the target domain by the barycentric map
//! `x̂ᵢ = Σⱼ zⱼ γᵢⱼ / pᵢ` and then serve, with their source labels, as the
//! training set of a 1-nearest-neighbour classifier for target points. The
//! entropic weight is chosen by accuracy on a labeled target training split
//! and the chosen plan is scored on a disjoint target test split.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabeledCloud, PointCloud};
use crate::error::{Error, Result};
use crate::gml::{self, BaselineKind, FitResult, GmlConfig, MetricMode};
use crate::scalar::Scalar;
use crate::sinkhorn::{Histogram, TransportPlan};

/// Default entropic weights, relative to the median cost entry.
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.005, 0.01, 0.05, 0.1, 0.5, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OT_I")]
    OtIdentity,
    #[serde(rename = "OT_W")]
    OtGram,
    #[serde(rename = "OT_Winv")]
    OtGramInverse,
    #[serde(rename = "Proposed")]
    Proposed,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::OtIdentity,
        Method::OtGram,
        Method::OtGramInverse,
        Method::Proposed,
    ];

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Method::OtIdentity => Some(BaselineKind::Identity),
            Method::OtGram => Some(BaselineKind::Gram),
            Method::OtGramInverse => Some(BaselineKind::GramInverse),
            Method::Proposed => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::OtIdentity => "OT_I",
            Method::OtGram => "OT_W",
            Method::OtGramInverse => "OT_Winv",
            Method::Proposed => "Proposed",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "oti" | "identity" | "euclidean" => Ok(Method::OtIdentity),
            "otw" | "gram" => Ok(Method::OtGram),
            "otwinv" | "otw1" | "graminverse" | "whiten" => Ok(Method::OtGramInverse),
            "proposed" | "gml" | "learned" => Ok(Method::Proposed),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

/// One evaluated (method, seed) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub method: Method,
    pub lambda_chosen: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seed: u64,
    /// Whether every Sinkhorn solve of the chosen fit met its tolerance.
    pub sinkhorn_converged: bool,
}

fn zero_mass_fallback<T: Scalar>(g: &TransportPlan<T>, z: &PointCloud<T>, p: &Histogram<T>) -> Result<(PointCloud<T>, Vec<usize>)> {
    if g.rows() != p.len() || g.cols() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan {}x{} vs {} source weights and {} target points",
            g.rows(),
            g.cols(),
            p.len(),
            z.len()
        )));
    }
    let q = g.col_marginal().weights();
    let target_mean = z.matrix() * q;
    let mut out = z.matrix() * g.matrix().transpose();
    let mut flagged = Vec::new();
    for i in 0..p.len() {
        let w = p.get(i);
        if w > T::zero() {
            let inv = T::one() / w;
            out.column_mut(i).scale_mut(inv);
        } else {
            flagged.push(i);
            out.set_column(i, &target_mean);
        }
    }
    Ok((PointCloud::new(out), flagged))
}

/// Barycentric projection of every source row into the target domain.
///
/// Fails with [`Error::ZeroMassRow`] on the first row with `pᵢ = 0`; see
/// [`barycentric_map_flagged`] for the lenient variant.
pub fn barycentric_map<T: Scalar>(
    g: &TransportPlan<T>,
    z: &PointCloud<T>,
    p: &Histogram<T>,
) -> Result<PointCloud<T>> {
    let (out, flagged) = zero_mass_fallback(g, z, p)?;
    match flagged.first() {
        Some(&row) => Err(Error::ZeroMassRow { row }),
        None => Ok(out),
    }
}

/// Like [`barycentric_map`], but rows with `pᵢ = 0` go to the `q`-weighted
/// target mean and are listed in the second return value.
pub fn barycentric_map_flagged<T: Scalar>(
    g: &TransportPlan<T>,
    z: &PointCloud<T>,
    p: &Histogram<T>,
) -> Result<(PointCloud<T>, Vec<usize>)> {
    zero_mass_fallback(g, z, p)
}

/// Candidates within this relative margin of the best expanded distance are
/// re-ranked with exact differences.
const RERANK_RTOL: f64 = 1e-8;

/// Label of the Euclidean-nearest training column for each query; ties go
/// to the lowest column index.
pub fn knn1_predict<T: Scalar>(train: &LabeledCloud<T>, queries: &PointCloud<T>) -> Result<Vec<u32>> {
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if train.dim() != queries.dim() {
        return Err(Error::DimensionMismatch(format!(
            "training dimension {} vs query dimension {}",
            train.dim(),
            queries.dim()
        )));
    }
    let tm = train.points.matrix();
    let qm = queries.matrix();
    let t_sq: Vec<T> = tm.column_iter().map(|c| c.norm_squared()).collect();
    // ‖q−t‖² = ‖q‖² + ‖t‖² − 2qᵀt; the ‖q‖² term does not change the ranking
    let cross: DMatrix<T> = tm.transpose() * qm;
    let two = T::lit(2.0);
    let margin = T::lit(RERANK_RTOL);
    let mut out = Vec::with_capacity(qm.ncols());
    let mut scores = vec![T::zero(); tm.ncols()];
    for k in 0..qm.ncols() {
        let q_sq = qm.column(k).norm_squared();
        let mut best = T::max_value().unwrap();
        for (j, s) in scores.iter_mut().enumerate() {
            *s = q_sq + t_sq[j] - two * cross[(j, k)];
            if *s < best {
                best = *s;
            }
        }
        let cutoff = best + margin * (q_sq + best.abs()) + T::EPSILON;
        let mut winner = None::<(T, usize)>;
        for (j, s) in scores.iter().enumerate() {
            if *s <= cutoff {
                let exact = (qm.column(k) - tm.column(j)).norm_squared();
                if winner.is_none_or(|(b, _)| exact < b) {
                    winner = Some((exact, j));
                }
            }
        }
        let (_, j) = winner.expect("nonempty training set");
        out.push(train.labels[j]);
    }
    Ok(out)
}

/// Fraction of exact matches.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidParameter("accuracy of an empty prediction".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Best entropic weight found by [`tune_lambda`].
#[derive(Clone, Debug)]
pub struct Tuned<T: Scalar> {
    /// Grid value, before any median scaling.
    pub lambda: T,
    pub train_accuracy: f64,
    pub fit: FitResult<T>,
    /// Barycentric images of the source points under the chosen plan.
    pub projected: LabeledCloud<T>,
}

/// Configuration that [`run_task`] hands to [`gml::fit`] for `method`.
pub fn method_config<T: Scalar>(
    method: Method,
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    cfg: &GmlConfig<T>,
) -> Result<GmlConfig<T>> {
    let mut out = cfg.clone();
    if let Some(kind) = method.baseline() {
        let metric = gml::baseline_metric(kind, source, target, &cfg.eps)?;
        out.metric = MetricMode::Frozen(metric);
    }
    Ok(out)
}

/// Fits with uniform marginals for every `λ` in the grid and keeps the one
/// whose projected source classifies `target_train` best (ties go to the
/// smaller `λ`).
pub fn tune_lambda<T: Scalar>(
    source: &LabeledCloud<T>,
    target_train: &LabeledCloud<T>,
    lambdas: &[T],
    cfg: &GmlConfig<T>,
) -> Result<Tuned<T>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if source.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let p = Histogram::uniform(source.len())?;
    let q = Histogram::uniform(target_train.len())?;
    let mut best: Option<Tuned<T>> = None;
    for &lambda in lambdas {
        let mut c = cfg.clone();
        c.sinkhorn.lambda = lambda;
        let fit = gml::fit(&source.points, &target_train.points, &p, &q, &c)?;
        let projected = barycentric_map(&fit.plan, &target_train.points, &p)?;
        let projected = LabeledCloud::new(projected, source.labels.clone())?;
        let pred = knn1_predict(&projected, &target_train.points)?;
        let acc = accuracy(&pred, &target_train.labels)?;
        let better = match &best {
            None => true,
            Some(b) => acc > b.train_accuracy || (acc == b.train_accuracy && lambda < b.lambda),
        };
        if better {
            best = Some(Tuned {
                lambda,
                train_accuracy: acc,
                fit,
                projected,
            });
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// Full protocol for one method: tune `λ` on `target_train`, report the
/// 1-NN accuracy of the projected source on `target_test`.
///
/// Target training labels are used only for choosing `λ`. The refit at the
/// chosen `λ` is deterministic, so the plan from the tuning pass is reused.
pub fn run_task<T: Scalar>(
    source: &LabeledCloud<T>,
    target_train: &LabeledCloud<T>,
    target_test: &LabeledCloud<T>,
    method: Method,
    lambdas: &[T],
    cfg: &GmlConfig<T>,
    seed: u64,
) -> Result<AdaptationReport> {
    if source.dim() != target_train.dim() || source.dim() != target_test.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dimension {}, target train {}, target test {}",
            source.dim(),
            target_train.dim(),
            target_test.dim()
        )));
    }
    let cfg = method_config(method, &source.points, &target_train.points, cfg)?;
    let tuned = tune_lambda(source, target_train, lambdas, &cfg)?;
    let pred = knn1_predict(&tuned.projected, &target_test.points)?;
    let test_accuracy = accuracy(&pred, &target_test.labels)?;
    Ok(AdaptationReport {
        method,
        lambda_chosen: tuned.lambda.as_f64(),
        train_accuracy: tuned.train_accuracy,
        test_accuracy,
        seed,
        sinkhorn_converged: tuned.fit.sinkhorn_converged,
    })
}
