//! Experiment protocol: trajectory-level train/eval splits, ROC curves with
//! tie grouping, AUROC, FPR at a target TPR, and the end-to-end experiment
//! runner producing deterministic reports.

use crate::baselines::{
    gmm_fit_em_with, gmm_grid_search, CovarianceType, GmmFitOptions, GmmSearchSpec, LofIndex,
    RdVariant,
};
use crate::error::{Error, Result};
use crate::flows::{train_flow, FlowConfig, FlowKind, TrainConfig};
use crate::model_io::FittedModel;
use crate::pipeline::{score_trajectory, segment_score, Aggregation};
use crate::trajectory::{
    apply_standardizer, fit_standardizer, flatten_segment, segment_trajectory, FeatureVector,
    StandardizerStats, Trajectory,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// One (FPR, TPR) point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from sweeping the decision threshold over all observed scores,
/// descending, with equal scores grouped into one step. Points run from
/// (0,0) to (1,1) and are nondecreasing in both coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

/// Builds the ROC curve treating abnormal as the positive class.
pub fn roc(scores_abnormal: &[f64], scores_normal: &[f64]) -> Result<RocCurve> {
    if scores_abnormal.is_empty() || scores_normal.is_empty() {
        return Err(Error::InvalidParameter(
            "ROC needs at least one abnormal and one normal score".into(),
        ));
    }
    let mut all: Vec<(f64, bool)> = scores_abnormal
        .iter()
        .map(|&s| (s, true))
        .chain(scores_normal.iter().map(|&s| (s, false)))
        .collect();
    if let Some((s, _)) = all.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::Validation(format!("non-finite score {s}")));
    }
    // descending: highest scores are called abnormal first
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let np = scores_abnormal.len() as f64;
    let nn = scores_normal.len() as f64;
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp / nn,
            tpr: tp / np,
        });
    }

    let mut auroc = 0.0;
    for w in points.windows(2) {
        auroc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5;
    }
    Ok(RocCurve { points, auroc })
}

/// Smallest FPR at which the curve reaches the target TPR, linearly
/// interpolating between the bracketing sweep points when no point hits the
/// target exactly.
pub fn fpr_at_tpr(curve: &RocCurve, target: f64) -> f64 {
    let pts = &curve.points;
    let hit = pts.iter().position(|p| p.tpr >= target).unwrap_or(pts.len() - 1);
    let p = pts[hit];
    if p.tpr <= target || hit == 0 {
        return p.fpr;
    }
    let prev = pts[hit - 1];
    let span = p.tpr - prev.tpr;
    if span <= 0.0 {
        return p.fpr;
    }
    prev.fpr + (target - prev.tpr) / span * (p.fpr - prev.fpr)
}

/// Trajectory-level split: no segment of an evaluation trajectory ever
/// reaches training.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Trajectory>,
    pub eval_normal: Vec<Trajectory>,
    pub eval_abnormal: Vec<Trajectory>,
}

/// Seeded shuffle of the normal trajectories, then an 80/20 (by `ratio`)
/// cut at trajectory granularity. Abnormal trajectories are evaluation-only.
pub fn split_train_eval(
    normal: &[Trajectory],
    abnormal: &[Trajectory],
    ratio: f64,
    seed: u64,
) -> Result<Split> {
    if normal.is_empty() {
        return Err(Error::InvalidParameter("no normal trajectories to split".into()));
    }
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..normal.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (normal.len() as f64 * ratio).floor() as usize;
    let train = order[..n_train].iter().map(|&i| normal[i].clone()).collect();
    let eval_normal = order[n_train..].iter().map(|&i| normal[i].clone()).collect();
    Ok(Split {
        train,
        eval_normal,
        eval_abnormal: abnormal.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    CarVsBus,
    BusVsCar,
    Synthetic,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::CarVsBus => "car_vs_bus",
            Scenario::BusVsCar => "bus_vs_car",
            Scenario::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car_vs_bus" => Ok(Scenario::CarVsBus),
            "bus_vs_car" => Ok(Scenario::BusVsCar),
            "synthetic" => Ok(Scenario::Synthetic),
            other => Err(Error::InvalidParameter(format!("unknown scenario `{other}`"))),
        }
    }
}

/// What constitutes one ROC sample: an individual segment score, or a
/// trajectory score aggregated with the average or the median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Segment,
    Average,
    Median,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Segment => "segment",
            Variant::Average => "average",
            Variant::Median => "median",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "segment" => Ok(Variant::Segment),
            "average" | "mean" => Ok(Variant::Average),
            "median" => Ok(Variant::Median),
            other => Err(Error::InvalidParameter(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Maf,
    RealNvp,
    Gmm,
    Lof,
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::Maf => "maf",
            ModelChoice::RealNvp => "realnvp",
            ModelChoice::Gmm => "gmm",
            ModelChoice::Lof => "lof",
        })
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "maf" => Ok(ModelChoice::Maf),
            "realnvp" => Ok(ModelChoice::RealNvp),
            "gmm" => Ok(ModelChoice::Gmm),
            "lof" => Ok(ModelChoice::Lof),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

/// One experiment = one ROC curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub window: usize,
    pub variant: Variant,
    pub model: ModelChoice,
    pub seed: u64,
}

/// GMM hyperparameter policy for experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GmmSelection {
    Fixed {
        k: usize,
        cov_type: CovarianceType,
        fit: GmmFitOptions,
    },
    Grid(GmmSearchSpec),
}

impl Default for GmmSelection {
    fn default() -> Self {
        GmmSelection::Grid(GmmSearchSpec::default())
    }
}

/// Model hyperparameters shared by experiments and the train command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub flow_num_flows: usize,
    pub flow_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub gmm: GmmSelection,
    pub lof_k_values: Vec<usize>,
    pub lof_variant: RdVariant,
    pub split_ratio: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            flow_num_flows: 10,
            flow_hidden: vec![32, 32],
            train: TrainConfig::default(),
            gmm: GmmSelection::default(),
            lof_k_values: vec![10, 20, 30, 40, 50],
            lof_variant: RdVariant::Standard,
            split_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCounts {
    pub train_trajectories: usize,
    pub eval_normal_trajectories: usize,
    pub eval_abnormal_trajectories: usize,
    pub excluded_short_train: usize,
    pub excluded_short_eval_normal: usize,
    pub excluded_short_eval_abnormal: usize,
    pub train_segments: usize,
    pub eval_normal_samples: usize,
    pub eval_abnormal_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub counts: ExperimentCounts,
    pub auroc: f64,
    pub fpr80: f64,
    pub roc: Vec<RocPoint>,
}

/// Everything `run_experiment` produces, including the fitted model for
/// callers that also want to persist it.
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub model: FittedModel,
    pub stats: StandardizerStats,
    pub loss_trace: Vec<f64>,
}

fn flatten_training_segments(
    trajs: &[Trajectory],
    window: usize,
) -> Result<(Vec<FeatureVector>, usize, usize)> {
    let mut features = Vec::new();
    let mut kept = 0;
    let mut excluded = 0;
    for t in trajs {
        if t.len() < window {
            excluded += 1;
            continue;
        }
        kept += 1;
        for seg in segment_trajectory(t, window)? {
            features.push(flatten_segment(&seg));
        }
    }
    Ok((features, kept, excluded))
}

/// Fits the chosen model kind on standardized training features.
/// Returns the model and, for flows, the per-epoch loss trace.
pub fn fit_model(
    choice: ModelChoice,
    std_train: &[FeatureVector],
    params: &ModelParams,
    seed: u64,
) -> Result<(FittedModel, Vec<f64>)> {
    if std_train.is_empty() {
        return Err(Error::InvalidParameter("no training segments".into()));
    }
    let dim = std_train[0].dim();
    match choice {
        ModelChoice::Maf | ModelChoice::RealNvp => {
            let kind = if choice == ModelChoice::Maf {
                FlowKind::Maf
            } else {
                FlowKind::RealNvp
            };
            let flow_cfg = FlowConfig {
                kind,
                dim,
                num_flows: params.flow_num_flows,
                hidden: params.flow_hidden.clone(),
            };
            let train_cfg = TrainConfig {
                seed,
                ..params.train.clone()
            };
            let trained = train_flow(std_train, &flow_cfg, &train_cfg)?;
            Ok((FittedModel::Flow(trained.model), trained.loss_trace))
        }
        ModelChoice::Gmm => {
            let fit = match &params.gmm {
                GmmSelection::Fixed { k, cov_type, fit } => {
                    gmm_fit_em_with(std_train, *k, *cov_type, seed, fit)?
                }
                GmmSelection::Grid(spec) => gmm_grid_search(std_train, spec, seed)?.fit,
            };
            let trace = fit.log_likelihood_trace.clone();
            Ok((FittedModel::Gmm(fit.model), trace))
        }
        ModelChoice::Lof => {
            let points = std_train.iter().map(|v| v.values.clone()).collect();
            let index = LofIndex::build(points, &params.lof_k_values, params.lof_variant)?;
            Ok((FittedModel::Lof(index), Vec::new()))
        }
    }
}

/// Scores an evaluation set under a variant. Returns the sample scores, how
/// many trajectories were used, and how many were too short for the window.
pub fn variant_scores(
    model: &FittedModel,
    trajs: &[Trajectory],
    window: usize,
    stats: &StandardizerStats,
    variant: Variant,
) -> Result<(Vec<f64>, usize, usize)> {
    let scorer = model.scorer();
    let mut scores = Vec::new();
    let mut kept = 0;
    let mut excluded = 0;
    for t in trajs {
        if t.len() < window {
            excluded += 1;
            continue;
        }
        kept += 1;
        match variant {
            Variant::Segment => {
                for seg in segment_trajectory(t, window)? {
                    scores.push(segment_score(scorer, &seg, stats)?);
                }
            }
            Variant::Average => {
                scores.push(score_trajectory(scorer, t, window, stats, Aggregation::Average)?.score);
            }
            Variant::Median => {
                scores.push(score_trajectory(scorer, t, window, stats, Aggregation::Median)?.score);
            }
        }
    }
    Ok((scores, kept, excluded))
}

/// Runs one plan end to end: split, standardize on training data only, fit,
/// score the held-out normal and abnormal sets under the plan's variant, and
/// summarize as ROC/AUROC/FPR80. Deterministic for a fixed plan.
pub fn run_experiment(
    plan: &ExperimentPlan,
    normal: &[Trajectory],
    abnormal: &[Trajectory],
    params: &ModelParams,
) -> Result<ExperimentOutcome> {
    let annotate = |e: Error| -> Error {
        match e {
            Error::Training { epoch, message } => Error::Training {
                epoch,
                message: format!("[{} {} W={} seed={}] {message}", plan.model, plan.scenario, plan.window, plan.seed),
            },
            other => other,
        }
    };

    let split = split_train_eval(normal, abnormal, params.split_ratio, plan.seed)?;
    let (train_features, train_kept, train_excluded) =
        flatten_training_segments(&split.train, plan.window)?;
    if train_features.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no training trajectory reaches window length {}",
            plan.window
        )));
    }
    let stats = fit_standardizer(&train_features)?;
    let std_train: Vec<FeatureVector> = train_features
        .iter()
        .map(|f| apply_standardizer(&stats, f))
        .collect::<Result<_>>()?;

    let (model, loss_trace) =
        fit_model(plan.model, &std_train, params, plan.seed).map_err(annotate)?;

    let (scores_normal, kept_n, excl_n) =
        variant_scores(&model, &split.eval_normal, plan.window, &stats, plan.variant)?;
    let (scores_abnormal, kept_a, excl_a) =
        variant_scores(&model, &split.eval_abnormal, plan.window, &stats, plan.variant)?;

    let curve = roc(&scores_abnormal, &scores_normal)?;
    let fpr80 = fpr_at_tpr(&curve, 0.8);

    let report = ExperimentReport {
        plan: plan.clone(),
        counts: ExperimentCounts {
            train_trajectories: train_kept,
            eval_normal_trajectories: kept_n,
            eval_abnormal_trajectories: kept_a,
            excluded_short_train: train_excluded,
            excluded_short_eval_normal: excl_n,
            excluded_short_eval_abnormal: excl_a,
            train_segments: std_train.len(),
            eval_normal_samples: scores_normal.len(),
            eval_abnormal_samples: scores_abnormal.len(),
        },
        auroc: curve.auroc,
        fpr80,
        roc: curve.points,
    };
    Ok(ExperimentOutcome {
        report,
        model,
        stats,
        loss_trace,
    })
}

/// CSV export of a ROC point list for external plotting.
pub fn write_roc_csv<W: std::io::Write>(out: &mut W, points: &[RocPoint]) -> Result<()> {
    writeln!(out, "fpr,tpr")?;
    for p in points {
        writeln!(out, "{},{}", p.fpr, p.tpr)?;
    }
    Ok(())
}
