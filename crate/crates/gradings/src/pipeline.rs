//! Segment scoring and aggregation: any density model or distance scorer is
//! applied to every window of a trajectory, and the per-window anomaly
//! degrees are combined into a single trajectory score.

use crate::baselines::{gmm_score, GmmModel, LofIndex};
use crate::error::{Error, Result};
use crate::flows::FlowModel;
use crate::trajectory::{
    apply_standardizer, flatten_segment, segment_trajectory, FeatureVector, Segment,
    StandardizerStats, Trajectory,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

/// How per-segment scores combine into one trajectory score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Median,
    Average,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Median => "median",
            Aggregation::Average => "average",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "median" => Ok(Aggregation::Median),
            "average" | "mean" => Ok(Aggregation::Average),
            other => Err(Error::InvalidParameter(format!(
                "unknown aggregation `{other}`"
            ))),
        }
    }
}

/// Anything that turns a standardized feature vector into an anomaly degree,
/// higher meaning more anomalous. Implementations must be deterministic for
/// a fitted model.
pub trait AnomalyScorer: Send + Sync {
    fn dim(&self) -> usize;
    fn score(&self, v: &FeatureVector) -> Result<f64>;
}

impl AnomalyScorer for FlowModel {
    fn dim(&self) -> usize {
        FlowModel::dim(self)
    }

    fn score(&self, v: &FeatureVector) -> Result<f64> {
        Ok(-self.log_prob(&v.values)?)
    }
}

impl AnomalyScorer for GmmModel {
    fn dim(&self) -> usize {
        GmmModel::dim(self)
    }

    fn score(&self, v: &FeatureVector) -> Result<f64> {
        if v.dim() != GmmModel::dim(self) {
            return Err(Error::ConfigMismatch(format!(
                "GMM dimension {} vs input {}",
                GmmModel::dim(self),
                v.dim()
            )));
        }
        Ok(gmm_score(self, &v.values))
    }
}

impl AnomalyScorer for LofIndex {
    fn dim(&self) -> usize {
        LofIndex::dim(self)
    }

    fn score(&self, v: &FeatureVector) -> Result<f64> {
        LofIndex::score(self, &v.values)
    }
}

/// Scores one segment: flatten, standardize, then apply the model.
pub fn segment_score(
    model: &dyn AnomalyScorer,
    seg: &Segment,
    stats: &StandardizerStats,
) -> Result<f64> {
    let flat = flatten_segment(seg);
    if flat.dim() != model.dim() {
        return Err(Error::ConfigMismatch(format!(
            "segment features {} vs model dimension {} (window mismatch?)",
            flat.dim(),
            model.dim()
        )));
    }
    model.score(&apply_standardizer(stats, &flat)?)
}

/// Median (midpoint of the two central order statistics for even lengths)
/// or arithmetic mean. Empty input is an error: trajectories shorter than
/// the window must be rejected upstream.
pub fn aggregate(scores: &[f64], kind: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot aggregate an empty score list".into(),
        ));
    }
    Ok(match kind {
        Aggregation::Average => scores.iter().sum::<f64>() / scores.len() as f64,
        Aggregation::Median => {
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Normal,
    Abnormal,
}

/// Threshold rule: abnormal iff the score reaches the threshold (inclusive).
pub fn decide(score: f64, threshold: f64) -> Decision {
    if score >= threshold {
        Decision::Abnormal
    } else {
        Decision::Normal
    }
}

/// One trajectory's per-segment scores plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory {
    pub trajectory_id: String,
    pub segment_scores: Vec<f64>,
    pub aggregation: Aggregation,
    pub score: f64,
}

/// Windows the trajectory, scores every window, and aggregates.
pub fn score_trajectory(
    model: &dyn AnomalyScorer,
    traj: &Trajectory,
    window: usize,
    stats: &StandardizerStats,
    kind: Aggregation,
) -> Result<ScoredTrajectory> {
    if traj.len() < window {
        return Err(Error::InvalidParameter(format!(
            "trajectory `{}` has {} points, shorter than window {window}",
            traj.id(),
            traj.len()
        )));
    }
    let segments = segment_trajectory(traj, window)?;
    let mut segment_scores = Vec::with_capacity(segments.len());
    for seg in &segments {
        segment_scores.push(segment_score(model, seg, stats)?);
    }
    let score = aggregate(&segment_scores, kind)?;
    Ok(ScoredTrajectory {
        trajectory_id: traj.id().to_string(),
        segment_scores,
        aggregation: kind,
        score,
    })
}

/// CSV dump: one row per trajectory.
pub fn write_scores_csv<W: Write>(out: &mut W, scored: &[ScoredTrajectory]) -> Result<()> {
    writeln!(out, "trajectory_id,n_segments,aggregation,score")?;
    for s in scored {
        writeln!(
            out,
            "{},{},{},{}",
            s.trajectory_id,
            s.segment_scores.len(),
            s.aggregation,
            s.score
        )?;
    }
    Ok(())
}

/// Long-format CSV dump: one row per segment.
pub fn write_segment_scores_csv<W: Write>(out: &mut W, scored: &[ScoredTrajectory]) -> Result<()> {
    writeln!(out, "trajectory_id,segment_index,score")?;
    for s in scored {
        for (i, v) in s.segment_scores.iter().enumerate() {
            writeln!(out, "{},{},{}", s.trajectory_id, i + 1, v)?;
        }
    }
    Ok(())
}
