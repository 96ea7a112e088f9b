//! Core trajectory domain types: GPS location points, ordered trajectories,
//! sliding-window segments, cyclic time encoding, flattening to feature
//! vectors, and per-dimension standardization.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Seconds in one week; the period of the hour-of-week encoding.
pub const WEEK_SECONDS: f64 = 604_800.0;

/// Hours in one week.
pub const WEEK_HOURS: f64 = 168.0;

/// Offset in hours from the Unix epoch (Thursday 00:00 UTC) back to the most
/// recent Monday 00:00 UTC.
const EPOCH_MONDAY_OFFSET_HOURS: f64 = 72.0;

/// Features emitted per location point: lat, lon, sin-hour, cos-hour.
pub const FEATURES_PER_POINT: usize = 4;

/// A single GPS fix: WGS-84 latitude/longitude in degrees plus a UTC
/// timestamp in seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationPoint {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: f64,
}

impl LocationPoint {
    pub fn new(lat: f64, lon: f64, timestamp: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Validation(format!("latitude {lat} out of [-90, 90]")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Validation(format!("longitude {lon} out of [-180, 180]")));
        }
        if !timestamp.is_finite() {
            return Err(Error::Validation("timestamp must be finite".into()));
        }
        Ok(Self { lat, lon, timestamp })
    }
}

/// An ordered, strictly time-increasing sequence of location points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    id: String,
    points: Vec<LocationPoint>,
}

impl Trajectory {
    /// Builds a trajectory, enforcing non-emptiness and strict timestamp
    /// monotonicity. The error names the first offending index.
    pub fn new(id: impl Into<String>, points: Vec<LocationPoint>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::Validation(format!("trajectory `{id}` has no points")));
        }
        for i in 1..points.len() {
            if points[i].timestamp <= points[i - 1].timestamp {
                return Err(Error::Validation(format!(
                    "trajectory `{id}`: timestamps not strictly increasing at index {i}"
                )));
            }
        }
        Ok(Self { id, points })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[LocationPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A length-W window of consecutive points from one trajectory.
/// `start_index` is 1-based, matching the range 1..=L-W+1.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub source_id: String,
    pub start_index: usize,
    pub points: Vec<LocationPoint>,
}

impl Segment {
    pub fn window(&self) -> usize {
        self.points.len()
    }
}

/// A flattened, time-encoded segment: 4 features per point, point-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Encodes a UTC timestamp as a point on the unit circle with a one-week
/// period. Returns (sin, cos) of 2*pi*h/168 where h is fractional hours
/// since the most recent Monday 00:00 UTC.
pub fn encode_time(timestamp: f64) -> (f64, f64) {
    let hours = timestamp / 3600.0;
    let hour_of_week = (hours + EPOCH_MONDAY_OFFSET_HOURS).rem_euclid(WEEK_HOURS);
    let phase = 2.0 * std::f64::consts::PI * hour_of_week / WEEK_HOURS;
    (phase.sin(), phase.cos())
}

/// Fractional hour of the week for a UTC timestamp (Monday 00:00 = 0).
pub fn hour_of_week(timestamp: f64) -> f64 {
    (timestamp / 3600.0 + EPOCH_MONDAY_OFFSET_HOURS).rem_euclid(WEEK_HOURS)
}

/// Slides a window of length `w` (stride 1) over the trajectory.
///
/// Returns all `L - w + 1` windows in order, the empty list when the
/// trajectory is shorter than `w`, and an error for `w == 0`.
pub fn segment_trajectory(traj: &Trajectory, w: usize) -> Result<Vec<Segment>> {
    if w == 0 {
        return Err(Error::InvalidParameter("window length W must be >= 1".into()));
    }
    let len = traj.len();
    if w > len {
        return Ok(Vec::new());
    }
    Ok((0..=len - w)
        .map(|i| Segment {
            source_id: traj.id().to_string(),
            start_index: i + 1,
            points: traj.points()[i..i + w].to_vec(),
        })
        .collect())
}

/// Flattens a segment into a 4W-dimensional row: for each point in order,
/// (lat, lon, sin-hour, cos-hour).
pub fn flatten_segment(seg: &Segment) -> FeatureVector {
    let mut values = Vec::with_capacity(FEATURES_PER_POINT * seg.points.len());
    for p in &seg.points {
        let (s, c) = encode_time(p.timestamp);
        values.push(p.lat);
        values.push(p.lon);
        values.push(s);
        values.push(c);
    }
    FeatureVector { values }
}

/// Per-dimension mean and standard deviation, fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerStats {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

/// Floor applied to per-dimension standard deviations so constant columns
/// standardize to zero instead of dividing by zero.
pub const STDDEV_FLOOR: f64 = 1e-8;

/// Fits per-dimension z-score statistics (population variance).
pub fn fit_standardizer(train: &[FeatureVector]) -> Result<StandardizerStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidParameter("standardizer needs at least one vector".into()))?;
    let dim = first.dim();
    let n = train.len() as f64;

    let mut mean = vec![0.0; dim];
    for v in train {
        if v.dim() != dim {
            return Err(Error::ConfigMismatch(format!(
                "feature dimension {} != {}",
                v.dim(),
                dim
            )));
        }
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let mut var = vec![0.0; dim];
    for v in train {
        for ((s, x), m) in var.iter_mut().zip(&v.values).zip(&mean) {
            let d = x - m;
            *s += d * d;
        }
    }
    let stddev = var
        .iter()
        .map(|s| (s / n).sqrt().max(STDDEV_FLOOR))
        .collect();

    Ok(StandardizerStats { mean, stddev })
}

/// Applies the affine z-score transform.
pub fn apply_standardizer(stats: &StandardizerStats, v: &FeatureVector) -> Result<FeatureVector> {
    if v.dim() != stats.mean.len() {
        return Err(Error::ConfigMismatch(format!(
            "feature dimension {} != standardizer dimension {}",
            v.dim(),
            stats.mean.len()
        )));
    }
    let values = v
        .values
        .iter()
        .zip(&stats.mean)
        .zip(&stats.stddev)
        .map(|((x, m), s)| (x - m) / s)
        .collect();
    Ok(FeatureVector { values })
}

/// Inverts [`apply_standardizer`].
pub fn invert_standardizer(stats: &StandardizerStats, v: &FeatureVector) -> Result<FeatureVector> {
    if v.dim() != stats.mean.len() {
        return Err(Error::ConfigMismatch(format!(
            "feature dimension {} != standardizer dimension {}",
            v.dim(),
            stats.mean.len()
        )));
    }
    let values = v
        .values
        .iter()
        .zip(&stats.mean)
        .zip(&stats.stddev)
        .map(|((z, m), s)| z * s + m)
        .collect();
    Ok(FeatureVector { values })
}
