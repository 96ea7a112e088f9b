//! Built-in synthetic scenario: two vehicle-like route families with
//! different geometry, speed, and time-of-week behavior, so the full
//! pipeline can run without any external dataset.
//!
//! The normal family drives circular arcs around a home area, departing in
//! weekday commute peaks. The abnormal family drives straight crosstown
//! lines through the same region at lower speed, departing at arbitrary
//! hours of the week.

use crate::trajectory::{LocationPoint, Trajectory};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Meters per degree of latitude (WGS-84, mid latitudes).
const METERS_PER_DEG_LAT: f64 = 111_320.0;

/// Epoch of Monday 2009-03-09 00:00 UTC, the anchor week of the generator.
const BASE_MONDAY: f64 = 1_236_556_800.0;

/// Sampling interval of the simulated GPS logger.
const SAMPLE_INTERVAL: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_normal: usize,
    pub n_abnormal: usize,
    /// Trajectory lengths are drawn uniformly from `min_len..=max_len`.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_normal: 200,
            n_abnormal: 60,
            min_len: 15,
            max_len: 25,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub normal: Vec<Trajectory>,
    pub abnormal: Vec<Trajectory>,
}

fn meters_to_deg(lat: f64, east_m: f64, north_m: f64) -> (f64, f64) {
    let dlat = north_m / METERS_PER_DEG_LAT;
    let dlon = east_m / (METERS_PER_DEG_LAT * lat.to_radians().cos());
    (dlat, dlon)
}

fn normal_sample(rng: &mut impl Rng, mean: f64, std: f64) -> f64 {
    mean + std * rng.sample::<f64, _>(StandardNormal)
}

fn trajectory_len(rng: &mut impl Rng, spec: &SyntheticSpec) -> usize {
    if spec.max_len <= spec.min_len {
        spec.min_len.max(2)
    } else {
        rng.gen_range(spec.min_len..=spec.max_len).max(2)
    }
}

/// Departure timestamp inside the anchor half-year, with the weekly phase
/// drawn from the family's hour-of-week distribution.
fn departure(rng: &mut impl Rng, commute: bool) -> f64 {
    let week = rng.gen_range(0..26) as f64;
    let (day, hour) = if commute {
        let day = rng.gen_range(0..5) as f64; // Monday..Friday
        let peak = if rng.gen_bool(0.5) { 8.5 } else { 18.0 };
        (day, normal_sample(rng, peak, 0.75))
    } else {
        (rng.gen_range(0..7) as f64, rng.gen_range(0.0..24.0))
    };
    BASE_MONDAY + week * 604_800.0 + day * 86_400.0 + hour.clamp(0.0, 23.99) * 3600.0
}

fn arc_route(rng: &mut impl Rng, len: usize, id: String) -> Trajectory {
    let center_lat = normal_sample(rng, 39.90, 0.010);
    let center_lon = normal_sample(rng, 116.40, 0.012);
    let radius = rng.gen_range(1500.0..3000.0);
    let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let speed = normal_sample(rng, 12.0, 1.5).clamp(8.0, 16.0);
    let t0 = departure(rng, true);

    let mut points = Vec::with_capacity(len);
    for i in 0..len {
        let east = radius * angle.cos() + normal_sample(rng, 0.0, 8.0);
        let north = radius * angle.sin() + normal_sample(rng, 0.0, 8.0);
        let (dlat, dlon) = meters_to_deg(center_lat, east, north);
        let p = LocationPoint::new(
            center_lat + dlat,
            center_lon + dlon,
            t0 + i as f64 * SAMPLE_INTERVAL,
        )
        .expect("generated point in range");
        points.push(p);
        angle += direction * speed * SAMPLE_INTERVAL / radius;
    }
    Trajectory::new(id, points).expect("strictly increasing timestamps")
}

fn line_route(rng: &mut impl Rng, len: usize, id: String) -> Trajectory {
    let start_lat = normal_sample(rng, 39.93, 0.012);
    let start_lon = normal_sample(rng, 116.37, 0.014);
    let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = normal_sample(rng, 7.0, 1.2).clamp(4.0, 10.0);
    let t0 = departure(rng, false);

    let (mut east, mut north) = (0.0f64, 0.0f64);
    let mut points = Vec::with_capacity(len);
    for i in 0..len {
        let (dlat, dlon) = meters_to_deg(
            start_lat,
            east + normal_sample(rng, 0.0, 8.0),
            north + normal_sample(rng, 0.0, 8.0),
        );
        let p = LocationPoint::new(
            start_lat + dlat,
            start_lon + dlon,
            t0 + i as f64 * SAMPLE_INTERVAL,
        )
        .expect("generated point in range");
        points.push(p);
        east += speed * SAMPLE_INTERVAL * heading.cos();
        north += speed * SAMPLE_INTERVAL * heading.sin();
        heading += normal_sample(rng, 0.0, 0.02);
    }
    Trajectory::new(id, points).expect("strictly increasing timestamps")
}

/// Generates both families from one seed; deterministic.
pub fn generate(spec: &SyntheticSpec) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = (0..spec.n_normal)
        .map(|i| {
            let len = trajectory_len(&mut rng, spec);
            arc_route(&mut rng, len, format!("synthetic-normal/{i}"))
        })
        .collect();
    let abnormal = (0..spec.n_abnormal)
        .map(|i| {
            let len = trajectory_len(&mut rng, spec);
            line_route(&mut rng, len, format!("synthetic-abnormal/{i}"))
        })
        .collect();
    SyntheticData { normal, abnormal }
}
