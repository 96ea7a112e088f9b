//! Local outlier factor over an exact (full-scan) k-nearest-neighbor index.
//!
//! Scores are the average ratio of the neighbors' local reachability density
//! to the query's: around 1 for inliers, well above 1 for isolated points.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Floor applied to reachability distances so duplicate points do not send
/// local reachability densities to infinity.
pub const RD_FLOOR: f64 = 1e-12;

/// Which K-distance enters the reachability distance RD(x, u).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RdVariant {
    /// RD(x, u) = max(KD(u), |x - u|): the neighbor's K-distance.
    Standard,
    /// RD(x, u) = max(KD(x), |x - u|), reproducing a common transcription of
    /// the formula that uses the query's own K-distance.
    Paper,
}

impl fmt::Display for RdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RdVariant::Standard => "standard",
            RdVariant::Paper => "paper",
        })
    }
}

impl FromStr for RdVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(RdVariant::Standard),
            "paper" => Ok(RdVariant::Paper),
            other => Err(Error::InvalidParameter(format!("unknown RD variant `{other}`"))),
        }
    }
}

/// Precomputed quantities for one neighbor count K.
#[derive(Debug, Clone)]
struct KTable {
    k: usize,
    /// K-distance of each reference point (within the reference set).
    kdist: Vec<f64>,
    /// Local reachability density of each reference point.
    lrd: Vec<f64>,
}

/// Reference point set with exact K-NN lists and per-K precomputation.
/// Scoring takes the maximum LOF across the configured K values.
#[derive(Debug, Clone)]
pub struct LofIndex {
    points: Vec<Vec<f64>>,
    dim: usize,
    variant: RdVariant,
    /// Neighbor indices per reference point, ascending by (distance, index),
    /// truncated at max(k_values).
    neighbors: Vec<Vec<usize>>,
    tables: Vec<KTable>,
}

impl LofIndex {
    /// Builds the index. K values not satisfying 1 <= K < n are dropped;
    /// an empty usable set is an error.
    pub fn build(points: Vec<Vec<f64>>, k_values: &[usize], variant: RdVariant) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidParameter(
                "LOF needs at least 2 reference points".into(),
            ));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::ConfigMismatch("inconsistent reference dimensions".into()));
        }
        let mut ks: Vec<usize> = k_values.iter().copied().filter(|&k| k >= 1 && k < n).collect();
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no usable K in {k_values:?} for {n} reference points"
            )));
        }
        let kmax = *ks.last().unwrap();

        // exact scan: K nearest neighbors of every reference point, self excluded
        let mut neighbors = Vec::with_capacity(n);
        for i in 0..n {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(&points[i], &points[j]), j))
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.truncate(kmax);
            neighbors.push(dists.into_iter().map(|(_, j)| j).collect::<Vec<usize>>());
        }

        let mut index = Self {
            points,
            dim,
            variant,
            neighbors,
            tables: Vec::new(),
        };
        for k in ks {
            index.tables.push(index.build_table(k));
        }
        Ok(index)
    }

    fn build_table(&self, k: usize) -> KTable {
        let n = self.points.len();
        let kdist: Vec<f64> = (0..n)
            .map(|i| euclidean(&self.points[i], &self.points[self.neighbors[i][k - 1]]))
            .collect();
        let lrd: Vec<f64> = (0..n)
            .map(|i| {
                let sum: f64 = self.neighbors[i][..k]
                    .iter()
                    .map(|&u| {
                        let d = euclidean(&self.points[i], &self.points[u]);
                        let bound = match self.variant {
                            RdVariant::Standard => kdist[u],
                            RdVariant::Paper => kdist[i],
                        };
                        bound.max(d).max(RD_FLOOR)
                    })
                    .sum();
                k as f64 / sum
            })
            .collect();
        KTable { k, kdist, lrd }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variant(&self) -> RdVariant {
        self.variant
    }

    pub fn k_values(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.k).collect()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// LOF of an external query point for one K.
    pub fn score_query(&self, x: &[f64], k: usize) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::ConfigMismatch(format!(
                "query dimension {} vs index dimension {}",
                x.len(),
                self.dim
            )));
        }
        let table = self
            .tables
            .iter()
            .find(|t| t.k == k)
            .ok_or_else(|| Error::InvalidParameter(format!("K={k} not in index")))?;

        let mut dists: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| (euclidean(x, p), j))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dists.truncate(k);
        let kd_query = dists.last().unwrap().0;

        let rd_sum: f64 = dists
            .iter()
            .map(|&(d, u)| {
                let bound = match self.variant {
                    RdVariant::Standard => table.kdist[u],
                    RdVariant::Paper => kd_query,
                };
                bound.max(d).max(RD_FLOOR)
            })
            .sum();
        let lrd_query = k as f64 / rd_sum;
        Ok(dists.iter().map(|&(_, u)| table.lrd[u]).sum::<f64>() / k as f64 / lrd_query)
    }

    /// LOF of a reference-set member (its own entry excluded) for one K.
    pub fn score_member(&self, i: usize, k: usize) -> Result<f64> {
        let table = self
            .tables
            .iter()
            .find(|t| t.k == k)
            .ok_or_else(|| Error::InvalidParameter(format!("K={k} not in index")))?;
        let ratio_sum: f64 = self.neighbors[i][..k]
            .iter()
            .map(|&u| table.lrd[u] / table.lrd[i])
            .sum();
        Ok(ratio_sum / k as f64)
    }

    /// Anomaly score of an external point: the maximum LOF across the
    /// configured K values.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for table in &self.tables {
            best = best.max(self.score_query(x, table.k)?);
        }
        Ok(best)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Literal O(n^2) definition, kept deliberately naive.
    pub(crate) fn brute_force_lof(points: &[Vec<f64>], k: usize, variant: RdVariant) -> Vec<f64> {
        let n = points.len();
        let knn = |i: usize| -> Vec<usize> {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(&points[i], &points[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(_, j)| j).collect()
        };
        let kdist: Vec<f64> = (0..n)
            .map(|i| {
                let nb = knn(i);
                nb.iter()
                    .map(|&j| euclidean(&points[i], &points[j]))
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let rd = |x: usize, u: usize| -> f64 {
            let bound = match variant {
                RdVariant::Standard => kdist[u],
                RdVariant::Paper => kdist[x],
            };
            bound.max(euclidean(&points[x], &points[u])).max(RD_FLOOR)
        };
        let lrd: Vec<f64> = (0..n)
            .map(|i| k as f64 / knn(i).iter().map(|&u| rd(i, u)).sum::<f64>())
            .collect();
        (0..n)
            .map(|i| knn(i).iter().map(|&u| lrd[u] / lrd[i]).sum::<f64>() / k as f64)
            .collect()
    }

    #[test]
    fn grid_interior_points_score_near_one() {
        let mut points = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                points.push(vec![i as f64, j as f64]);
            }
        }
        let index = LofIndex::build(points.clone(), &[8], RdVariant::Standard).unwrap();
        let oracle = brute_force_lof(&points, 8, RdVariant::Standard);
        for i in 0..points.len() {
            let p = &points[i];
            let interior = p[0] >= 2.0 && p[0] <= 9.0 && p[1] >= 2.0 && p[1] <= 9.0;
            let got = index.score_member(i, 8).unwrap();
            assert!((got - oracle[i]).abs() < 1e-9);
            if interior {
                assert!((0.8..=1.2).contains(&got), "interior LOF {got}");
            }
        }
    }

    #[test]
    fn isolated_point_scores_far_above_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut points: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        points.push(vec![100.0, 0.0]);
        let index = LofIndex::build(points, &[10], RdVariant::Standard).unwrap();
        let score = index.score_member(60, 10).unwrap();
        assert!(score > 2.0, "outlier LOF {score}");
        // external query at the same location agrees on the magnitude
        let q = index.score_query(&[100.0, 0.0], 10).unwrap();
        assert!(q > 2.0);
    }

    #[test]
    fn identical_points_score_exactly_one() {
        let points = vec![vec![3.0, 3.0]; 10];
        let index = LofIndex::build(points, &[4], RdVariant::Standard).unwrap();
        for i in 0..10 {
            assert_eq!(index.score_member(i, 4).unwrap(), 1.0);
        }
    }

    #[test]
    fn rigid_motions_preserve_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let theta: f64 = 0.83;
        let (s, c) = theta.sin_cos();
        let moved: Vec<Vec<f64>> = points
            .iter()
            .map(|p| vec![c * p[0] - s * p[1] + 10.0, s * p[0] + c * p[1] - 4.0])
            .collect();
        let a = LofIndex::build(points, &[6], RdVariant::Standard).unwrap();
        let b = LofIndex::build(moved, &[6], RdVariant::Standard).unwrap();
        for i in 0..80 {
            let (x, y) = (a.score_member(i, 6).unwrap(), b.score_member(i, 6).unwrap());
            assert!((x - y).abs() < 1e-9, "rigid motion changed LOF: {x} vs {y}");
        }
    }

    #[test]
    fn paper_variant_differs_but_is_internally_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let idx = LofIndex::build(points.clone(), &[5], RdVariant::Paper).unwrap();
        let oracle = brute_force_lof(&points, 5, RdVariant::Paper);
        for i in 0..points.len() {
            assert!((idx.score_member(i, 5).unwrap() - oracle[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn unusable_k_values_are_dropped() {
        let points = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let index = LofIndex::build(points.clone(), &[2, 50], RdVariant::Standard).unwrap();
        assert_eq!(index.k_values(), vec![2]);
        assert!(LofIndex::build(points, &[50], RdVariant::Standard).is_err());
    }
}
