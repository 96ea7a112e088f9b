//! Gaussian mixture density estimation fitted by expectation-maximization,
//! with k-means++ seeding, covariance regularization, and a cross-validated
//! grid search over component count and covariance type.

use crate::error::{Error, Result};
use crate::trajectory::FeatureVector;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceType {
    Diagonal,
    Full,
}

impl fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceType::Diagonal => "diagonal",
            CovarianceType::Full => "full",
        })
    }
}

impl FromStr for CovarianceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diagonal" | "diag" => Ok(CovarianceType::Diagonal),
            "full" => Ok(CovarianceType::Full),
            other => Err(Error::InvalidParameter(format!(
                "unknown covariance type `{other}`"
            ))),
        }
    }
}

/// Per-component Gaussian evaluator cached from the covariance.
#[derive(Debug, Clone)]
enum CompCache {
    /// Inverse stddev per dimension plus the log-normalization constant.
    Diagonal { inv_std: Vec<f64>, log_norm: f64 },
    /// Lower Cholesky factor plus the log-normalization constant.
    Full { chol: DMatrix<f64>, log_norm: f64 },
}

/// A finite Gaussian mixture with positive weights summing to one and SPD
/// covariances (Cholesky factorizable after regularization).
#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    cov_type: CovarianceType,
    /// Per component: D entries (diagonal) or D*D row-major (full).
    covs: Vec<Vec<f64>>,
    cache: Vec<CompCache>,
}

impl GmmModel {
    /// Validates invariants and precomputes per-component evaluators.
    /// Fails when any covariance is not SPD.
    pub fn from_parameters(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        cov_type: CovarianceType,
        covs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::InvalidParameter(
                "mixture needs matching weights/means/covariances".into(),
            ));
        }
        let dim = means[0].len();
        let weight_sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must be non-negative and sum to 1 (sum {weight_sum})"
            )));
        }
        let mut cache = Vec::with_capacity(k);
        for (mean, cov) in means.iter().zip(&covs) {
            if mean.len() != dim {
                return Err(Error::InvalidParameter("inconsistent mean dimensions".into()));
            }
            cache.push(build_cache(dim, cov_type, cov)?);
        }
        Ok(Self {
            weights,
            means,
            cov_type,
            covs,
            cache,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn cov_type(&self) -> CovarianceType {
        self.cov_type
    }

    pub fn covariances(&self) -> &[Vec<f64>] {
        &self.covs
    }

    /// ln N(x | mu_k, Sigma_k) for one component.
    pub fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let mean = &self.means[k];
        match &self.cache[k] {
            CompCache::Diagonal { inv_std, log_norm } => {
                let mut q = 0.0;
                for i in 0..x.len() {
                    let z = (x[i] - mean[i]) * inv_std[i];
                    q += z * z;
                }
                log_norm - 0.5 * q
            }
            CompCache::Full { chol, log_norm } => {
                let d = x.len();
                // forward solve L y = (x - mu); q = |y|^2
                let mut y = vec![0.0; d];
                for i in 0..d {
                    let mut acc = x[i] - mean[i];
                    for j in 0..i {
                        acc -= chol[(i, j)] * y[j];
                    }
                    y[i] = acc / chol[(i, i)];
                }
                log_norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    /// ln sum_k pi_k N(x | mu_k, Sigma_k) via log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.num_components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x))
            .collect();
        log_sum_exp(&terms)
    }
}

/// Negative log-likelihood anomaly score.
pub fn gmm_score(model: &GmmModel, x: &[f64]) -> f64 {
    -model.log_density(x)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn build_cache(dim: usize, cov_type: CovarianceType, cov: &[f64]) -> Result<CompCache> {
    match cov_type {
        CovarianceType::Diagonal => {
            if cov.len() != dim {
                return Err(Error::InvalidParameter("diagonal covariance length".into()));
            }
            if cov.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Validation("non-positive diagonal covariance".into()));
            }
            let log_det: f64 = cov.iter().map(|v| v.ln()).sum();
            Ok(CompCache::Diagonal {
                inv_std: cov.iter().map(|v| 1.0 / v.sqrt()).collect(),
                log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
            })
        }
        CovarianceType::Full => {
            if cov.len() != dim * dim {
                return Err(Error::InvalidParameter("full covariance length".into()));
            }
            let m = DMatrix::from_row_slice(dim, dim, cov);
            let chol = m
                .cholesky()
                .ok_or_else(|| Error::Validation("covariance not positive definite".into()))?;
            let l = chol.l();
            let log_det: f64 = (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            Ok(CompCache::Full {
                chol: l,
                log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmFitOptions {
    pub max_iters: usize,
    /// Stop when the average log-likelihood improves by less than this.
    pub tol: f64,
    /// Added to every covariance diagonal each M-step.
    pub cov_reg: f64,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            cov_reg: 1e-6,
        }
    }
}

pub struct GmmFit {
    pub model: GmmModel,
    /// Average log-likelihood after each E-step.
    pub log_likelihood_trace: Vec<f64>,
}

/// EM with k-means++ seeding. A collapsed component (covariance not SPD even
/// after regularization, or an empty component) triggers one re-seed before
/// giving up.
pub fn gmm_fit_em(
    data: &[FeatureVector],
    k: usize,
    cov_type: CovarianceType,
    seed: u64,
) -> Result<GmmFit> {
    gmm_fit_em_with(data, k, cov_type, seed, &GmmFitOptions::default())
}

pub fn gmm_fit_em_with(
    data: &[FeatureVector],
    k: usize,
    cov_type: CovarianceType,
    seed: u64,
    opts: &GmmFitOptions,
) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    if data.len() <= k {
        return Err(Error::InvalidParameter(format!(
            "need more than K={k} samples, got {}",
            data.len()
        )));
    }
    let dim = data[0].dim();
    if dim == 0 || data.iter().any(|v| v.dim() != dim) {
        return Err(Error::ConfigMismatch("inconsistent feature dimensions".into()));
    }

    match run_em(data, k, cov_type, seed, opts) {
        Ok(fit) => Ok(fit),
        Err(Error::Validation(_)) => run_em(data, k, cov_type, seed.wrapping_add(1), opts),
        Err(e) => Err(e),
    }
}

fn run_em(
    data: &[FeatureVector],
    k: usize,
    cov_type: CovarianceType,
    seed: u64,
    opts: &GmmFitOptions,
) -> Result<GmmFit> {
    let n = data.len();
    let dim = data[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let means = kmeans_pp_centers(data, k, &mut rng);
    let weights = vec![1.0 / k as f64; k];
    let covs = initial_covariances(data, &means, cov_type, opts.cov_reg);
    let mut model = GmmModel::from_parameters(weights, means, cov_type, covs)?;

    let mut resp = vec![0.0f64; n * k];
    let mut trace = Vec::new();

    for _ in 0..opts.max_iters {
        // E-step
        let mut total_ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let terms: Vec<f64> = (0..k)
                .map(|c| model.weights[c].ln() + model.component_log_density(c, &x.values))
                .collect();
            let lse = log_sum_exp(&terms);
            total_ll += lse;
            for c in 0..k {
                resp[i * k + c] = (terms[c] - lse).exp();
            }
        }
        let avg_ll = total_ll / n as f64;
        let converged = trace
            .last()
            .map(|prev: &f64| avg_ll - prev < opts.tol)
            .unwrap_or(false);
        trace.push(avg_ll);
        if converged {
            break;
        }

        // M-step
        let mut weights = vec![0.0; k];
        let mut means = vec![vec![0.0; dim]; k];
        for (i, x) in data.iter().enumerate() {
            for c in 0..k {
                let r = resp[i * k + c];
                weights[c] += r;
                for d in 0..dim {
                    means[c][d] += r * x.values[d];
                }
            }
        }
        for c in 0..k {
            if !(weights[c] > 1e-12) {
                return Err(Error::Validation(format!("component {c} collapsed (empty)")));
            }
            for d in 0..dim {
                means[c][d] /= weights[c];
            }
        }

        let covs = match cov_type {
            CovarianceType::Diagonal => {
                let mut covs = vec![vec![0.0; dim]; k];
                for (i, x) in data.iter().enumerate() {
                    for c in 0..k {
                        let r = resp[i * k + c];
                        for d in 0..dim {
                            let diff = x.values[d] - means[c][d];
                            covs[c][d] += r * diff * diff;
                        }
                    }
                }
                for c in 0..k {
                    for d in 0..dim {
                        covs[c][d] = covs[c][d] / weights[c] + opts.cov_reg;
                    }
                }
                covs
            }
            CovarianceType::Full => {
                let mut covs = vec![vec![0.0; dim * dim]; k];
                let mut diff = vec![0.0; dim];
                for (i, x) in data.iter().enumerate() {
                    for c in 0..k {
                        let r = resp[i * k + c];
                        if r < 1e-300 {
                            continue;
                        }
                        for d in 0..dim {
                            diff[d] = x.values[d] - means[c][d];
                        }
                        let cov = &mut covs[c];
                        for a in 0..dim {
                            let ra = r * diff[a];
                            for b in a..dim {
                                cov[a * dim + b] += ra * diff[b];
                            }
                        }
                    }
                }
                for c in 0..k {
                    let cov = &mut covs[c];
                    for a in 0..dim {
                        for b in a..dim {
                            let v = cov[a * dim + b] / weights[c];
                            cov[a * dim + b] = v;
                            cov[b * dim + a] = v;
                        }
                        cov[a * dim + a] += opts.cov_reg;
                    }
                }
                covs
            }
        };

        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        model = GmmModel::from_parameters(weights, means, cov_type, covs)?;
    }

    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
    })
}

fn kmeans_pp_centers(data: &[FeatureVector], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data[rng.gen_range(0..n)].values.clone());
    let mut min_sq = vec![f64::INFINITY; n];
    while centers.len() < k {
        let last = centers.last().unwrap();
        let mut total = 0.0;
        for (i, x) in data.iter().enumerate() {
            let d2: f64 = x
                .values
                .iter()
                .zip(last)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < min_sq[i] {
                min_sq[i] = d2;
            }
            total += min_sq[i];
        }
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, d2) in min_sq.iter().enumerate() {
                if target < *d2 {
                    idx = i;
                    break;
                }
                target -= d2;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.push(data[pick].values.clone());
    }
    centers
}

fn initial_covariances(
    data: &[FeatureVector],
    means: &[Vec<f64>],
    cov_type: CovarianceType,
    reg: f64,
) -> Vec<Vec<f64>> {
    let dim = data[0].dim();
    let n = data.len() as f64;
    let mut grand_mean = vec![0.0; dim];
    for x in data {
        for d in 0..dim {
            grand_mean[d] += x.values[d];
        }
    }
    for m in &mut grand_mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for x in data {
        for d in 0..dim {
            let diff = x.values[d] - grand_mean[d];
            var[d] += diff * diff;
        }
    }
    for v in &mut var {
        *v = *v / n + reg;
    }
    let per_comp = match cov_type {
        CovarianceType::Diagonal => var,
        CovarianceType::Full => {
            let mut cov = vec![0.0; dim * dim];
            for d in 0..dim {
                cov[d * dim + d] = var[d];
            }
            cov
        }
    };
    means.iter().map(|_| per_comp.clone()).collect()
}

/// Grid-search space for GMM hyperparameter selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSearchSpec {
    pub components: Vec<usize>,
    pub cov_types: Vec<CovarianceType>,
    pub folds: usize,
    pub fit: GmmFitOptions,
}

impl Default for GmmSearchSpec {
    fn default() -> Self {
        Self {
            components: vec![1, 2, 4, 8, 16, 32],
            cov_types: vec![CovarianceType::Diagonal, CovarianceType::Full],
            folds: 5,
            fit: GmmFitOptions::default(),
        }
    }
}

pub struct GmmSearchOutcome {
    pub fit: GmmFit,
    pub k: usize,
    pub cov_type: CovarianceType,
    pub mean_heldout_ll: f64,
}

/// K-fold cross-validated grid search selecting by mean held-out average
/// log-likelihood, then refits the winner on all data. Ties keep the earliest
/// grid entry, so results are deterministic for a fixed seed.
pub fn gmm_grid_search(
    data: &[FeatureVector],
    spec: &GmmSearchSpec,
    seed: u64,
) -> Result<GmmSearchOutcome> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("grid search needs data".into()));
    }
    let folds = spec.folds.max(2).min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }

    let mut best: Option<(f64, usize, CovarianceType)> = None;
    for &cov_type in &spec.cov_types {
        for &k in &spec.components {
            let mut fold_lls = Vec::with_capacity(folds);
            let mut failed = false;
            for f in 0..folds {
                let mut train = Vec::new();
                let mut held = Vec::new();
                for (pos, &idx) in order.iter().enumerate() {
                    if pos % folds == f {
                        held.push(&data[idx]);
                    } else {
                        train.push(data[idx].clone());
                    }
                }
                if train.len() <= k || held.is_empty() {
                    failed = true;
                    break;
                }
                match gmm_fit_em_with(&train, k, cov_type, seed, &spec.fit) {
                    Ok(fit) => {
                        let ll: f64 = held
                            .iter()
                            .map(|x| fit.model.log_density(&x.values))
                            .sum::<f64>()
                            / held.len() as f64;
                        fold_lls.push(ll);
                    }
                    Err(_) => {
                        failed = true;
                        break;
                    }
                }
            }
            if failed {
                continue;
            }
            let mean_ll = fold_lls.iter().sum::<f64>() / fold_lls.len() as f64;
            let better = match &best {
                None => true,
                Some((cur, _, _)) => mean_ll > *cur,
            };
            if better {
                best = Some((mean_ll, k, cov_type));
            }
        }
    }

    let (mean_heldout_ll, k, cov_type) = best.ok_or_else(|| {
        Error::Training {
            epoch: 0,
            message: "no GMM configuration could be fitted".into(),
        }
    })?;
    let fit = gmm_fit_em_with(data, k, cov_type, seed, &spec.fit)?;
    Ok(GmmSearchOutcome {
        fit,
        k,
        cov_type,
        mean_heldout_ll,
    })
}
