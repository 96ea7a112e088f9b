//! Classical anomaly scorers used as baselines: a Gaussian mixture fitted by
//! EM and the local outlier factor over an exact k-NN index.

mod gmm;
mod lof;

pub use gmm::{
    gmm_fit_em, gmm_fit_em_with, gmm_grid_search, gmm_score, CovarianceType, GmmFit,
    GmmFitOptions, GmmModel, GmmSearchOutcome, GmmSearchSpec,
};
pub use lof::{LofIndex, RdVariant};
