//! GRADINGS: segment-wise trajectory anomaly detection.
//!
//! Trajectories are cut into fixed-length sliding windows, each window is
//! flattened into a time-encoded feature vector, and a density model
//! (normalizing flow, Gaussian mixture) or a distance-based scorer (LOF)
//! assigns every window an anomaly degree. Per-window degrees are aggregated
//! (median or average) into a single per-trajectory anomaly score, which is
//! evaluated with ROC/AUROC/FPR80 against a held-out contrasting class.

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod flows;
pub mod geolife;
pub mod model_io;
pub mod pipeline;
pub mod synthetic;
pub mod trajectory;

pub use error::{Error, Result};
