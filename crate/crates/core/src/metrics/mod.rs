//! Detection and robustness metrics.

mod ap;
mod correlation;
mod mpc;

pub use ap::{average_precision, iou, mean_ap, ClassAp, GroundTruth, ScoredBox};
pub use correlation::{feature_correlation, CorrelationMatrix};
pub use mpc::{mpc, EvalReport, MpcPreset};
