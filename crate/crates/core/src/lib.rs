//! Object-aware domain generalization for object detection.
//!
//! * [`oamix`]: object-aware mixing augmentation driven by
//!   [`saliency`] scores and the operations in [`transforms`].
//! * [`oaloss`]: object-aware contrastive loss and Jensen-Shannon
//!   consistency, with analytic gradients.
//! * [`corruptions`] and [`metrics`]: the robustness benchmark (mAP, mPC).
//! * [`detector`]: a toy grid-cell detector that trains with the joint
//!   objective, plus a synthetic shapes dataset.
//! * [`pipeline`]: the full train/corrupt/evaluate comparison.
//!
//! All randomness flows from explicit seeds through [`rng::stream`].

pub mod config;
pub mod corruptions;
pub mod dataset;
pub mod detector;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oaloss;
pub mod oamix;
pub mod pipeline;
pub mod rng;
pub mod saliency;
pub mod transforms;

pub use error::{Error, Result};
pub use model::{Annotation, BBox, Dataset, ImageBuffer, SampleRecord};
