//! OA-Loss: object-aware contrastive loss, Jensen-Shannon consistency and
//! their composition into the training objective, all with analytic
//! gradients.
//!
//! ```text
//! L_OA = L_cs + gamma * L_ct
//! L    = L_det + lambda * L_OA
//! ```

mod consistency;
mod contrastive;
mod gradcheck;
mod head;

pub use consistency::{js_consistency, js_from_logits, ProbVec};
pub use contrastive::{build_positive_sets, contrastive_loss, ContrastiveBatch, InstanceLabel};
pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, PiecewiseCheck};
pub use head::{project_contrastive, ContrastiveHead, HeadCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss value together with one gradient per input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueWithGrad {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Loss hyperparameters: temperature, contrastive weight and OA-Loss weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub tau: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { tau: 0.06, gamma: 0.001, lambda: 10.0 }
    }
}

impl Hyper {
    /// Temperature used for the adverse-weather setting.
    pub const WEATHER_TAU: f64 = 0.07;

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `L_cs + gamma * L_ct`.
pub fn oa_loss(consistency: f64, contrastive: f64, gamma: f64) -> f64 {
    consistency + gamma * contrastive
}

/// `L_det + lambda * L_OA`.
pub fn joint_loss(detection: f64, oa: f64, lambda: f64) -> f64 {
    detection + lambda * oa
}
