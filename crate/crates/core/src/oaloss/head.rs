use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_in_place, Linear};

/// Two-layer MLP projecting instance features into the contrastive space:
/// `z = W2 relu(W1 f + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub hidden: Vec<f64>,
}

impl ContrastiveHead {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self { fc1: Linear::zeros(input, hidden), fc2: Linear::zeros(hidden, output) }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self { fc1: Linear::init(input, hidden, rng), fc2: Linear::init(hidden, output, rng) }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.inputs
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.outputs
    }

    pub fn check(&self) -> Result<()> {
        self.fc1.check()?;
        self.fc2.check()?;
        if self.fc1.outputs != self.fc2.inputs {
            return Err(Error::DimMismatch(format!(
                "head hidden sizes {} and {} differ",
                self.fc1.outputs, self.fc2.inputs
            )));
        }
        Ok(())
    }

    pub fn forward(&self, feature: &[f64]) -> (Vec<f64>, HeadCache) {
        let mut hidden = self.fc1.forward(feature);
        relu_in_place(&mut hidden);
        let z = self.fc2.forward(&hidden);
        (z, HeadCache { hidden })
    }

    /// Accumulates parameter gradients and returns `dL/dfeature`.
    pub fn backward(
        &self,
        feature: &[f64],
        cache: &HeadCache,
        grad_z: &[f64],
        grad: &mut ContrastiveHead,
    ) -> Vec<f64> {
        let mut gh = self.fc2.backward(&cache.hidden, grad_z, &mut grad.fc2);
        gh.iter_mut().zip(&cache.hidden).for_each(|(g, h)| {
            if *h <= 0.0 {
                *g = 0.0
            }
        });
        self.fc1.backward(feature, &gh, &mut grad.fc1)
    }
}

/// Projects one feature vector through the contrastive head.
pub fn project_contrastive(feature: &[f64], head: &ContrastiveHead) -> Result<Vec<f64>> {
    head.check()?;
    if feature.len() != head.input_dim() {
        return Err(Error::DimMismatch(format!(
            "feature has {} values, head expects {}",
            feature.len(),
            head.input_dim()
        )));
    }
    Ok(head.forward(feature).0)
}
