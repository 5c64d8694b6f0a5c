//! Cell classifier `64 -> 64 -> (K+1)` with a contrastive head on the hidden layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_in_place, Linear};
use crate::oaloss::ContrastiveHead;

/// Layer sizes, stored alongside the weights in `params.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    /// `K + 1`: object classes plus background.
    pub outputs: usize,
    pub head_hidden: usize,
    pub head_out: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { input: 64, hidden: 64, outputs: 4, head_hidden: 32, head_out: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub fc1: Linear,
    pub fc2: Linear,
    pub head: ContrastiveHead,
}

impl DetectorParams {
    pub fn zeros(d: Dims) -> Self {
        Self {
            fc1: Linear::zeros(d.input, d.hidden),
            fc2: Linear::zeros(d.hidden, d.outputs),
            head: ContrastiveHead::zeros(d.hidden, d.head_hidden, d.head_out),
        }
    }

    pub fn init<R: Rng + ?Sized>(d: Dims, rng: &mut R) -> Self {
        let fc1 = Linear::init(d.input, d.hidden, rng);
        let fc2 = Linear::init(d.hidden, d.outputs, rng);
        let head = ContrastiveHead::init(d.hidden, d.head_hidden, d.head_out, rng);
        Self { fc1, fc2, head }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.fc1.inputs,
            hidden: self.fc1.outputs,
            outputs: self.fc2.outputs,
            head_hidden: self.head.fc1.outputs,
            head_out: self.head.output_dim(),
        }
    }

    pub fn check(&self) -> Result<()> {
        self.fc1.check()?;
        self.fc2.check()?;
        self.head.check()?;
        if self.fc2.inputs != self.fc1.outputs || self.head.input_dim() != self.fc1.outputs {
            return Err(Error::DimMismatch("classifier and head disagree on the hidden width".into()));
        }
        if self.params().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    /// All parameters in a fixed order: fc1, fc2, head.fc1, head.fc2.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.fc1
            .params()
            .chain(self.fc2.params())
            .chain(self.head.fc1.params())
            .chain(self.head.fc2.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.fc1
            .params_mut()
            .chain(self.fc2.params_mut())
            .chain(self.head.fc1.params_mut())
            .chain(self.head.fc2.params_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params().count()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimMismatch(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        self.params_mut().zip(flat).for_each(|(p, v)| *p = *v);
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &DetectorParams, scale: f64) {
        self.params_mut().zip(other.params()).for_each(|(a, b)| *a += scale * b);
    }
}

/// Per-row activations of a forward pass, each flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub rows: usize,
    /// Post-ReLU hidden layer, `rows x hidden`. Also the penultimate features.
    pub hidden: Vec<f64>,
    /// `rows x (K+1)`.
    pub logits: Vec<f64>,
    /// `rows x head_out`.
    pub contrastive: Vec<f64>,
}

impl Forward {
    pub fn hidden_row(&self, r: usize) -> &[f64] {
        let h = self.hidden.len() / self.rows.max(1);
        &self.hidden[r * h..(r + 1) * h]
    }

    pub fn logit_row(&self, r: usize) -> &[f64] {
        let k = self.logits.len() / self.rows.max(1);
        &self.logits[r * k..(r + 1) * k]
    }
}

/// Hidden layer only; `features` holds whole rows of `input` values.
pub fn hidden_layer(params: &DetectorParams, features: &[f64]) -> Result<Vec<f64>> {
    let d = params.dims();
    if d.input == 0 || features.len() % d.input != 0 {
        return Err(Error::DimMismatch(format!(
            "{} feature values do not split into rows of {}",
            features.len(),
            d.input
        )));
    }
    let rows = features.len() / d.input;
    let mut hidden = vec![0.0; rows * d.hidden];
    for (x, h) in features.chunks_exact(d.input).zip(hidden.chunks_exact_mut(d.hidden)) {
        params.fc1.forward_into(x, h);
        relu_in_place(h);
    }
    Ok(hidden)
}

/// Classifier logits and contrastive features for every row of `features`
/// (one row per grid cell; a batch of images is just more rows).
pub fn forward(params: &DetectorParams, features: &[f64]) -> Result<Forward> {
    params.check()?;
    let d = params.dims();
    let hidden = hidden_layer(params, features)?;
    let rows = hidden.len() / d.hidden;
    let mut logits = vec![0.0; rows * d.outputs];
    let mut contrastive = Vec::with_capacity(rows * d.head_out);
    for (r, h) in hidden.chunks_exact(d.hidden).enumerate() {
        params.fc2.forward_into(h, &mut logits[r * d.outputs..(r + 1) * d.outputs]);
        contrastive.extend(params.head.forward(h).0);
    }
    Ok(Forward { rows, hidden, logits, contrastive })
}
