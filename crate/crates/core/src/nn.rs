//! Minimal dense layers with hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b`, `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// He-style normal initialisation, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        Self { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    pub fn check(&self) -> Result<()> {
        if self.weight.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::DimMismatch(format!(
                "linear {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *out = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.outputs];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut gx = vec![0.0; self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn add_scaled(&mut self, other: &Linear, scale: f64) {
        self.params_mut().zip(other.params()).for_each(|(a, b)| *a += scale * b);
    }
}

#[inline]
pub fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln(sum(exp(v)))` with max shifting.
pub fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn backward_matches_definition() {
        let layer = Linear {
            inputs: 2,
            outputs: 2,
            weight: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.5, -0.5],
        };
        let mut g = Linear::zeros(2, 2);
        let gx = layer.backward(&[1.0, -1.0], &[1.0, 2.0], &mut g);
        assert_eq!(gx, vec![1.0 + 6.0, 2.0 + 8.0]);
        assert_eq!(g.weight, vec![1.0, -1.0, 2.0, -2.0]);
        assert_eq!(g.bias, vec![1.0, 2.0]);
        assert_eq!(layer.forward(&[1.0, -1.0]), vec![-0.5, -1.5]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        let l = log_sum_exp(v.iter().copied());
        assert!((l - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
