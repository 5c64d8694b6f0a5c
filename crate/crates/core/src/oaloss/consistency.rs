use super::LossValueWithGrad;
use crate::error::{Error, Result};
use crate::nn::softmax;

/// A probability vector over `K + 1` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NotOnSimplex(format!("{values:?}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotOnSimplex(format!("sums to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `ln(p / m)` with `m = (p + q) / 2`, written so that it stays finite when
/// `m` would underflow.
fn log_ratio(p: f64, q: f64) -> f64 {
    (2.0 * p / (p + q)).ln()
}

/// `KL[p || M]` with `0 ln 0 = 0`.
fn kl_to_mid(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(&pk, &qk)| pk * log_ratio(pk, qk))
        .sum()
}

/// Logit-space gradient of the JS term for one side:
/// `dL/dp_k = ln(p_k / m_k) / 2`, pushed through softmax.
fn logit_grad(p: &[f64], q: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pk, &qk)| if pk > 0.0 { 0.5 * pk * log_ratio(pk, qk) } else { 0.0 })
        .collect();
    let total: f64 = u.iter().sum();
    u.iter().zip(p).map(|(uk, pk)| uk - pk * total).collect()
}

/// Jensen-Shannon divergence `(KL[p||M] + KL[q||M]) / 2` with `M = (p + q) / 2`.
///
/// `grad[0]` and `grad[1]` are gradients with respect to the logits that
/// produced `p` and `q` through softmax.
pub fn js_consistency(p: &ProbVec, q: &ProbVec) -> Result<LossValueWithGrad> {
    let (p, q) = (p.values(), q.values());
    if p.len() != q.len() {
        return Err(Error::DimMismatch(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    let value = 0.5 * (kl_to_mid(p, q) + kl_to_mid(q, p));
    Ok(LossValueWithGrad { value, grad: vec![logit_grad(p, q), logit_grad(q, p)] })
}

/// Convenience wrapper taking logits for both views.
pub fn js_from_logits(a: &[f64], b: &[f64]) -> Result<LossValueWithGrad> {
    js_consistency(&ProbVec::from_logits(a), &ProbVec::from_logits(b))
}
