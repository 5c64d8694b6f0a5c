use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::LossValueWithGrad;
use crate::error::{Error, Result};
use crate::nn::log_sum_exp;

/// Label of a contrastive feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceLabel {
    Foreground(usize),
    Background,
}

impl InstanceLabel {
    pub fn is_foreground(&self) -> bool {
        matches!(self, InstanceLabel::Foreground(_))
    }
}

/// Features, labels, original/augmented pairing and temperature.
///
/// `partner[i] = Some(j)` means `z_j` is the other view of the same instance
/// as `z_i`. The relation is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<InstanceLabel>,
    pub partner: Vec<Option<usize>>,
    pub tau: f64,
}

impl ContrastiveBatch {
    /// Builds a batch from `(original, augmented)` index pairs.
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<InstanceLabel>,
        pairs: &[(usize, usize)],
        tau: f64,
    ) -> Result<Self> {
        let n = features.len();
        if labels.len() != n {
            return Err(Error::DimMismatch(format!("{n} features but {} labels", labels.len())));
        }
        if let Some(d) = features.first().map(Vec::len) {
            if features.iter().any(|f| f.len() != d) {
                return Err(Error::DimMismatch("features have different dimensions".into()));
            }
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
        }
        let mut partner = vec![None; n];
        for &(a, b) in pairs {
            if a >= n || b >= n || a == b {
                return Err(Error::PairingMismatch(format!("invalid pair ({a}, {b})")));
            }
            if partner[a].is_some() || partner[b].is_some() {
                return Err(Error::PairingMismatch(format!("index reused in pair ({a}, {b})")));
            }
            if labels[a] != labels[b] {
                return Err(Error::PairingMismatch(format!("pair ({a}, {b}) has different labels")));
            }
            partner[a] = Some(b);
            partner[b] = Some(a);
        }
        Ok(Self { features, labels, partner, tau })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Positive set of every anchor.
///
/// Foreground anchors: every other feature with the same class. Background
/// anchors: only their own other view, if paired; never another background.
pub fn build_positive_sets(batch: &ContrastiveBatch) -> Vec<Vec<usize>> {
    (0..batch.len())
        .map(|i| match batch.labels[i] {
            InstanceLabel::Foreground(_) => (0..batch.len())
                .filter(|&j| j != i && batch.labels[j] == batch.labels[i])
                .collect(),
            InstanceLabel::Background => batch.partner[i].into_iter().collect(),
        })
        .collect()
}

/// Object-aware contrastive loss over L2-normalised features.
///
/// Anchors with an empty positive set are excluded from the average. The
/// gradient is taken with respect to the raw (unnormalised) features.
pub fn contrastive_loss(batch: &ContrastiveBatch) -> Result<LossValueWithGrad> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::EmptyBatch);
    }
    let dim = batch.features[0].len();
    let mut unit = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for (i, z) in batch.features.iter().enumerate() {
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::ZeroNormFeature(i));
        }
        norms.push(norm);
        unit.push(z.iter().map(|v| v / norm).collect::<Vec<f64>>());
    }

    let positives = build_positive_sets(batch);
    let anchors: Vec<usize> = (0..n).filter(|&i| !positives[i].is_empty()).collect();
    let mut grad_unit = vec![vec![0.0; dim]; n];
    if anchors.is_empty() {
        return Ok(LossValueWithGrad { value: 0.0, grad: vec![vec![0.0; dim]; n] });
    }
    let inv_tau = 1.0 / batch.tau;
    let scale = 1.0 / anchors.len() as f64;

    let mut total = 0.0;
    let mut sims = vec![0.0; n];
    let mut pos_mask = HashSet::new();
    for &i in &anchors {
        for k in 0..n {
            sims[k] = if k == i {
                f64::NEG_INFINITY
            } else {
                unit[i].iter().zip(&unit[k]).map(|(a, b)| a * b).sum::<f64>() * inv_tau
            };
        }
        let lse = log_sum_exp(sims.iter().copied().enumerate().filter(|&(k, _)| k != i).map(|(_, s)| s));
        let pos = &positives[i];
        let inv_pos = 1.0 / pos.len() as f64;
        let loss_i = -inv_pos * pos.iter().map(|&j| sims[j] - lse).sum::<f64>();
        total += loss_i;

        pos_mask.clear();
        pos_mask.extend(pos.iter().copied());
        // dL_i / d s_ik = softmax_k - [k in pos] / |pos|
        for k in 0..n {
            if k == i {
                continue;
            }
            let q = (sims[k] - lse).exp();
            let target = if pos_mask.contains(&k) { inv_pos } else { 0.0 };
            let g = scale * (q - target) * inv_tau;
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                grad_unit[i][d] += g * unit[k][d];
                grad_unit[k][d] += g * unit[i][d];
            }
        }
    }

    // Through z~ = z / |z|: dL/dz = (g - (g . z~) z~) / |z|
    let grad = grad_unit
        .into_iter()
        .zip(unit.iter().zip(&norms))
        .map(|(g, (u, &norm))| {
            let dot: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
            g.iter().zip(u).map(|(gv, uv)| (gv - dot * uv) / norm).collect()
        })
        .collect();

    Ok(LossValueWithGrad { value: total * scale, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    use InstanceLabel::{Background as Bg, Foreground as Fg};

    fn batch(labels: Vec<InstanceLabel>, pairs: &[(usize, usize)]) -> ContrastiveBatch {
        let n = labels.len();
        let features = (0..n)
            .map(|i| (0..4).map(|d| ((i * 7 + d * 3) % 5) as f64 - 1.5).collect())
            .collect();
        ContrastiveBatch::new(features, labels, pairs, 0.06).unwrap()
    }

    #[test]
    fn positive_sets_unpaired() {
        let b = batch(vec![Fg(0), Fg(0), Fg(1), Bg], &[]);
        assert_eq!(build_positive_sets(&b), vec![vec![1], vec![0], vec![], vec![]]);
    }

    #[test]
    fn background_positive_is_partner_only() {
        let b = batch(vec![Bg, Fg(0), Bg, Bg], &[(0, 3)]);
        let p = build_positive_sets(&b);
        assert_eq!(p[0], vec![3]);
        assert_eq!(p[3], vec![0]);
        assert!(p[2].is_empty());
    }

    #[test]
    fn distinct_classes_give_zero_loss() {
        let b = batch(vec![Fg(0), Fg(1), Fg(2)], &[]);
        let out = contrastive_loss(&b).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn two_same_class_is_exactly_zero() {
        let b = ContrastiveBatch::new(
            vec![vec![0.3, -1.2, 0.5], vec![2.0, 0.1, -0.7]],
            vec![Fg(1), Fg(1)],
            &[],
            0.06,
        )
        .unwrap();
        assert_eq!(contrastive_loss(&b).unwrap().value, 0.0);
    }

    #[test]
    fn scaling_a_feature_leaves_loss_unchanged() {
        let b = batch(vec![Fg(0), Fg(0), Fg(1), Bg, Bg], &[(3, 4)]);
        let base = contrastive_loss(&b).unwrap().value;
        let mut scaled = b.clone();
        scaled.features[2].iter_mut().for_each(|v| *v *= 5.0);
        let v = contrastive_loss(&scaled).unwrap().value;
        assert!((v - base).abs() < 1e-10);
    }

    #[test]
    fn errors() {
        let b = ContrastiveBatch::new(vec![vec![1.0]], vec![Bg], &[], 0.1).unwrap();
        assert!(matches!(contrastive_loss(&b), Err(Error::EmptyBatch)));
        let b = ContrastiveBatch::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![Bg, Bg], &[], 0.1)
            .unwrap();
        assert!(matches!(contrastive_loss(&b), Err(Error::ZeroNormFeature(1))));
        assert!(ContrastiveBatch::new(vec![vec![1.0]; 2], vec![Bg, Fg(0)], &[(0, 1)], 0.1).is_err());
        assert!(ContrastiveBatch::new(vec![vec![1.0]; 3], vec![Bg; 3], &[(0, 1), (1, 2)], 0.1).is_err());
        assert!(ContrastiveBatch::new(vec![vec![1.0]; 2], vec![Bg; 2], &[(0, 0)], 0.1).is_err());
    }
}
