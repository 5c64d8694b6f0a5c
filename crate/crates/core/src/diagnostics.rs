//! Randomised finite-difference checks of the analytic loss gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detector::features::FeatureExtractor;
use crate::detector::{
    assign_labels, batch_loss, generate_splits, plan_contrastive, CellView, ContrastivePlan, DetectorParams, Mode,
    PairedBatch, SynthConfig, TrainConfig,
};
use crate::error::Result;
use crate::oaloss::{
    contrastive_loss, grad_check, grad_check_piecewise, js_from_logits, ContrastiveBatch, Hyper, InstanceLabel,
    PiecewiseCheck,
};
use crate::oamix::{oamix, OamixConfig};
use crate::rng::{self, tag};

/// Largest tolerated relative error for the individual loss kernels.
pub const KERNEL_TOLERANCE: f64 = 1e-4;
/// Largest tolerated relative error for the full joint objective.
pub const JOINT_TOLERANCE: f64 = 1e-3;

/// Step of the five-point stencil used on the smooth loss kernels.
const KERNEL_EPS: f64 = 1e-4;
/// Central-difference step for the piecewise-smooth joint objective.
const JOINT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub contrastive_max: f64,
    pub consistency_max: f64,
    pub joint_trials: usize,
    pub joint_max: f64,
    /// Parameters compared across the joint trials.
    pub joint_params: usize,
    /// Of those, skipped because a ReLU kink lies within the step.
    pub joint_kinks: usize,
    pub pass: bool,
}

/// A random contrastive batch of 2 to 8 features with random labels, a
/// random set of view pairs and a temperature in `[0.05, 1]`.
pub fn random_contrastive_batch<R: Rng + ?Sized>(rng: &mut R) -> ContrastiveBatch {
    let n = rng.random_range(2..=8);
    let dim = rng.random_range(3..=8);
    let features = (0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect();
    let mut labels: Vec<InstanceLabel> = (0..n)
        .map(|_| match rng.random_range(0..4) {
            3 => InstanceLabel::Background,
            c => InstanceLabel::Foreground(c),
        })
        .collect();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i + 1 < n {
        if rng.random_bool(0.5) {
            labels[i + 1] = labels[i];
            pairs.push((i, i + 1));
        }
        i += 2;
    }
    let tau = rng.random_range(0.05..=1.0);
    ContrastiveBatch::new(features, labels, &pairs, tau).expect("valid by construction")
}

fn contrastive_error(batch: &ContrastiveBatch) -> Result<f64> {
    let dim = batch.features[0].len();
    let flat: Vec<f64> = batch.features.iter().flatten().copied().collect();
    contrastive_loss(batch)?;
    let f = |x: &[f64]| {
        let mut b = batch.clone();
        b.features = x.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        let l = contrastive_loss(&b).expect("checked above");
        (l.value, l.grad.concat())
    };
    Ok(grad_check(f, &flat, KERNEL_EPS))
}

fn consistency_error<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let k = rng.random_range(2..=6);
    let x: Vec<f64> = (0..2 * k).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
    let f = |x: &[f64]| {
        let l = js_from_logits(&x[..k], &x[k..]).expect("same length");
        (l.value, l.grad.concat())
    };
    grad_check(f, &x, KERNEL_EPS)
}

/// Two synthetic scenes, their OA-Mix views and a small detector with random
/// biases, sized so that a full finite-difference sweep stays cheap.
pub fn micro_batch(seed: u64) -> (Vec<CellView>, Vec<CellView>, Vec<ContrastivePlan>, DetectorParams) {
    let synth = SynthConfig { train: 2, test: 0, ..Default::default() };
    let (data, _) = generate_splits(&synth, seed);
    let cfg = micro_config();
    let cell = synth.cell_size();
    let feats = FeatureExtractor::fit(data.samples.iter().map(|s| &s.image), synth.grid, cfg.feature_dim, seed)
        .expect("non-empty split");
    let (mut originals, mut augmented, mut plans) = (Vec::new(), Vec::new(), Vec::new());
    for (i, s) in data.samples.iter().enumerate() {
        let labels = assign_labels(synth.grid, cell, &s.annotations, cfg.overlap);
        let out = oamix(s, &mut rng::stream(seed, &[tag::OAMIX, i as u64]), &OamixConfig::default())
            .expect("valid sample");
        let mut r = rng::stream(seed, &[tag::CONTRASTIVE, i as u64]);
        plans.push(plan_contrastive(&labels, &out.plan, &s.annotations, synth.grid, cell, &cfg, &mut r));
        let view = |features| CellView {
            id: s.id.clone(),
            annotations: s.annotations.clone(),
            features,
            labels: labels.clone(),
        };
        originals.push(view(feats.extract(&s.image).expect("grid fits")));
        augmented.push(view(feats.extract(&out.image).expect("grid fits")));
    }
    let mut r = rng::stream(seed, &[tag::INIT]);
    let mut params = DetectorParams::init(cfg.dims(synth.num_classes()), &mut r);
    // Freshly initialised biases are exactly zero, so an all-zero input row
    // sits on every ReLU kink at once. Jitter them to check at a generic point.
    for layer in [&mut params.fc1, &mut params.fc2, &mut params.head.fc1, &mut params.head.fc2] {
        layer.bias.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
    }
    (originals, augmented, plans, params)
}

/// Training config matching the dimensions of [`micro_batch`].
pub fn micro_config() -> TrainConfig {
    TrainConfig { feature_dim: 16, hidden: 12, head_hidden: 8, head_out: 6, det_on_augmented: true, ..Default::default() }
}

/// Finite-difference check of the joint objective on [`micro_batch`].
/// Returns the check and the number of parameters.
pub fn joint_error(seed: u64, hyper: &Hyper) -> Result<(PiecewiseCheck, usize)> {
    let (originals, augmented, plans, params) = micro_batch(seed);
    let batch = PairedBatch { originals: &originals, augmented: &augmented, plans: &plans };
    let cfg = micro_config();
    batch_loss(&params, &batch, hyper, &cfg, Mode::Oadg)?;
    let f = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat).expect("same length");
        let (loss, grad) = batch_loss(&p, &batch, hyper, &cfg, Mode::Oadg).expect("checked above");
        (loss.total, grad.to_flat())
    };
    let flat = params.to_flat();
    Ok((grad_check_piecewise(f, &flat, JOINT_EPS, JOINT_TOLERANCE), flat.len()))
}

/// Runs `trials` random contrastive and consistency checks plus up to three
/// joint-objective checks.
pub fn gradient_checks(seed: u64, trials: usize) -> Result<GradCheckReport> {
    let mut r = rng::stream(seed, &[tag::CONTRASTIVE]);
    let mut contrastive_max = 0.0f64;
    let mut consistency_max = 0.0f64;
    for _ in 0..trials {
        contrastive_max = contrastive_max.max(contrastive_error(&random_contrastive_batch(&mut r))?);
        consistency_max = consistency_max.max(consistency_error(&mut r));
    }
    // A larger gamma keeps the contrastive path visible next to the other terms.
    let hyper = Hyper { tau: 0.5, gamma: 0.5, lambda: 2.0 };
    let joint_trials = trials.min(3);
    let (mut joint_max, mut joint_params, mut joint_kinks) = (0.0f64, 0, 0);
    for t in 0..joint_trials {
        let (check, n) = joint_error(seed.wrapping_add(t as u64), &hyper)?;
        joint_max = joint_max.max(check.max_error);
        joint_params += n;
        joint_kinks += check.kinks;
    }
    // At most 1% of components may be skipped, or the joint check says little.
    let pass = contrastive_max <= KERNEL_TOLERANCE
        && consistency_max <= KERNEL_TOLERANCE
        && joint_max <= JOINT_TOLERANCE
        && joint_kinks * 100 <= joint_params;
    Ok(GradCheckReport { trials, contrastive_max, consistency_max, joint_trials, joint_max, joint_params, joint_kinks, pass })
}
