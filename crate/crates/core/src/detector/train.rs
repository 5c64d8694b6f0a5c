//! Joint training: `L = L_det + lambda * (L_cs + gamma * L_ct)` with momentum SGD.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detect::evaluate;
use super::features::FeatureExtractor;
use super::labels::{assign_labels, covered_cells, coverage, target_index};
use super::net::{hidden_layer, DetectorParams, Dims};
use super::Detector;
use crate::error::{Error, Result};
use crate::model::{Annotation, Dataset};
use crate::nn::{log_sum_exp, softmax};
use crate::oaloss::{contrastive_loss, js_from_logits, ContrastiveBatch, Hyper, InstanceLabel};
use crate::oamix::{oamix_with_saliency, MixPlan, OamixConfig, RegionLevel};
use crate::rng::{self, tag};
use crate::saliency::spectral_residual_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub grid: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub head_out: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Rescale the batch gradient to at most this L2 norm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Background cells kept in `Z` per foreground cell.
    pub bg_ratio: f64,
    /// Cell-overlap threshold for foreground labels.
    pub overlap: f64,
    /// Also apply the detection loss to the OA-Mix view.
    pub det_on_augmented: bool,
    pub score_threshold: f64,
    /// Evaluate clean mAP on the held-out split after every epoch.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            feature_dim: 64,
            hidden: 64,
            head_hidden: 32,
            head_out: 16,
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            clip_norm: Some(5.0),
            bg_ratio: 3.0,
            overlap: 0.5,
            det_on_augmented: true,
            score_threshold: 0.05,
            eval_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grid, self.feature_dim, self.hidden, self.head_hidden, self.head_out, self.batch_size];
        if positive.contains(&0) {
            return Err(Error::Config("train sizes must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train.momentum must lie in [0, 1)".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("train.clip_norm must be > 0".into()));
            }
        }
        if !(self.bg_ratio.is_finite() && self.bg_ratio >= 0.0) {
            return Err(Error::Config("train.bg_ratio must be >= 0".into()));
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(Error::Config("train.overlap must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config("train.score_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn dims(&self, num_classes: usize) -> Dims {
        Dims {
            input: self.feature_dim,
            hidden: self.hidden,
            outputs: num_classes + 1,
            head_hidden: self.head_hidden,
            head_out: self.head_out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Detection loss on original images only.
    Baseline,
    /// OA-Mix views and the joint objective.
    Oadg,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Oadg => "oadg",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "oadg" => Ok(Mode::Oadg),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected baseline or oadg)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub det: f64,
    pub cs: f64,
    pub ct: f64,
    pub oa: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn compose(det: f64, cs: f64, ct: f64, hyper: &Hyper) -> Self {
        let oa = crate::oaloss::oa_loss(cs, ct, hyper.gamma);
        Self { det, cs, ct, oa, total: crate::oaloss::joint_loss(det, oa, hyper.lambda) }
    }

    fn scaled_add(&mut self, other: &LossBreakdown, s: f64) {
        self.det += s * other.det;
        self.cs += s * other.cs;
        self.ct += s * other.ct;
        self.oa += s * other.oa;
        self.total += s * other.total;
    }
}

/// One view of one sample reduced to grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellView {
    pub id: String,
    pub annotations: Vec<Annotation>,
    /// `cells x input`, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<InstanceLabel>,
}

/// An OA-Mix region whose feature is the mean hidden feature of `cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRegion {
    pub cells: Vec<usize>,
    pub label: InstanceLabel,
}

/// Members of `Z` for one original/augmented pair. Every entry appears once per view.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContrastivePlan {
    pub cells: Vec<usize>,
    pub regions: Vec<PooledRegion>,
}

/// Original views with, in OA-DG mode, their OA-Mix counterparts.
#[derive(Debug, Clone, Copy)]
pub struct PairedBatch<'a> {
    pub originals: &'a [CellView],
    pub augmented: &'a [CellView],
    pub plans: &'a [ContrastivePlan],
}

impl PairedBatch<'_> {
    fn check(&self, mode: Mode) -> Result<()> {
        if self.originals.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if mode == Mode::Baseline {
            return Ok(());
        }
        if self.augmented.len() != self.originals.len() || self.plans.len() != self.originals.len() {
            return Err(Error::PairingMismatch(format!(
                "{} originals, {} augmented views, {} plans",
                self.originals.len(),
                self.augmented.len(),
                self.plans.len()
            )));
        }
        for (o, a) in self.originals.iter().zip(self.augmented) {
            if o.id != a.id || o.annotations != a.annotations || o.labels != a.labels {
                return Err(Error::PairingMismatch(format!("views {:?} and {:?} are not of one sample", o.id, a.id)));
            }
            if o.features.len() != a.features.len() {
                return Err(Error::PairingMismatch(format!("views of {:?} have different cell counts", o.id)));
            }
        }
        Ok(())
    }
}

/// Picks the members of `Z`: every foreground cell, `bg_ratio` background
/// cells per foreground cell (at least one foreground is assumed when there
/// is none), Foreground regions and RandomBox regions that no box covers to
/// `overlap`.
pub fn plan_contrastive<R: Rng + ?Sized>(
    labels: &[InstanceLabel],
    plan: &MixPlan,
    annotations: &[Annotation],
    grid: usize,
    cell: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> ContrastivePlan {
    let mut cells: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_foreground()).collect();
    let bg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_foreground()).collect();
    let wanted = ((cells.len().max(1) as f64) * cfg.bg_ratio).ceil() as usize;
    let mut picked: Vec<usize> = bg.choose_multiple(rng, wanted.min(bg.len())).copied().collect();
    picked.sort_unstable();
    cells.extend(picked);

    let regions = plan
        .regions
        .iter()
        .filter_map(|r| {
            let label = match r.level {
                RegionLevel::Image => return None,
                RegionLevel::Foreground => InstanceLabel::Foreground(r.class_id?),
                RegionLevel::RandomBox => {
                    let max_cover = annotations.iter().map(|a| coverage(&r.rect, &a.bbox)).fold(0.0, f64::max);
                    if max_cover >= cfg.overlap {
                        return None;
                    }
                    InstanceLabel::Background
                }
            };
            Some(PooledRegion { cells: covered_cells(&r.rect, grid, cell, cfg.overlap), label })
        })
        .collect();
    ContrastivePlan { cells, regions }
}

struct ViewState<'a> {
    x: &'a [f64],
    hidden: Vec<f64>,
    logits: Vec<f64>,
    g_logits: Vec<f64>,
    g_hidden: Vec<f64>,
}

impl<'a> ViewState<'a> {
    fn new(params: &DetectorParams, x: &'a [f64]) -> Result<Self> {
        let d = params.dims();
        let hidden = hidden_layer(params, x)?;
        let rows = hidden.len() / d.hidden;
        let mut logits = vec![0.0; rows * d.outputs];
        for (h, l) in hidden.chunks_exact(d.hidden).zip(logits.chunks_exact_mut(d.outputs)) {
            params.fc2.forward_into(h, l);
        }
        Ok(Self {
            x,
            g_logits: vec![0.0; logits.len()],
            g_hidden: vec![0.0; hidden.len()],
            hidden,
            logits,
        })
    }

    fn backward(&mut self, params: &DetectorParams, grad: &mut DetectorParams) {
        let d = params.dims();
        for r in 0..self.hidden.len() / d.hidden {
            let h = &self.hidden[r * d.hidden..(r + 1) * d.hidden];
            let gl = &self.g_logits[r * d.outputs..(r + 1) * d.outputs];
            let mut gh = params.fc2.backward(h, gl, &mut grad.fc2);
            for (k, g) in gh.iter_mut().enumerate() {
                *g = if h[k] > 0.0 { *g + self.g_hidden[r * d.hidden + k] } else { 0.0 };
            }
            params.fc1.backward(&self.x[r * d.input..(r + 1) * d.input], &gh, &mut grad.fc1);
        }
    }
}

/// Mean cross-entropy over the cells of `views`, accumulating its logit gradient.
fn detection_loss(views: &mut [&mut ViewState], labels: &[InstanceLabel], outputs: usize) -> f64 {
    let k = outputs - 1;
    let n = (views.len() * labels.len()) as f64;
    let mut total = 0.0;
    for v in views.iter_mut() {
        for (r, &label) in labels.iter().enumerate() {
            let logits = &v.logits[r * outputs..(r + 1) * outputs];
            let t = target_index(label, k);
            total += log_sum_exp(logits.iter().copied()) - logits[t];
            let p = softmax(logits);
            for (c, pc) in p.iter().enumerate() {
                v.g_logits[r * outputs + c] += (pc - if c == t { 1.0 } else { 0.0 }) / n;
            }
        }
    }
    total / n
}

fn mean_rows(rows: &[f64], width: usize, cells: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for &c in cells {
        out.iter_mut().zip(&rows[c * width..(c + 1) * width]).for_each(|(o, v)| *o += v);
    }
    let inv = 1.0 / cells.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

/// Loss and parameter gradient for one sample (pair).
fn sample_loss(
    params: &DetectorParams,
    orig: &CellView,
    aug: Option<(&CellView, &ContrastivePlan)>,
    hyper: &Hyper,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, DetectorParams)> {
    let d = params.dims();
    let mut grad = DetectorParams::zeros(d);
    let mut vo = ViewState::new(params, &orig.features)?;
    if vo.logits.len() != orig.labels.len() * d.outputs {
        return Err(Error::DimMismatch("labels do not match cell count".into()));
    }
    let Some((aug, plan)) = aug else {
        let det = detection_loss(&mut [&mut vo], &orig.labels, d.outputs);
        vo.backward(params, &mut grad);
        return Ok((LossBreakdown::compose(det, 0.0, 0.0, hyper), grad));
    };

    let mut va = ViewState::new(params, &aug.features)?;
    let det = if cfg.det_on_augmented {
        detection_loss(&mut [&mut vo, &mut va], &orig.labels, d.outputs)
    } else {
        detection_loss(&mut [&mut vo], &orig.labels, d.outputs)
    };
    let backprop_oa = hyper.lambda != 0.0;

    // Consistency over paired cells.
    let cells = orig.labels.len();
    let mut cs = 0.0;
    let w_cs = hyper.lambda / cells as f64;
    for r in 0..cells {
        let span = r * d.outputs..(r + 1) * d.outputs;
        let js = js_from_logits(&vo.logits[span.clone()], &va.logits[span.clone()])?;
        cs += js.value;
        if backprop_oa {
            vo.g_logits[span.clone()].iter_mut().zip(&js.grad[0]).for_each(|(g, v)| *g += w_cs * v);
            va.g_logits[span].iter_mut().zip(&js.grad[1]).for_each(|(g, v)| *g += w_cs * v);
        }
    }
    cs /= cells as f64;

    // Contrastive term over Z; entries 2k and 2k+1 are the two views of one instance.
    let mut inputs: Vec<(usize, Vec<usize>, Vec<f64>)> = Vec::new();
    let mut labels = Vec::new();
    for &c in &plan.cells {
        for (view, state) in [&vo, &va].into_iter().enumerate() {
            inputs.push((view, vec![c], state.hidden[c * d.hidden..(c + 1) * d.hidden].to_vec()));
            labels.push(orig.labels[c]);
        }
    }
    for region in plan.regions.iter().filter(|r| !r.cells.is_empty()) {
        for (view, state) in [&vo, &va].into_iter().enumerate() {
            inputs.push((view, region.cells.clone(), mean_rows(&state.hidden, d.hidden, &region.cells)));
            labels.push(region.label);
        }
    }
    let mut ct = 0.0;
    if inputs.len() >= 2 {
        let projected: Vec<_> = inputs.iter().map(|(_, _, h)| params.head.forward(h)).collect();
        let pairs: Vec<(usize, usize)> = (0..inputs.len() / 2).map(|k| (2 * k, 2 * k + 1)).collect();
        let features = projected.iter().map(|(z, _)| z.clone()).collect();
        let batch = ContrastiveBatch::new(features, labels, &pairs, hyper.tau)?;
        match contrastive_loss(&batch) {
            Ok(loss) => {
                ct = loss.value;
                let w_ct = hyper.lambda * hyper.gamma;
                if backprop_oa && w_ct != 0.0 {
                    for (((view, members, h), (_, cache)), gz) in inputs.iter().zip(&projected).zip(&loss.grad) {
                        let gz: Vec<f64> = gz.iter().map(|g| w_ct * g).collect();
                        let gh = params.head.backward(h, cache, &gz, &mut grad.head);
                        let state = if *view == 0 { &mut vo } else { &mut va };
                        let share = 1.0 / members.len() as f64;
                        for &c in members {
                            state.g_hidden[c * d.hidden..(c + 1) * d.hidden]
                                .iter_mut()
                                .zip(&gh)
                                .for_each(|(a, b)| *a += share * b);
                        }
                    }
                }
            }
            // A vanishing projection has no direction to contrast; the term is skipped.
            Err(Error::ZeroNormFeature(_)) => {}
            Err(e) => return Err(e),
        }
    }

    vo.backward(params, &mut grad);
    if backprop_oa || cfg.det_on_augmented {
        va.backward(params, &mut grad);
    }
    Ok((LossBreakdown::compose(det, cs, ct, hyper), grad))
}

/// Batch loss (mean over samples) and its gradient. Samples are evaluated in
/// parallel and reduced in index order, so the result does not depend on the
/// thread count.
pub fn batch_loss(
    params: &DetectorParams,
    batch: &PairedBatch,
    hyper: &Hyper,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<(LossBreakdown, DetectorParams)> {
    batch.check(mode)?;
    let parts = (0..batch.originals.len())
        .into_par_iter()
        .map(|i| {
            let aug = match mode {
                Mode::Baseline => None,
                Mode::Oadg => Some((&batch.augmented[i], &batch.plans[i])),
            };
            sample_loss(params, &batch.originals[i], aug, hyper, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / parts.len() as f64;
    let mut loss = LossBreakdown::default();
    let mut grad = DetectorParams::zeros(params.dims());
    for (l, g) in &parts {
        loss.scaled_add(l, scale);
        grad.add_scaled(g, scale);
    }
    Ok((loss, grad))
}

/// Momentum SGD: `v = mu v + g; theta -= lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: DetectorParams,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, dims: Dims) -> Self {
        Self { lr, momentum, velocity: DetectorParams::zeros(dims) }
    }

    pub fn step(&mut self, params: &mut DetectorParams, grad: &DetectorParams) {
        let (lr, mu) = (self.lr, self.momentum);
        for ((p, v), g) in params.params_mut().zip(self.velocity.params_mut()).zip(grad.params()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

/// One optimisation step on `batch`.
pub fn train_step(
    params: &mut DetectorParams,
    opt: &mut Sgd,
    batch: &PairedBatch,
    hyper: &Hyper,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<LossBreakdown> {
    let (loss, mut grad) = batch_loss(params, batch, hyper, cfg, mode)?;
    if !loss.total.is_finite() {
        return Err(Error::InvalidArgument(format!("training loss is not finite: {loss:?}")));
    }
    if let Some(max) = cfg.clip_norm {
        let norm = grad.params().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grad.params_mut().for_each(|g| *g *= s);
        }
    }
    opt.step(params, &grad);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub clean_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    /// Loss of every optimisation step.
    pub steps: Vec<LossBreakdown>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_det,L_cs,L_ct,total,clean_mAP\n");
        for e in &self.epochs {
            let map = e.clean_map.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{},{}\n", e.epoch, e.loss.det, e.loss.cs, e.loss.ct, e.loss.total, map));
        }
        out
    }
}

fn check_images(data: &Dataset, grid: usize) -> Result<usize> {
    let first = data.samples.first().ok_or_else(|| Error::InvalidDataset("training split is empty".into()))?;
    let size = first.image.width();
    for s in &data.samples {
        if s.image.width() != size || s.image.height() != size {
            return Err(Error::InvalidDataset(format!("sample {} is not {size}x{size}", s.id)));
        }
    }
    if size % grid != 0 {
        return Err(Error::InvalidDataset(format!("image size {size} is not divisible by grid {grid}")));
    }
    Ok(size)
}

/// Trains a detector from scratch.
///
/// Both modes share the feature extractor, the initial weights and the
/// minibatch order for a given seed; OA-Mix and the background subsampling
/// draw from their own streams keyed by `(epoch, sample)`.
pub fn train(
    data: &Dataset,
    heldout: Option<&Dataset>,
    mode: Mode,
    seed: u64,
    cfg: &TrainConfig,
    hyper: &Hyper,
    oamix_cfg: &OamixConfig,
) -> Result<(Detector, TrainLog)> {
    cfg.validate()?;
    hyper.validate()?;
    oamix_cfg.validate()?;
    let size = check_images(data, cfg.grid)?;
    let cell = size / cfg.grid;
    let features = FeatureExtractor::fit(data.samples.iter().map(|s| &s.image), cfg.grid, cfg.feature_dim, seed)?;
    let originals: Vec<CellView> = data
        .samples
        .par_iter()
        .map(|s| {
            Ok(CellView {
                id: s.id.clone(),
                annotations: s.annotations.clone(),
                features: features.extract(&s.image)?,
                labels: assign_labels(cfg.grid, cell, &s.annotations, cfg.overlap),
            })
        })
        .collect::<Result<_>>()?;
    let saliency = match mode {
        Mode::Baseline => Vec::new(),
        Mode::Oadg => data
            .samples
            .par_iter()
            .map(|s| spectral_residual_map(&s.image, &oamix_cfg.saliency))
            .collect::<Result<Vec<_>>>()?,
    };

    let dims = cfg.dims(data.num_classes());
    let mut params = DetectorParams::init(dims, &mut rng::stream(seed, &[tag::INIT]));
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, dims);
    let mut detector = Detector { dims, classes: data.classes.clone(), image_size: size, grid: cfg.grid, features, params: params.clone() };
    let mut log = TrainLog { mode, seed, epochs: Vec::new(), steps: Vec::new() };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..originals.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch as u64]));
        let mut epoch_loss = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch_orig: Vec<CellView> = chunk.iter().map(|&i| originals[i].clone()).collect();
            let (augmented, plans) = match mode {
                Mode::Baseline => (Vec::new(), Vec::new()),
                Mode::Oadg => chunk
                    .par_iter()
                    .map(|&i| {
                        let key = [epoch as u64, i as u64];
                        let sample = &data.samples[i];
                        let mut r = rng::stream(seed, &[tag::OAMIX, key[0], key[1]]);
                        let out = oamix_with_saliency(sample, &saliency[i], &mut r, oamix_cfg)?;
                        let view = CellView {
                            id: sample.id.clone(),
                            features: detector.features.extract(&out.image)?,
                            labels: assign_labels(cfg.grid, cell, &out.annotations, cfg.overlap),
                            annotations: out.annotations,
                        };
                        let mut r = rng::stream(seed, &[tag::CONTRASTIVE, key[0], key[1]]);
                        let plan =
                            plan_contrastive(&view.labels, &out.plan, &view.annotations, cfg.grid, cell, cfg, &mut r);
                        Ok((view, plan))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip(),
            };
            let batch = PairedBatch { originals: &batch_orig, augmented: &augmented, plans: &plans };
            let loss = train_step(&mut params, &mut opt, &batch, hyper, cfg, mode)?;
            epoch_loss.scaled_add(&loss, chunk.len() as f64 / originals.len() as f64);
            log.steps.push(loss);
        }
        let clean_map = match heldout {
            Some(test) if cfg.eval_every_epoch || epoch + 1 == cfg.epochs => {
                detector.params = params.clone();
                Some(evaluate(&detector, test, cfg.score_threshold)?.map)
            }
            _ => None,
        };
        log.epochs.push(EpochLog { epoch: epoch + 1, loss: epoch_loss, clean_map });
    }
    detector.params = params;
    Ok((detector, log))
}
