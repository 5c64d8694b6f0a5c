//! Independent reference implementations, written for clarity over speed.
#![allow(dead_code)]

use std::f64::consts::PI;

use oadg::metrics::{iou, GroundTruth, ScoredBox};
use oadg::model::{BBox, ImageBuffer};
use oadg::oaloss::InstanceLabel;
use oadg::transforms::SpatialParams;

type C = (f64, f64);

fn cmul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Direct 2-D DFT of an `n x n` grid, every output a full double sum.
/// `sign = -1` is the forward transform; the inverse is unscaled.
pub fn naive_dft2(input: &[C], n: usize, sign: f64) -> Vec<C> {
    let mut out = vec![(0.0, 0.0); n * n];
    for v in 0..n {
        for u in 0..n {
            let mut acc = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let angle = sign * 2.0 * PI * ((u * x) as f64 / n as f64 + (v * y) as f64 / n as f64);
                    acc = {
                        let t = cmul(input[y * n + x], (angle.cos(), angle.sin()));
                        (acc.0 + t.0, acc.1 + t.1)
                    };
                }
            }
            out[v * n + u] = acc;
        }
    }
    out
}

/// Spectral-residual saliency of a square image whose side equals the
/// working size, so that no resampling is involved.
pub fn saliency_oracle(image: &ImageBuffer, box_size: usize, epsilon: f64, sigma_divisor: f64) -> Vec<f64> {
    let n = image.width();
    assert_eq!(n, image.height());
    let mut gray = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let [r, g, b] = image.pixel(x, y);
            gray[y * n + x] = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        }
    }
    let spec = naive_dft2(&gray.iter().map(|&g| (g, 0.0)).collect::<Vec<_>>(), n, -1.0);
    let log_amp: Vec<f64> = spec.iter().map(|c| ((c.0 * c.0 + c.1 * c.1).sqrt() + epsilon).ln()).collect();
    let half = (box_size / 2) as i64;
    let mut residual_spec = vec![(0.0, 0.0); n * n];
    for v in 0..n as i64 {
        for u in 0..n as i64 {
            let mut mean = 0.0;
            for dv in -half..=half {
                for du in -half..=half {
                    let (vv, uu) = ((v + dv).rem_euclid(n as i64), (u + du).rem_euclid(n as i64));
                    mean += log_amp[(vv * n as i64 + uu) as usize];
                }
            }
            mean /= (box_size * box_size) as f64;
            let k = (v * n as i64 + u) as usize;
            let phase = spec[k].1.atan2(spec[k].0);
            let mag = (log_amp[k] - mean).exp();
            residual_spec[k] = (mag * phase.cos(), mag * phase.sin());
        }
    }
    let back = naive_dft2(&residual_spec, n, 1.0);
    let nn = (n * n) as f64;
    let energy: Vec<f64> = back.iter().map(|c| (c.0 / nn).powi(2) + (c.1 / nn).powi(2)).collect();

    let sigma = n as f64 / sigma_divisor;
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let weights: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let clamp = |i: i64| i.clamp(0, n as i64 - 1) as usize;
    // Full 2-D convolution with the outer-product kernel and replicated borders.
    let mut blurred = vec![0.0; n * n];
    for y in 0..n as i64 {
        for x in 0..n as i64 {
            let mut acc = 0.0;
            for (j, wy) in weights.iter().enumerate() {
                for (i, wx) in weights.iter().enumerate() {
                    let sy = clamp(y + j as i64 - radius);
                    let sx = clamp(x + i as i64 - radius);
                    acc += wy * wx * energy[sy * n + sx];
                }
            }
            blurred[(y * n as i64 + x) as usize] = acc / (total * total);
        }
    }
    let lo = blurred.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = blurred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    blurred.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect()
}

/// Object-aware contrastive loss by direct summation of its definition:
/// for every anchor with positives, `-1/|P| sum_p ln(e^{s_ip} / sum_{a != i} e^{s_ia})`.
pub fn contrastive_oracle(features: &[Vec<f64>], labels: &[InstanceLabel], partner: &[Option<usize>], tau: f64) -> f64 {
    let n = features.len();
    let unit: Vec<Vec<f64>> = features
        .iter()
        .map(|z| {
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            z.iter().map(|v| v / norm).collect()
        })
        .collect();
    let sim = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = match labels[i] {
            InstanceLabel::Foreground(_) => (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect(),
            InstanceLabel::Background => partner[i].into_iter().collect(),
        };
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| sim(i, a).exp()).sum();
        let sum: f64 = positives.iter().map(|&p| (sim(i, p).exp() / denom).ln()).sum();
        total += -sum / positives.len() as f64;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

/// `(KL[p||m] + KL[q||m]) / 2` with `m = (p + q) / 2`, summed term by term.
pub fn js_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for k in 0..p.len() {
        let m = 0.5 * (p[k] + q[k]);
        if p[k] > 0.0 {
            kl_p += p[k] * (p[k] / m).ln();
        }
        if q[k] > 0.0 {
            kl_q += q[k] * (q[k] / m).ln();
        }
    }
    0.5 * (kl_p + kl_q)
}

/// Number of true positives among `dets` (already ranked) when each
/// detection, in rank order, takes the best-IoU unmatched ground truth.
fn true_positive_flags(dets: &[ScoredBox], gts: &[GroundTruth], thr: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    let mut flags = Vec::new();
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.image != d.image {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
        }
        flags.push(best.is_some());
    }
    flags
}

/// All-point AP by exhaustive enumeration of every cut-off rank: each prefix
/// is re-matched from scratch and the interpolated precision at rank `k` is the
/// maximum over all cut-offs at or beyond `k`.
pub fn ap_oracle(dets: &[ScoredBox], gts: &[GroundTruth], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut ranked = dets.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let g = gts.len() as f64;
    let points: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = true_positive_flags(&ranked[..k], gts, thr).iter().filter(|&&f| f).count();
            (tp as f64 / k as f64, tp as f64 / g)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let envelope = points[k..].iter().map(|p| p.0).fold(0.0, f64::max);
        ap += (points[k].1 - prev_recall) * envelope;
        prev_recall = points[k].1;
    }
    ap
}

fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Forward affine map about the crop centre, as a 2x2 matrix plus offset.
fn forward_affine(params: SpatialParams) -> ([[f64; 2]; 2], [f64; 2]) {
    match params {
        SpatialParams::Rotate { degrees } => {
            let t = degrees.to_radians();
            ([[t.cos(), -t.sin()], [t.sin(), t.cos()]], [0.0, 0.0])
        }
        SpatialParams::ShearX { factor } => ([[1.0, factor], [0.0, 1.0]], [0.0, 0.0]),
        SpatialParams::ShearY { factor } => ([[1.0, 0.0], [factor, 1.0]], [0.0, 0.0]),
        SpatialParams::TranslateX { pixels } => ([[1.0, 0.0], [0.0, 1.0]], [pixels, 0.0]),
        SpatialParams::TranslateY { pixels } => ([[1.0, 0.0], [0.0, 1.0]], [0.0, pixels]),
    }
}

/// Warps the crop under `bbox` by inverting the forward affine map
/// explicitly and sampling each output pixel as a weighted sum over its four
/// neighbours, with mirror padding.
pub fn naive_warp(image: &ImageBuffer, bbox: &BBox, params: SpatialParams) -> ImageBuffer {
    let (bw, bh) = (bbox.w as usize, bbox.h as usize);
    let (cx, cy) = ((bw as f64 - 1.0) / 2.0, (bh as f64 - 1.0) / 2.0);
    let (a, t) = forward_affine(params);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let mut out = image.clone();
    for y in 0..bh {
        for x in 0..bw {
            let (dx, dy) = (x as f64 - cx - t[0], y as f64 - cy - t[1]);
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let (x0, y0) = (sx.floor() as i64, sy.floor() as i64);
            let mut rgb = [0f64; 3];
            for (nx, ny) in [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)] {
                let w = (1.0 - (sx - nx as f64).abs()) * (1.0 - (sy - ny as f64).abs());
                let p = image.pixel(bbox.x as usize + mirror(nx, bw), bbox.y as usize + mirror(ny, bh));
                for c in 0..3 {
                    rgb[c] += w * p[c] as f64;
                }
            }
            out.set_pixel(
                bbox.x as usize + x,
                bbox.y as usize + y,
                rgb.map(|v| v.clamp(0.0, 1.0) as f32),
            );
        }
    }
    out
}

/// `Y = X W^T + b` with three explicit loops.
pub fn matmul_oracle(x: &[Vec<f64>], weight: &[f64], bias: &[f64], inputs: usize) -> Vec<Vec<f64>> {
    let outputs = bias.len();
    let mut y = vec![vec![0.0; outputs]; x.len()];
    for r in 0..x.len() {
        for o in 0..outputs {
            let mut acc = 0.0;
            for i in 0..inputs {
                acc += x[r][i] * weight[o * inputs + i];
            }
            y[r][o] = acc + bias[o];
        }
    }
    y
}

/// The same all-point AP in exact rational arithmetic.
pub fn ap_oracle_exact(dets: &[ScoredBox], gts: &[GroundTruth], thr: f64) -> num_rational::Ratio<i64> {
    use num_rational::Ratio;
    let zero = Ratio::from_integer(0);
    if gts.is_empty() {
        return zero;
    }
    let mut ranked = dets.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let g = gts.len() as i64;
    let points: Vec<(Ratio<i64>, Ratio<i64>)> = (1..=ranked.len())
        .map(|k| {
            let tp = true_positive_flags(&ranked[..k], gts, thr).iter().filter(|&&f| f).count() as i64;
            (Ratio::new(tp, k as i64), Ratio::new(tp, g))
        })
        .collect();
    let mut ap = zero;
    let mut prev = zero;
    for k in 0..points.len() {
        let envelope = points[k..].iter().map(|p| p.0).max().unwrap_or(zero);
        ap += (points[k].1 - prev) * envelope;
        prev = points[k].1;
    }
    ap
}
