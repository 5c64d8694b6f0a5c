//! Spectral-residual saliency and per-object saliency scores.
//!
//! The map is computed at a square working resolution:
//!
//! 1. luma, bilinear resize to `work x work`
//! 2. 2-D DFT; log amplitude `L = ln(|F| + eps)`, phase `phi`
//! 3. spectral residual `R = L - box3x3(L)` (circular neighbourhood)
//! 4. inverse DFT of `exp(R + i phi)`, squared magnitude
//! 5. Gaussian blur with `sigma = work / 16`, min-max normalisation
//! 6. bilinear resize back to the source size
//!
//! A constant input has no residual structure and yields the all-zero map.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencyConfig {
    pub work_size: usize,
    pub epsilon: f64,
    /// Side of the averaging filter applied to the log amplitude spectrum.
    pub box_size: usize,
    /// Gaussian sigma is `work_size / sigma_divisor`.
    pub sigma_divisor: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self { work_size: 64, epsilon: 1e-8, box_size: 3, sigma_divisor: 16.0 }
    }
}

/// Per-pixel saliency in `[0, 1]`, row-major, same size as the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub(crate) fn resize_bilinear(
    src: &[f64],
    sw: usize,
    sh: usize,
    dw: usize,
    dh: usize,
) -> Vec<f64> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let axis = |d: usize, s_len: usize, d_len: usize| -> (usize, usize, f64) {
        let pos = ((d as f64 + 0.5) * s_len as f64 / d_len as f64 - 0.5)
            .clamp(0.0, (s_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(s_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, sh, dh);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * sw + x0] + fx * (src[y0 * sw + x1] - src[y0 * sw + x0]);
            let bot = src[y1 * sw + x0] + fx * (src[y1 * sw + x1] - src[y1 * sw + x0]);
            out.push(top + fy * (bot - top));
        }
    }
    out
}

/// Mean over a `k x k` neighbourhood with periodic wrap-around.
fn box_filter_wrap(src: &[f64], n: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let n_i = n as isize;
    let norm = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; n * n];
    for y in 0..n_i {
        for x in 0..n_i {
            let mut acc = 0.0;
            for dy in -r..=r {
                let yy = (y + dy).rem_euclid(n_i) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).rem_euclid(n_i) as usize;
                    acc += src[yy * n + xx];
                }
            }
            out[(y * n_i + x) as usize] = acc * norm;
        }
    }
    out
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with replicated borders.
pub(crate) fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * src[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// In-place 2-D FFT of an `n x n` row-major buffer: rows, then columns.
fn fft2(buf: &mut [Complex<f64>], n: usize, fft: &Arc<dyn Fft<f64>>) {
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
}

/// Effective working resolution for an image of the given size.
pub fn working_size(work_size: usize, width: usize, height: usize) -> usize {
    work_size.min(2 * width.min(height))
}

fn normalize_min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > f64::EPSILON * hi.abs().max(f64::MIN_POSITIVE)) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - lo) / range);
}

/// Computes the spectral-residual saliency map of `image`.
///
/// `cfg.work_size` must be at least 8; it is clamped to twice the smaller
/// image side.
pub fn spectral_residual_map(image: &ImageBuffer, cfg: &SaliencyConfig) -> Result<SaliencyMap> {
    if image.is_empty() {
        return Err(Error::DegenerateImage("zero-area image".into()));
    }
    if cfg.work_size < 8 {
        return Err(Error::InvalidArgument(format!(
            "saliency work_size must be >= 8, got {}",
            cfg.work_size
        )));
    }
    let (w, h) = (image.width(), image.height());
    let n = working_size(cfg.work_size, w, h);
    let gray = resize_bilinear(&image.to_gray(), w, h, n, n);

    let (lo, hi) = gray
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 1e-12 {
        return Ok(SaliencyMap { width: w, height: h, values: vec![0.0; w * h] });
    }

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let mut spec: Vec<Complex<f64>> = gray.iter().map(|&g| Complex::new(g, 0.0)).collect();
    fft2(&mut spec, n, &forward);

    let log_amp: Vec<f64> = spec.iter().map(|c| (c.norm() + cfg.epsilon).ln()).collect();
    let smooth = box_filter_wrap(&log_amp, n, cfg.box_size);
    for ((c, l), s) in spec.iter_mut().zip(&log_amp).zip(&smooth) {
        let phase = c.arg();
        *c = Complex::from_polar((l - s).exp(), phase);
    }
    fft2(&mut spec, n, &inverse);

    let scale = 1.0 / (n * n) as f64;
    let energy: Vec<f64> = spec.iter().map(|c| (c * scale).norm_sqr()).collect();
    let mut blurred = gaussian_blur(&energy, n, n, n as f64 / cfg.sigma_divisor);
    normalize_min_max(&mut blurred);

    let mut values = resize_bilinear(&blurred, n, n, w, h);
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(SaliencyMap { width: w, height: h, values })
}

/// Mean of the map under `bbox`.
pub fn object_saliency_score(map: &SaliencyMap, bbox: &BBox) -> Result<f64> {
    if !bbox.fits(map.width, map.height) {
        return Err(Error::BoxOutOfBounds(format!("{bbox:?}")));
    }
    let mut sum = 0.0;
    for y in bbox.y as usize..bbox.bottom() as usize {
        let row = &map.values[y * map.width..(y + 1) * map.width];
        sum += row[bbox.x as usize..bbox.right() as usize].iter().sum::<f64>();
    }
    Ok(sum / bbox.area() as f64)
}
