//! Hand-crafted grid-cell descriptors.
//!
//! Per cell: mean RGB (3), RGB variance (3), 8-bin luma histogram (8) and mean
//! Sobel magnitude of the luma (1). The 15 raw values are standardised with
//! training-split statistics and lifted to the network input width by a fixed
//! seeded random matrix.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ImageBuffer;
use crate::rng::{self, tag};

pub const RAW_DIM: usize = 15;
const HIST_BINS: usize = 8;

/// Raw descriptors for every cell, row-major over the grid.
pub fn raw_cell_features(image: &ImageBuffer, grid: usize) -> Result<Vec<[f64; RAW_DIM]>> {
    let (w, h) = (image.width(), image.height());
    if w != h || grid == 0 || w % grid != 0 {
        return Err(Error::DimMismatch(format!("{w}x{h} image does not split into a {grid}x{grid} grid")));
    }
    let cell = w / grid;
    let gray = image.to_gray();
    let sobel = sobel_magnitude(&gray, w, h);
    let n = (cell * cell) as f64;
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let mut f = [0.0; RAW_DIM];
            let mut sum = [0.0; 3];
            let mut sq = [0.0; 3];
            let mut edge = 0.0;
            for y in gy * cell..(gy + 1) * cell {
                for x in gx * cell..(gx + 1) * cell {
                    let p = image.pixel(x, y);
                    for c in 0..3 {
                        let v = p[c] as f64;
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                    let g = gray[y * w + x];
                    let bin = ((g * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                    f[6 + bin] += 1.0 / n;
                    edge += sobel[y * w + x];
                }
            }
            for c in 0..3 {
                let mean = sum[c] / n;
                f[c] = mean;
                f[3 + c] = (sq[c] / n - mean * mean).max(0.0);
            }
            f[14] = edge / n;
            out.push(f);
        }
    }
    Ok(out)
}

fn sobel_magnitude(gray: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        gray[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Frozen standardisation plus random lift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub grid: usize,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `dim x RAW_DIM`, row-major.
    pub lift: Vec<f64>,
}

impl FeatureExtractor {
    /// Fits standardisation statistics on `images` (the training split).
    pub fn fit<'a>(
        images: impl Iterator<Item = &'a ImageBuffer>,
        grid: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut sum = [0.0; RAW_DIM];
        let mut sq = [0.0; RAW_DIM];
        let mut count = 0usize;
        for img in images {
            for f in raw_cell_features(img, grid)? {
                for d in 0..RAW_DIM {
                    sum[d] += f[d];
                    sq[d] += f[d] * f[d];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("no training images to fit features on".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        let normal = Normal::new(0.0, 1.0 / (RAW_DIM as f64).sqrt()).expect("finite");
        let mut r = rng::stream(seed, &[tag::LIFT]);
        let lift = (0..dim * RAW_DIM).map(|_| normal.sample(&mut r)).collect();
        Ok(Self { grid, dim, mean, std, lift })
    }

    pub fn check(&self) -> Result<()> {
        if self.mean.len() != RAW_DIM || self.std.len() != RAW_DIM || self.lift.len() != self.dim * RAW_DIM {
            return Err(Error::DimMismatch("feature extractor arrays have wrong lengths".into()));
        }
        Ok(())
    }

    /// Lifted features for every cell, flattened `cells x dim`.
    pub fn extract(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
        let raw = raw_cell_features(image, self.grid)?;
        let mut out = Vec::with_capacity(raw.len() * self.dim);
        let mut z = [0.0; RAW_DIM];
        for f in raw {
            for d in 0..RAW_DIM {
                z[d] = (f[d] - self.mean[d]) / self.std[d];
            }
            for row in self.lift.chunks_exact(RAW_DIM) {
                out.push(row.iter().zip(&z).map(|(a, b)| a * b).sum());
            }
        }
        Ok(out)
    }
}
