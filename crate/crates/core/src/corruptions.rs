//! Test-time corruptions with five severity levels.
//!
//! These kernels are evaluation-only. None of them is reachable from the
//! augmentation pool used during training.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ImageBuffer, SampleRecord};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    FogHaze,
    Brightness,
    Contrast,
    Pixelate,
    Jpeg,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 10] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::FogHaze,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
        CorruptionKind::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::ShotNoise => "shot-noise",
            CorruptionKind::ImpulseNoise => "impulse-noise",
            CorruptionKind::DefocusBlur => "defocus-blur",
            CorruptionKind::MotionBlur => "motion-blur",
            CorruptionKind::FogHaze => "fog-haze",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::Jpeg => "jpeg",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            CorruptionKind::GaussianNoise | CorruptionKind::ShotNoise | CorruptionKind::ImpulseNoise
        )
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u64
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::InvalidArgument(format!("severity {severity} not in 1..=5")));
        }
        Ok(Self { kind, severity })
    }
}

/// Severity tables, indexed by `severity - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    pub gaussian_sigma: [f64; 5],
    /// Photon-count scale: `v' = Poisson(v * c) / c`.
    pub shot_scale: [f64; 5],
    /// Fraction of channel values replaced by salt or pepper.
    pub impulse_amount: [f64; 5],
    pub defocus_radius: [f64; 5],
    pub motion_length: [usize; 5],
    pub fog_alpha: [f64; 5],
    pub brightness_delta: [f64; 5],
    pub contrast_factor: [f64; 5],
    pub pixelate_block: [usize; 5],
    pub jpeg_quality: [u8; 5],
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: [0.04, 0.06, 0.08, 0.09, 0.10],
            shot_scale: [60.0, 25.0, 12.0, 5.0, 3.0],
            impulse_amount: [0.03, 0.06, 0.09, 0.17, 0.27],
            defocus_radius: [1.0, 1.5, 2.0, 2.5, 3.0],
            motion_length: [3, 5, 7, 9, 11],
            fog_alpha: [0.2, 0.3, 0.4, 0.5, 0.6],
            brightness_delta: [0.1, 0.2, 0.3, 0.4, 0.5],
            contrast_factor: [0.4, 0.3, 0.2, 0.1, 0.05],
            pixelate_block: [2, 3, 4, 5, 6],
            jpeg_quality: [25, 18, 15, 10, 7],
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.gaussian_sigma.iter().chain(&self.shot_scale).chain(&self.defocus_radius);
        if positive.into_iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("corruption sigma/scale/radius must be > 0".into()));
        }
        if self.motion_length.iter().chain(&self.pixelate_block).any(|&v| v == 0)
            || self.jpeg_quality.iter().any(|&q| q == 0 || q > 100)
        {
            return Err(Error::Config("corruption lengths, blocks and jpeg quality must be valid".into()));
        }
        Ok(())
    }
}

fn map_values(image: &ImageBuffer, f: impl Fn(f32) -> f64) -> ImageBuffer {
    let mut out = image.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v).clamp(0.0, 1.0) as f32);
    out
}

/// Correlates each channel with `kernel` (list of `(dx, dy, weight)`), replicating borders.
fn convolve(image: &ImageBuffer, kernel: &[(i64, i64, f64)]) -> ImageBuffer {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for &(dx, dy, k) in kernel {
                let p = image.pixel((x + dx).clamp(0, w - 1) as usize, (y + dy).clamp(0, h - 1) as usize);
                for c in 0..3 {
                    acc[c] += k * p[c] as f64;
                }
            }
            out.set_pixel(x as usize, y as usize, acc.map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    out
}

fn disk_kernel(radius: f64) -> Vec<(i64, i64, f64)> {
    let r = radius.ceil() as i64;
    let mut k = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                k.push((dx, dy, 1.0));
            }
        }
    }
    let n = k.len() as f64;
    k.iter_mut().for_each(|e| e.2 /= n);
    k
}

fn motion_kernel(length: usize) -> Vec<(i64, i64, f64)> {
    let half = (length as i64 - 1) / 2;
    let start = -half;
    (0..length as i64).map(|i| (start + i, 0, 1.0 / length as f64)).collect()
}

fn pixelate(image: &ImageBuffer, block: usize) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (ex, ey) = ((bx + block).min(w), (by + block).min(h));
            let mut acc = [0f64; 3];
            for y in by..ey {
                for x in bx..ex {
                    let p = image.pixel(x, y);
                    (0..3).for_each(|c| acc[c] += p[c] as f64);
                }
            }
            let n = ((ex - bx) * (ey - by)) as f64;
            let mean = acc.map(|v| (v / n) as f32);
            for y in by..ey {
                for x in bx..ex {
                    out.set_pixel(x, y, mean);
                }
            }
        }
    }
    out
}

fn jpeg_round_trip(image: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    let bytes: Vec<u8> = image.data().iter().map(|&v| crate::dataset::to_byte(v)).collect();
    let mut buf = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality);
    enc.encode(&bytes, image.width() as u32, image.height() as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?
        .to_rgb8();
    let data = decoded.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    ImageBuffer::from_data(image.width(), image.height(), data)
}

/// Applies one corruption. Noise kinds consume `rng`; the others ignore it.
pub fn corrupt<R: Rng + ?Sized>(
    image: &ImageBuffer,
    spec: CorruptionSpec,
    rng: &mut R,
    cfg: &CorruptionConfig,
) -> Result<ImageBuffer> {
    let s = CorruptionSpec::new(spec.kind, spec.severity)?.severity as usize - 1;
    Ok(match spec.kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, cfg.gaussian_sigma[s]).expect("sigma validated");
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
            }
            out
        }
        CorruptionKind::ShotNoise => {
            let scale = cfg.shot_scale[s];
            let mut out = image.clone();
            for v in out.data_mut() {
                let lambda = *v as f64 * scale;
                let count = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(rng)
                } else {
                    0.0
                };
                *v = (count / scale).clamp(0.0, 1.0) as f32;
            }
            out
        }
        CorruptionKind::ImpulseNoise => {
            let amount = cfg.impulse_amount[s];
            let mut out = image.clone();
            for v in out.data_mut() {
                if rng.random::<f64>() < amount {
                    *v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                }
            }
            out
        }
        CorruptionKind::DefocusBlur => convolve(image, &disk_kernel(cfg.defocus_radius[s])),
        CorruptionKind::MotionBlur => convolve(image, &motion_kernel(cfg.motion_length[s])),
        CorruptionKind::FogHaze => {
            let a = cfg.fog_alpha[s];
            map_values(image, |v| v as f64 * (1.0 - a) + 0.9 * a)
        }
        CorruptionKind::Brightness => {
            let d = cfg.brightness_delta[s];
            map_values(image, |v| v as f64 + d)
        }
        CorruptionKind::Contrast => {
            let c = cfg.contrast_factor[s];
            let n = image.data().len().max(1) as f64;
            let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            map_values(image, |v| (v as f64 - mean) * c + mean)
        }
        CorruptionKind::Pixelate => pixelate(image, cfg.pixelate_block[s]),
        CorruptionKind::Jpeg => jpeg_round_trip(image, cfg.jpeg_quality[s])?,
    })
}

/// Corrupts every sample of `dataset` with `spec`. Sample `i` uses its own
/// stream derived from `(seed, kind, severity, i)`, so the result does not
/// depend on thread scheduling.
pub fn corrupt_dataset(
    dataset: &Dataset,
    spec: CorruptionSpec,
    seed: u64,
    cfg: &CorruptionConfig,
) -> Result<Dataset> {
    let samples = dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = rng::stream(
                seed,
                &[tag::CORRUPT, spec.kind.index(), spec.severity as u64, i as u64],
            );
            Ok(SampleRecord {
                id: s.id.clone(),
                image: corrupt(&s.image, spec, &mut r, cfg)?,
                annotations: s.annotations.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { classes: dataset.classes.clone(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 3 + y / 2) % 2 == 0 { 0.8 } else { 0.15 };
                img.set_pixel(x, y, [v, v * 0.5, 1.0 - v]);
            }
        }
        img
    }

    #[test]
    fn gaussian_noise_std_matches_table() {
        let img = ImageBuffer::filled(256, 256, [0.5; 3]);
        let cfg = CorruptionConfig::default();
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3).unwrap();
        let out = corrupt(&img, spec, &mut rng::stream(1, &[]), &cfg).unwrap();
        let diffs: Vec<f64> = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (*a - *b) as f64)
            .filter(|d| d.abs() < 0.5 - 1e-6)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.08).abs() <= 0.05 * 0.08, "std = {std}");
    }

    #[test]
    fn pixelate_is_blockwise_constant() {
        let img = checker(20, 14);
        let cfg = CorruptionConfig::default();
        for severity in 1..=5u8 {
            let b = cfg.pixelate_block[severity as usize - 1];
            let spec = CorruptionSpec::new(CorruptionKind::Pixelate, severity).unwrap();
            let out = corrupt(&img, spec, &mut rng::stream(0, &[]), &cfg).unwrap();
            for y in 0..14 {
                for x in 0..20 {
                    let anchor = out.pixel(x / b * b, y / b * b);
                    assert_eq!(out.pixel(x, y), anchor);
                }
            }
        }
    }

    #[test]
    fn brightness_is_clamped_shift() {
        let img = checker(6, 6);
        let cfg = CorruptionConfig::default();
        for severity in 1..=5u8 {
            let spec = CorruptionSpec::new(CorruptionKind::Brightness, severity).unwrap();
            let out = corrupt(&img, spec, &mut rng::stream(0, &[]), &cfg).unwrap();
            let d = cfg.brightness_delta[severity as usize - 1];
            for (o, i) in out.data().iter().zip(img.data()) {
                assert_eq!(*o, (*i as f64 + d).clamp(0.0, 1.0) as f32);
            }
        }
    }

    #[test]
    fn every_kind_preserves_dims_and_range() {
        let img = checker(24, 18);
        let cfg = CorruptionConfig::default();
        for kind in CorruptionKind::ALL {
            for severity in 1..=5 {
                let spec = CorruptionSpec::new(kind, severity).unwrap();
                let out = corrupt(&img, spec, &mut rng::stream(2, &[]), &cfg).unwrap();
                assert_eq!((out.width(), out.height()), (24, 18));
                assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
            }
        }
    }

    #[test]
    fn deterministic_kinds_ignore_rng() {
        let img = checker(16, 16);
        let cfg = CorruptionConfig::default();
        for kind in CorruptionKind::ALL.into_iter().filter(|k| !k.is_stochastic()) {
            let spec = CorruptionSpec::new(kind, 4).unwrap();
            let a = corrupt(&img, spec, &mut rng::stream(1, &[]), &cfg).unwrap();
            let b = corrupt(&img, spec, &mut rng::stream(2, &[]), &cfg).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn fog_and_contrast_formulas() {
        let img = ImageBuffer::filled(2, 2, [0.5, 0.0, 1.0]);
        let cfg = CorruptionConfig::default();
        let fog = corrupt(&img, CorruptionSpec::new(CorruptionKind::FogHaze, 1).unwrap(), &mut rng::stream(0, &[]), &cfg)
            .unwrap();
        assert!((fog.pixel(0, 0)[1] - 0.18).abs() < 1e-6);
        let con = corrupt(&img, CorruptionSpec::new(CorruptionKind::Contrast, 1).unwrap(), &mut rng::stream(0, &[]), &cfg)
            .unwrap();
        // mean 0.5, factor 0.4
        assert!((con.pixel(0, 0)[2] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn names_round_trip_and_unknown_kind() {
        for kind in CorruptionKind::ALL {
            assert_eq!(kind.name().parse::<CorruptionKind>().unwrap(), kind);
        }
        assert!(matches!("snow".parse::<CorruptionKind>(), Err(Error::UnknownKind(_))));
        assert!(CorruptionSpec::new(CorruptionKind::Jpeg, 6).is_err());
    }

    #[test]
    fn severity_increases_damage() {
        let img = checker(32, 32);
        let cfg = CorruptionConfig::default();
        for kind in CorruptionKind::ALL {
            let err = |s| {
                let out = corrupt(&img, CorruptionSpec::new(kind, s).unwrap(), &mut rng::stream(3, &[]), &cfg).unwrap();
                out.data().iter().zip(img.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
            };
            assert!(err(5) > err(1), "{kind}");
        }
    }
}
