//! Color and spatial transformations restricted to a rectangle.
//!
//! Every operation touches only pixels inside its target rectangle; pixels
//! outside it are left bit-identical. Spatial warps resample the crop under
//! the box about its own centre, so the box itself never moves.
//!
//! Magnitude levels `1..=10` resolve to concrete parameters as follows
//! (signed ops pick their direction at sampling time):
//!
//! | kind        | parameter at level `l`                 |
//! |-------------|----------------------------------------|
//! | gamma       | `2^(±l/10)`, i.e. log-spaced in 0.5..2 |
//! | posterize   | `round(256 - 252 (l-1)/9)` levels      |
//! | solarize    | threshold `1.0 - 0.6 (l-1)/9`          |
//! | hue-rotate  | `±3l` degrees about the gray axis      |
//! | equalize    | none                                   |
//! | rotate      | `±2l` degrees                          |
//! | shear-x/y   | `±0.02 l`                              |
//! | translate   | `±0.02 l` of the box side              |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, ImageBuffer};

/// Level of an OA-Mix region; decides which operations are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionLevel {
    Image,
    RandomBox,
    Foreground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    /// No-op. Never part of the default pool.
    Identity,
    Equalize,
    Posterize,
    Solarize,
    Gamma,
    HueRotate,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl TransformKind {
    pub const COLOR: [TransformKind; 5] = [
        TransformKind::Equalize,
        TransformKind::Posterize,
        TransformKind::Solarize,
        TransformKind::Gamma,
        TransformKind::HueRotate,
    ];
    pub const SPATIAL: [TransformKind; 5] = [
        TransformKind::Rotate,
        TransformKind::ShearX,
        TransformKind::ShearY,
        TransformKind::TranslateX,
        TransformKind::TranslateY,
    ];

    pub fn is_spatial(self) -> bool {
        Self::SPATIAL.contains(&self)
    }

    pub fn is_signed(self) -> bool {
        matches!(self, TransformKind::Gamma | TransformKind::HueRotate) || self.is_spatial()
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Equalize => "equalize",
            TransformKind::Posterize => "posterize",
            TransformKind::Solarize => "solarize",
            TransformKind::Gamma => "gamma",
            TransformKind::HueRotate => "hue-rotate",
            TransformKind::Rotate => "rotate",
            TransformKind::ShearX => "shear-x",
            TransformKind::ShearY => "shear-y",
            TransformKind::TranslateX => "translate-x",
            TransformKind::TranslateY => "translate-y",
        }
    }

    /// Whether the kind may be applied to a region of this level.
    pub fn legal_at(self, level: RegionLevel) -> bool {
        !self.is_spatial() || level == RegionLevel::Foreground
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOp {
    pub kind: TransformKind,
    pub magnitude: u8,
    /// `+1` or `-1`; ignored by unsigned kinds.
    pub sign: i8,
}

/// Concrete color operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorParams {
    Identity,
    Equalize,
    Posterize { levels: u32 },
    Solarize { threshold: f32 },
    Gamma { gamma: f64 },
    HueRotate { degrees: f64 },
}

/// Concrete spatial warp, in crop pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialParams {
    Rotate { degrees: f64 },
    ShearX { factor: f64 },
    ShearY { factor: f64 },
    TranslateX { pixels: f64 },
    TranslateY { pixels: f64 },
}

impl TransformOp {
    pub fn new(kind: TransformKind, magnitude: u8, sign: i8) -> Self {
        Self { kind, magnitude, sign }
    }

    fn level(&self) -> f64 {
        self.magnitude.clamp(1, 10) as f64
    }

    fn signed(&self, v: f64) -> f64 {
        if self.sign < 0 {
            -v
        } else {
            v
        }
    }

    /// Resolved color parameters, or `None` for spatial kinds.
    pub fn color_params(&self) -> Option<ColorParams> {
        let l = self.level();
        Some(match self.kind {
            TransformKind::Identity => ColorParams::Identity,
            TransformKind::Equalize => ColorParams::Equalize,
            TransformKind::Posterize => ColorParams::Posterize {
                levels: (256.0 - 252.0 * (l - 1.0) / 9.0).round() as u32,
            },
            TransformKind::Solarize => ColorParams::Solarize {
                threshold: (1.0 - 0.6 * (l - 1.0) / 9.0) as f32,
            },
            TransformKind::Gamma => ColorParams::Gamma { gamma: 2f64.powf(self.signed(l / 10.0)) },
            TransformKind::HueRotate => ColorParams::HueRotate { degrees: self.signed(3.0 * l) },
            _ => return None,
        })
    }

    /// Resolved spatial parameters for a box of the given size, or `None` for color kinds.
    pub fn spatial_params(&self, box_w: u32, box_h: u32) -> Option<SpatialParams> {
        let l = self.level();
        Some(match self.kind {
            TransformKind::Rotate => SpatialParams::Rotate { degrees: self.signed(2.0 * l) },
            TransformKind::ShearX => SpatialParams::ShearX { factor: self.signed(0.02 * l) },
            TransformKind::ShearY => SpatialParams::ShearY { factor: self.signed(0.02 * l) },
            TransformKind::TranslateX => SpatialParams::TranslateX {
                pixels: self.signed(0.02 * l * box_w as f64),
            },
            TransformKind::TranslateY => SpatialParams::TranslateY {
                pixels: self.signed(0.02 * l * box_h as f64),
            },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformChain {
    pub ops: Vec<TransformOp>,
}

impl TransformChain {
    /// A single no-op.
    pub fn identity() -> Self {
        Self { ops: vec![TransformOp::new(TransformKind::Identity, 1, 1)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub pool: Vec<TransformKind>,
    pub max_chain: usize,
    pub magnitude_range: [u8; 2],
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            pool: TransformKind::COLOR.iter().chain(&TransformKind::SPATIAL).copied().collect(),
            max_chain: 3,
            magnitude_range: [1, 10],
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.magnitude_range;
        if lo < 1 || hi > 10 || lo > hi {
            return Err(Error::Config(format!("transform.magnitude_range {lo}..{hi} not within 1..10")));
        }
        if self.max_chain == 0 {
            return Err(Error::Config("transform.max_chain must be >= 1".into()));
        }
        if !self.pool.iter().any(|k| !k.is_spatial()) {
            return Err(Error::Config("transform.pool needs at least one color operation".into()));
        }
        Ok(())
    }
}

/// Draws a chain of `1..=max_chain` operations legal for `level`.
pub fn sample_chain<R: Rng + ?Sized>(
    rng: &mut R,
    level: RegionLevel,
    cfg: &TransformConfig,
) -> TransformChain {
    let legal: Vec<TransformKind> = cfg.pool.iter().copied().filter(|k| k.legal_at(level)).collect();
    if legal.is_empty() {
        return TransformChain { ops: Vec::new() };
    }
    let len = rng.random_range(1..=cfg.max_chain);
    let [lo, hi] = cfg.magnitude_range;
    let ops = (0..len)
        .map(|_| {
            let kind = legal[rng.random_range(0..legal.len())];
            let magnitude = rng.random_range(lo..=hi);
            let sign = if rng.random::<bool>() { 1 } else { -1 };
            TransformOp { kind, magnitude, sign }
        })
        .collect();
    TransformChain { ops }
}

fn check_rect(image: &ImageBuffer, rect: &BBox) -> Result<()> {
    if rect.fits(image.width(), image.height()) {
        Ok(())
    } else {
        Err(Error::BoxOutOfBounds(format!("{rect:?}")))
    }
}

/// Applies a color op inside `rect` and returns the new image.
pub fn apply_color_op(image: &ImageBuffer, rect: &BBox, op: &TransformOp) -> Result<ImageBuffer> {
    let params = op
        .color_params()
        .ok_or_else(|| Error::WrongOpCategory(op.kind.name().into()))?;
    check_rect(image, rect)?;
    let mut out = image.clone();
    apply_color_in_place(&mut out, rect, params);
    Ok(out)
}

fn for_each_in_rect(image: &mut ImageBuffer, rect: &BBox, mut f: impl FnMut(&mut [f32])) {
    let w = image.width();
    let data = image.data_mut();
    for y in rect.y as usize..rect.bottom() as usize {
        let start = (y * w + rect.x as usize) * 3;
        let end = (y * w + rect.right() as usize) * 3;
        data[start..end].chunks_exact_mut(3).for_each(&mut f);
    }
}

/// Color transform of the pixels inside `rect`. `rect` must fit the image.
pub fn apply_color_in_place(image: &mut ImageBuffer, rect: &BBox, params: ColorParams) {
    match params {
        ColorParams::Identity => {}
        ColorParams::Gamma { gamma } => for_each_in_rect(image, rect, |p| {
            p.iter_mut().for_each(|v| *v = (*v as f64).powf(gamma).clamp(0.0, 1.0) as f32)
        }),
        ColorParams::Posterize { levels } => {
            let steps = (levels.max(2) - 1) as f32;
            for_each_in_rect(image, rect, |p| {
                p.iter_mut().for_each(|v| *v = ((*v * steps).round() / steps).clamp(0.0, 1.0))
            })
        }
        ColorParams::Solarize { threshold } => for_each_in_rect(image, rect, |p| {
            p.iter_mut().for_each(|v| {
                if *v > threshold {
                    *v = 1.0 - *v
                }
            })
        }),
        ColorParams::HueRotate { degrees } => {
            let m = hue_matrix(degrees);
            for_each_in_rect(image, rect, |p| {
                let [r, g, b] = [p[0] as f64, p[1] as f64, p[2] as f64];
                for (c, row) in m.iter().enumerate() {
                    p[c] = (row[0] * r + row[1] * g + row[2] * b).clamp(0.0, 1.0) as f32;
                }
            })
        }
        ColorParams::Equalize => equalize(image, rect),
    }
}

/// Rotation about the gray axis `(1, 1, 1) / sqrt(3)`.
fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = snapped_sin_cos(degrees);
    let k = 1.0 / 3f64.sqrt();
    let t = (1.0 - c) / 3.0;
    let diag = c + t;
    let a = t - s * k;
    let b = t + s * k;
    [[diag, a, b], [b, diag, a], [a, b, diag]]
}

fn snapped_sin_cos(degrees: f64) -> (f64, f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    (snap(s), snap(c))
}

#[inline]
fn bin_of(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Per-channel histogram equalisation over 256 bins of the rect.
fn equalize(image: &mut ImageBuffer, rect: &BBox) {
    let mut hist = [[0u32; 256]; 3];
    for_each_in_rect(image, rect, |p| {
        for c in 0..3 {
            hist[c][bin_of(p[c])] += 1;
        }
    });
    let total = rect.area() as f64;
    let luts: Vec<Option<[f32; 256]>> = hist
        .iter()
        .map(|h| {
            let first = h.iter().position(|&n| n > 0)?;
            let cdf_min = h[first] as f64;
            if total - cdf_min <= 0.0 {
                return None;
            }
            let mut lut = [0f32; 256];
            let mut acc = 0.0;
            for (i, &n) in h.iter().enumerate() {
                acc += n as f64;
                lut[i] = ((acc - cdf_min) / (total - cdf_min)).clamp(0.0, 1.0) as f32;
            }
            Some(lut)
        })
        .collect();
    for_each_in_rect(image, rect, |p| {
        for c in 0..3 {
            if let Some(lut) = &luts[c] {
                p[c] = lut[bin_of(p[c])];
            }
        }
    });
}

/// Reflect-101 index into `0..n` (mirror without repeating the edge).
#[inline]
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m >= n as i64 {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Applies a spatial warp to the crop under `bbox` and returns the new image.
pub fn apply_spatial_op_in_box(
    image: &ImageBuffer,
    bbox: &BBox,
    op: &TransformOp,
) -> Result<ImageBuffer> {
    let params = op
        .spatial_params(bbox.w, bbox.h)
        .ok_or_else(|| Error::WrongOpCategory(op.kind.name().into()))?;
    check_rect(image, bbox)?;
    let mut out = image.clone();
    apply_spatial_in_place(&mut out, bbox, params);
    Ok(out)
}

/// Warps the crop under `bbox` about its centre with bilinear sampling and
/// reflect padding, writing the result back into the same box.
pub fn apply_spatial_in_place(image: &mut ImageBuffer, bbox: &BBox, params: SpatialParams) {
    let (bw, bh) = (bbox.w as usize, bbox.h as usize);
    let (ox, oy) = (bbox.x as usize, bbox.y as usize);
    let mut crop = Vec::with_capacity(bw * bh);
    for y in 0..bh {
        for x in 0..bw {
            crop.push(image.pixel(ox + x, oy + y));
        }
    }
    let cx = (bw as f64 - 1.0) / 2.0;
    let cy = (bh as f64 - 1.0) / 2.0;
    let (sin, cos) = match params {
        SpatialParams::Rotate { degrees } => snapped_sin_cos(degrees),
        _ => (0.0, 1.0),
    };
    // Inverse map: output pixel -> source position in the crop.
    let source = |x: f64, y: f64| -> (f64, f64) {
        let (dx, dy) = (x - cx, y - cy);
        match params {
            SpatialParams::Rotate { .. } => (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy),
            SpatialParams::ShearX { factor } => (x - factor * dy, y),
            SpatialParams::ShearY { factor } => (x, y - factor * dx),
            SpatialParams::TranslateX { pixels } => (x - pixels, y),
            SpatialParams::TranslateY { pixels } => (x, y - pixels),
        }
    };
    let fetch = |x: i64, y: i64| crop[reflect(y, bh) * bw + reflect(x, bw)];
    for y in 0..bh {
        for x in 0..bw {
            let (sx, sy) = source(x as f64, y as f64);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let p00 = fetch(x0, y0);
            let p10 = fetch(x0 + 1, y0);
            let p01 = fetch(x0, y0 + 1);
            let p11 = fetch(x0 + 1, y0 + 1);
            let mut rgb = [0f32; 3];
            for c in 0..3 {
                let top = p00[c] + fx * (p10[c] - p00[c]);
                let bot = p01[c] + fx * (p11[c] - p01[c]);
                rgb[c] = (top + fy * (bot - top)).clamp(0.0, 1.0);
            }
            image.set_pixel(ox + x, oy + y, rgb);
        }
    }
}

/// Applies every op of `chain` to `rect` in order. Spatial ops warp the rect's
/// crop; color ops recolour it.
pub fn apply_chain_in_place(image: &mut ImageBuffer, rect: &BBox, chain: &TransformChain) {
    for op in &chain.ops {
        if let Some(p) = op.color_params() {
            apply_color_in_place(image, rect, p);
        } else if let Some(p) = op.spatial_params(rect.w, rect.h) {
            apply_spatial_in_place(image, rect, p);
        }
    }
}
