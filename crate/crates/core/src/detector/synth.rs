//! Synthetic shapes scenes: colored circles, triangles and squares on a
//! smooth, low-saturation noise texture.
//!
//! Each class has its own hue family (red circles, green triangles, blue
//! squares) with per-object jitter. Boxes are the tight extent of the rendered
//! mask. Objects never overlap, and objects of the same class keep at least
//! `same_class_gap` pixels apart so their grid cells stay disconnected.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Annotation, BBox, Dataset, ImageBuffer, SampleRecord};
use crate::rng::{self, tag};

pub const CLASS_NAMES: [&str; 3] = ["circle", "triangle", "square"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Cells per side.
    pub grid: usize,
    pub objects: [usize; 2],
    /// Inclusive bounds on the object box side, in pixels.
    pub object_size: [usize; 2],
    pub same_class_gap: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            grid: 8,
            objects: [1, 4],
            object_size: [18, 28],
            same_class_gap: 16,
            train: 2000,
            test: 500,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        CLASS_NAMES.len()
    }

    pub fn cell_size(&self) -> usize {
        self.image_size / self.grid
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.image_size % self.grid != 0 {
            return Err(Error::Config(format!(
                "synth.image_size {} is not divisible by grid {}",
                self.image_size, self.grid
            )));
        }
        let [lo, hi] = self.object_size;
        if lo < 4 || lo > hi || hi > self.image_size {
            return Err(Error::Config("synth.object_size must satisfy 4 <= lo <= hi <= image_size".into()));
        }
        if self.objects[0] == 0 || self.objects[0] > self.objects[1] {
            return Err(Error::Config("synth.objects must satisfy 1 <= lo <= hi".into()));
        }
        Ok(())
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Bilinear upsampling of a coarse random lattice.
fn background<R: Rng + ?Sized>(rng: &mut R, size: usize) -> ImageBuffer {
    const LATTICE: usize = 5;
    let hue = rng.random_range(0.0..360.0);
    let sat = rng.random_range(0.0..0.2);
    let knots: Vec<f64> = (0..LATTICE * LATTICE).map(|_| rng.random_range(0.25..0.75)).collect();
    let tint: Vec<f64> = (0..LATTICE * LATTICE).map(|_| rng.random_range(-30.0..30.0)).collect();
    let mut img = ImageBuffer::new(size, size);
    let step = (size - 1) as f64 / (LATTICE - 1) as f64;
    for y in 0..size {
        let gy = y as f64 / step;
        let y0 = (gy.floor() as usize).min(LATTICE - 2);
        let fy = gy - y0 as f64;
        for x in 0..size {
            let gx = x as f64 / step;
            let x0 = (gx.floor() as usize).min(LATTICE - 2);
            let fx = gx - x0 as f64;
            let lerp2 = |v: &[f64]| {
                let a = v[y0 * LATTICE + x0] * (1.0 - fx) + v[y0 * LATTICE + x0 + 1] * fx;
                let b = v[(y0 + 1) * LATTICE + x0] * (1.0 - fx) + v[(y0 + 1) * LATTICE + x0 + 1] * fx;
                a * (1.0 - fy) + b * fy
            };
            img.set_pixel(x, y, hsv_to_rgb(hue + lerp2(&tint), sat, lerp2(&knots)));
        }
    }
    img
}

fn inside(class: usize, px: f64, py: f64, x: f64, y: f64, w: f64, h: f64) -> bool {
    match class {
        0 => {
            let (cx, cy, r) = (x + w / 2.0, y + h / 2.0, w / 2.0);
            (px - cx).powi(2) + (py - cy).powi(2) <= r * r
        }
        1 => {
            // Apex at top centre, base along the bottom edge.
            let t = (py - y) / h;
            let half = t * w / 2.0;
            let cx = x + w / 2.0;
            (0.0..=1.0).contains(&t) && (px - cx).abs() <= half
        }
        _ => px >= x && px <= x + w && py >= y && py <= y + h,
    }
}

fn separated(a: &BBox, b: &BBox, gap: u32) -> bool {
    a.right() + gap <= b.x || b.right() + gap <= a.x || a.bottom() + gap <= b.y || b.bottom() + gap <= a.y
}

/// Renders one scene with `objects[0]..=objects[1]` shapes (fewer if they do
/// not fit after a bounded number of placement attempts; never zero).
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig, id: String) -> SampleRecord {
    let size = cfg.image_size;
    let mut image = background(rng, size);
    let wanted = rng.random_range(cfg.objects[0]..=cfg.objects[1]);
    let mut annotations: Vec<Annotation> = Vec::new();
    let [lo, hi] = cfg.object_size;
    let mut attempts = 0;
    while annotations.len() < wanted && attempts < 200 {
        attempts += 1;
        let class = rng.random_range(0..cfg.num_classes());
        let w = rng.random_range(lo..=hi);
        let h = if class == 1 { rng.random_range(lo..=hi) } else { w };
        let x = rng.random_range(0..=size - w);
        let y = rng.random_range(0..=size - h);
        let frame = BBox::new(x as u32, y as u32, w as u32, h as u32);
        let fits = annotations.iter().all(|a| {
            let gap = if a.class_id == class { cfg.same_class_gap as u32 } else { 2 };
            separated(&a.bbox, &frame, gap)
        });
        if !fits {
            continue;
        }
        let hue_centre = [0.0, 120.0, 240.0][class];
        let color = hsv_to_rgb(
            hue_centre + rng.random_range(-20.0..20.0),
            rng.random_range(0.6..1.0),
            rng.random_range(0.55..1.0),
        );
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for py in y..y + h {
            for px in x..x + w {
                if inside(class, px as f64 + 0.5, py as f64 + 0.5, x as f64, y as f64, w as f64, h as f64) {
                    image.set_pixel(px, py, color);
                    x0 = x0.min(px);
                    y0 = y0.min(py);
                    x1 = x1.max(px);
                    y1 = y1.max(py);
                }
            }
        }
        if x0 == usize::MAX {
            continue;
        }
        let bbox = BBox::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32);
        annotations.push(Annotation { bbox, class_id: class });
    }
    SampleRecord { id, image, annotations }
}

fn generate_split(seed: u64, stage: u64, count: usize, prefix: &str, cfg: &SynthConfig) -> Dataset {
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[stage, i as u64]);
            generate_scene(&mut r, cfg, format!("{prefix}{i:05}"))
        })
        .collect();
    Dataset { classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(), samples }
}

/// Train and test splits. Scene `i` of a split depends only on `(seed, split, i)`.
pub fn generate_splits(cfg: &SynthConfig, seed: u64) -> (Dataset, Dataset) {
    (
        generate_split(seed, tag::SYNTH_TRAIN, cfg.train, "train", cfg),
        generate_split(seed, tag::SYNTH_TEST, cfg.test, "test", cfg),
    )
}
