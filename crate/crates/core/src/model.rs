//! Domain types shared by every stage: images, boxes, annotations and datasets.
//!
//! Pixels are stored as `f32` in `[0, 1]`, row-major, interleaved RGB. The
//! 8-bit representation only exists at the IO boundary (see [`crate::dataset`]).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An RGB image with real-valued channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// All-black image.
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    /// Wraps raw interleaved data, checking length and range.
    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * CHANNELS {
            return Err(Error::DimMismatch(format!(
                "image data has {} values, expected {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the raw values. Callers are responsible for keeping
    /// values inside `[0, 1]`.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * CHANNELS
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = self.index(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Full-frame rectangle.
    pub fn frame(&self) -> BBox {
        BBox::new(0, 0, self.width as u32, self.height as u32)
    }

    /// Luma (0.299 R + 0.587 G + 0.114 B) for every pixel, in `f64`.
    pub fn to_gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }
}

/// Axis-aligned pixel rectangle; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x as usize
            && x < self.right() as usize
            && y >= self.y as usize
            && y < self.bottom() as usize
    }

    /// Non-empty and fully inside a `width x height` frame.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) as u64 * (y1 - y0) as u64
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image: ImageBuffer,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// A single broken invariant found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateClassName(String),
    DuplicateSampleId(String),
    InvalidBox { sample: String, index: usize },
    UnknownClassId { sample: String, index: usize, class_id: usize },
    PixelOutOfRange { sample: String },
    ImageDataLength { sample: String },
}

/// Lists every violated invariant. An empty result means the dataset is valid.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for name in &d.classes {
        if !names.insert(name.as_str()) {
            out.push(Violation::DuplicateClassName(name.clone()));
        }
    }
    let mut ids = HashSet::new();
    for s in &d.samples {
        if !ids.insert(s.id.as_str()) {
            out.push(Violation::DuplicateSampleId(s.id.clone()));
        }
        let img = &s.image;
        if img.data().len() != img.width() * img.height() * CHANNELS {
            out.push(Violation::ImageDataLength { sample: s.id.clone() });
        }
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            out.push(Violation::PixelOutOfRange { sample: s.id.clone() });
        }
        for (index, a) in s.annotations.iter().enumerate() {
            if !a.bbox.fits(img.width(), img.height()) {
                out.push(Violation::InvalidBox { sample: s.id.clone(), index });
            }
            if a.class_id >= d.classes.len() {
                out.push(Violation::UnknownClassId {
                    sample: s.id.clone(),
                    index,
                    class_id: a.class_id,
                });
            }
        }
    }
    out
}
