//! Dataset directories on disk: a COCO-style `annotations.json` plus 8-bit
//! RGB PNG files.
//!
//! ```text
//! { "classes": ["circle", ...],
//!   "images": [{"id": "s0", "file": "s0.png", "width": 64, "height": 64}],
//!   "annotations": [{"image_id": "s0", "bbox": [x, y, w, h], "class_id": 0}] }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_dataset, Annotation, BBox, Dataset, ImageBuffer, SampleRecord};

pub const ANNOTATIONS_FILE: &str = "annotations.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationsFile {
    pub classes: Vec<String>,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: String,
    pub file: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEntry {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: usize,
}

impl AnnotationsFile {
    /// Builds the header for `dataset`, with one `<id>.png` file per sample.
    pub fn describe(dataset: &Dataset) -> Self {
        let images = dataset
            .samples
            .iter()
            .map(|s| ImageEntry {
                id: s.id.clone(),
                file: format!("{}.png", s.id),
                width: s.image.width(),
                height: s.image.height(),
            })
            .collect();
        let annotations = dataset
            .samples
            .iter()
            .flat_map(|s| {
                s.annotations.iter().map(move |a| AnnotationEntry {
                    image_id: s.id.clone(),
                    bbox: a.bbox,
                    class_id: a.class_id,
                })
            })
            .collect();
        Self { classes: dataset.classes.clone(), images, annotations }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("annotations serialize");
        fs::write(path, text)?;
        Ok(())
    }
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let header = AnnotationsFile::read(&root.join(ANNOTATIONS_FILE))?;
    let num_classes = header.classes.len();

    let mut by_id: HashMap<&str, Vec<Annotation>> = HashMap::new();
    for entry in &header.images {
        if by_id.insert(entry.id.as_str(), Vec::new()).is_some() {
            return Err(Error::InvalidDataset(format!("duplicate image id {}", entry.id)));
        }
    }
    for a in &header.annotations {
        let Some(list) = by_id.get_mut(a.image_id.as_str()) else {
            return Err(Error::InvalidDataset(format!(
                "annotation references unknown image {}",
                a.image_id
            )));
        };
        if a.class_id >= num_classes {
            return Err(Error::UnknownClassId { class_id: a.class_id, num_classes });
        }
        list.push(Annotation { bbox: a.bbox, class_id: a.class_id });
    }
    for entry in &header.images {
        if by_id[entry.id.as_str()]
            .iter()
            .any(|a| !a.bbox.fits(entry.width, entry.height))
        {
            return Err(Error::BoxOutOfBounds(entry.id.clone()));
        }
    }

    let samples = header
        .images
        .par_iter()
        .map(|entry| {
            let image = load_image(&root.join(&entry.file))?;
            if image.width() != entry.width || image.height() != entry.height {
                return Err(Error::InvalidDataset(format!(
                    "image {} is {}x{}, header says {}x{}",
                    entry.file,
                    image.width(),
                    image.height(),
                    entry.width,
                    entry.height
                )));
            }
            Ok(SampleRecord {
                id: entry.id.clone(),
                image,
                annotations: by_id[entry.id.as_str()].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let dataset = Dataset { classes: header.classes, samples };
    if let Some(v) = validate_dataset(&dataset).first() {
        return Err(Error::InvalidDataset(format!("{v:?}")));
    }
    Ok(dataset)
}

/// Writes `annotations.json` and one PNG per sample into `root` (created if needed).
pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let header = AnnotationsFile::describe(dataset);
    dataset
        .samples
        .par_iter()
        .zip(header.images.par_iter())
        .try_for_each(|(s, entry)| save_image(&s.image, &root.join(&entry.file)))?;
    header.write(&root.join(ANNOTATIONS_FILE))
}

/// Quantizes one channel value to a byte: `round(v * 255)`.
#[inline]
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(image: &ImageBuffer, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
    image::save_buffer(
        path,
        &bytes,
        image.width() as u32,
        image.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    })
}

/// Writes a single-channel map in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_gray(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&v| to_byte(v as f32)).collect();
    image::save_buffer(
        path,
        &bytes,
        width as u32,
        height as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Reads any image the `image` crate understands and converts it to RGB.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let decoded = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    ImageBuffer::from_data(w as usize, h as usize, data)
}
