//! Cell grouping into boxes, and evaluation helpers.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labels::{assign_labels, cell_rect, target_index};
use super::net::{forward, hidden_layer};
use super::Detector;
use crate::error::{Error, Result};
use crate::metrics::{average_precision, mean_ap, ClassAp, GroundTruth, ScoredBox};
use crate::model::{BBox, Dataset, ImageBuffer};
use crate::nn::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Groups cells into detections.
///
/// `probs` holds `grid * grid` rows of `K + 1` class probabilities, the last
/// column being background. A cell is foreground for class `c` when `c` is
/// its argmax and its probability reaches `score_threshold`. Same-class cells
/// are grouped by 4-connectivity; each group yields the union of its cell
/// rectangles scored by the mean class probability.
pub fn group_cells(probs: &[f64], grid: usize, cell: usize, score_threshold: f64) -> Vec<Detection> {
    let cells = grid * grid;
    let outputs = probs.len() / cells.max(1);
    let bg = outputs.saturating_sub(1);
    let class_of: Vec<Option<usize>> = probs
        .chunks_exact(outputs)
        .map(|p| {
            let best = (0..outputs).fold(0, |b, c| if p[c] > p[b] { c } else { b });
            (best != bg && p[best] >= score_threshold).then_some(best)
        })
        .collect();

    let mut seen = vec![false; cells];
    let mut out = Vec::new();
    for start in 0..cells {
        let Some(class_id) = class_of[start] else { continue };
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut bbox = cell_rect(grid, cell, start);
        let mut total = 0.0;
        let mut count = 0usize;
        while let Some(i) = queue.pop_front() {
            bbox = bbox.union(&cell_rect(grid, cell, i));
            total += probs[i * outputs + class_id];
            count += 1;
            let (x, y) = (i % grid, i / grid);
            let mut next = Vec::with_capacity(4);
            if x > 0 {
                next.push(i - 1);
            }
            if x + 1 < grid {
                next.push(i + 1);
            }
            if y > 0 {
                next.push(i - grid);
            }
            if y + 1 < grid {
                next.push(i + grid);
            }
            for j in next {
                if !seen[j] && class_of[j] == Some(class_id) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(Detection { bbox, class_id, score: total / count as f64 });
    }
    out
}

fn check_image(detector: &Detector, image: &ImageBuffer) -> Result<()> {
    if image.width() != detector.image_size || image.height() != detector.image_size {
        return Err(Error::DimMismatch(format!(
            "image is {}x{}, detector expects {}x{}",
            image.width(),
            image.height(),
            detector.image_size,
            detector.image_size
        )));
    }
    Ok(())
}

/// Class probabilities of every cell, `cells x (K+1)`.
pub fn cell_probabilities(detector: &Detector, image: &ImageBuffer) -> Result<Vec<f64>> {
    check_image(detector, image)?;
    let f = forward(&detector.params, &detector.features.extract(image)?)?;
    Ok((0..f.rows).flat_map(|r| softmax(f.logit_row(r))).collect())
}

pub fn detect(detector: &Detector, image: &ImageBuffer, score_threshold: f64) -> Result<Vec<Detection>> {
    let probs = cell_probabilities(detector, image)?;
    Ok(group_cells(&probs, detector.grid, detector.cell_size(), score_threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub per_class: Vec<ClassAp>,
    pub map: f64,
}

/// mAP at IoU 0.5 over `data`.
pub fn evaluate(detector: &Detector, data: &Dataset, score_threshold: f64) -> Result<MapResult> {
    let k = detector.num_classes();
    let per_image = data
        .samples
        .par_iter()
        .map(|s| detect(detector, &s.image, score_threshold))
        .collect::<Result<Vec<_>>>()?;
    let mut dets = vec![Vec::new(); k];
    let mut gts = vec![Vec::new(); k];
    for (image, (sample, found)) in data.samples.iter().zip(&per_image).enumerate() {
        for d in found {
            dets[d.class_id].push(ScoredBox { image, bbox: d.bbox, score: d.score });
        }
        for a in &sample.annotations {
            if a.class_id >= k {
                return Err(Error::UnknownClassId { class_id: a.class_id, num_classes: k });
            }
            gts[a.class_id].push(GroundTruth { image, bbox: a.bbox });
        }
    }
    let per_class: Vec<ClassAp> = (0..k)
        .map(|c| ClassAp { ap: average_precision(&dets[c], &gts[c], 0.5), num_gt: gts[c].len() })
        .collect();
    let map = mean_ap(&per_class)?;
    Ok(MapResult { per_class, map })
}

/// Penultimate-layer features of cells grouped by ground-truth label (index
/// `K` is background), at most `max_per_class` per class, in dataset order.
pub fn penultimate_by_class(detector: &Detector, data: &Dataset, max_per_class: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let k = detector.num_classes();
    let width = detector.dims.hidden;
    let mut out = vec![Vec::new(); k + 1];
    for s in &data.samples {
        if out.iter().all(|c| c.len() >= max_per_class) {
            break;
        }
        check_image(detector, &s.image)?;
        let hidden = hidden_layer(&detector.params, &detector.features.extract(&s.image)?)?;
        let labels = assign_labels(detector.grid, detector.cell_size(), &s.annotations, 0.5);
        for (r, label) in labels.into_iter().enumerate() {
            let c = target_index(label, k);
            if out[c].len() < max_per_class {
                out[c].push(hidden[r * width..(r + 1) * width].to_vec());
            }
        }
    }
    Ok(out)
}
