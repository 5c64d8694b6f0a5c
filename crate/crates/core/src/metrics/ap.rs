use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BBox;

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b) as f64;
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A detection of one class in image `image`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub image: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: usize,
    pub bbox: BBox,
}

/// All-point interpolated average precision for a single class.
///
/// Detections are visited by descending score (ties keep input order). Each
/// detection claims the unmatched ground truth in its image with the highest
/// IoU, provided that IoU reaches `iou_threshold`; each ground truth is
/// matched at most once. Returns 0 when there is no ground truth.
pub fn average_precision(
    detections: &[ScoredBox],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
) -> f64 {
    if ground_truths.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let mut matched = vec![false; ground_truths.len()];
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    for (rank, &d) in order.iter().enumerate() {
        let det = &detections[d];
        let best = ground_truths
            .iter()
            .enumerate()
            .filter(|(g, gt)| !matched[*g] && gt.image == det.image)
            .map(|(g, gt)| (g, iou(&det.bbox, &gt.bbox)))
            .filter(|&(_, v)| v >= iou_threshold)
            .fold(None::<(usize, f64)>, |acc, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        if let Some((g, _)) = best {
            matched[g] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / ground_truths.len() as f64);
    }

    // Monotone precision envelope, scanned from the right.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// AP of one class together with its ground-truth count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub ap: f64,
    pub num_gt: usize,
}

/// Unweighted mean AP over classes that have at least one ground truth.
pub fn mean_ap(per_class: &[ClassAp]) -> Result<f64> {
    let present: Vec<f64> = per_class.iter().filter(|c| c.num_gt > 0).map(|c| c.ap).collect();
    if present.is_empty() {
        return Err(Error::InvalidArgument("no class has ground truth".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
