//! Grid-cell labelling by box overlap.

use crate::model::{Annotation, BBox};
use crate::oaloss::InstanceLabel;

pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Pixel rectangle of cell `index` (row-major) in a `grid x grid` layout.
pub fn cell_rect(grid: usize, cell: usize, index: usize) -> BBox {
    let (gx, gy) = (index % grid, index / grid);
    BBox::new((gx * cell) as u32, (gy * cell) as u32, cell as u32, cell as u32)
}

/// Fraction of `area_of`'s area covered by `by`.
pub fn coverage(area_of: &BBox, by: &BBox) -> f64 {
    area_of.intersection_area(by) as f64 / area_of.area() as f64
}

/// Labels each cell `Foreground(c)` when the box covering the largest fraction
/// of the cell covers at least `threshold` of it, otherwise `Background`.
/// Equal coverage goes to the smaller box, then the lower class id.
pub fn assign_labels(
    grid: usize,
    cell: usize,
    annotations: &[Annotation],
    threshold: f64,
) -> Vec<InstanceLabel> {
    (0..grid * grid)
        .map(|i| {
            let rect = cell_rect(grid, cell, i);
            let best = annotations
                .iter()
                .map(|a| (coverage(&rect, &a.bbox), a))
                .filter(|(f, _)| *f > 0.0)
                .min_by(|(fa, a), (fb, b)| {
                    fb.total_cmp(fa)
                        .then(a.bbox.area().cmp(&b.bbox.area()))
                        .then(a.class_id.cmp(&b.class_id))
                });
            match best {
                Some((f, a)) if f >= threshold => InstanceLabel::Foreground(a.class_id),
                _ => InstanceLabel::Background,
            }
        })
        .collect()
}

/// Class index used by the classifier: background is `num_classes`.
pub fn target_index(label: InstanceLabel, num_classes: usize) -> usize {
    match label {
        InstanceLabel::Foreground(c) => c,
        InstanceLabel::Background => num_classes,
    }
}

/// Cells covered by at least `threshold` of their area by `rect`; when none
/// qualifies, the cell containing the centre of `rect`.
pub fn covered_cells(rect: &BBox, grid: usize, cell: usize, threshold: f64) -> Vec<usize> {
    let cells: Vec<usize> = (0..grid * grid)
        .filter(|&i| coverage(&cell_rect(grid, cell, i), rect) >= threshold)
        .collect();
    if !cells.is_empty() {
        return cells;
    }
    let cx = ((rect.x + rect.w / 2) as usize / cell).min(grid - 1);
    let cy = ((rect.y + rect.h / 2) as usize / cell).min(grid - 1);
    vec![cy * grid + cx]
}
