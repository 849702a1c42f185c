//! Segmentation and identification metrics.
//!
//! Distances are in mm: voxel centres are placed at `index·spacing + origin`
//! and surfaces are the 6-connected boundary voxels of each mask. HD is the
//! maximum of the pooled symmetric nearest-surface distances and HD95 their
//! linearly interpolated 95th percentile. Metrics with an empty operand are
//! recorded as absent (`None`) and left out of every mean.

mod components;
mod distance;
mod landmarks;
mod report;

pub use components::{label_components, largest_component_filter};
pub use distance::{directed_distances, percentile_inclusive, squared_edt, surface_voxels};
pub use landmarks::{centroids, identification, Identification, Landmark, DEFAULT_THRESHOLD_MM};
pub use report::{
    aggregate, write_csv, AggregateSummary, AggregationMode, CaseMetrics, ClassMetrics,
    ClassSummary, EvalOptions, MetricsReport,
};

use ndarray::{Array3, ArrayView3, Zip};

use crate::error::Result;
use crate::volume::LabelVolume;

pub fn class_mask(volume: &LabelVolume, class: u16) -> Array3<bool> {
    volume.voxels.mapv(|v| v == class)
}

/// `2|A∩B| / (|A|+|B|)`, `None` when both masks are empty.
pub fn dice_masks(a: ArrayView3<bool>, b: ArrayView3<bool>) -> Option<f64> {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    Zip::from(a).and(b).for_each(|&x, &y| {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    });
    (na + nb > 0).then(|| 2.0 * inter as f64 / (na + nb) as f64)
}

/// `(HD, HD95)` in mm between two masks on the same grid, `None` when either
/// is empty. Symmetric in its arguments.
pub fn hausdorff_masks(
    a: ArrayView3<bool>,
    b: ArrayView3<bool>,
    spacing: [f64; 3],
) -> Option<(f64, f64)> {
    let sa = surface_voxels(a);
    let sb = surface_voxels(b);
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let mut pooled = directed_distances(&sa, &sb, spacing);
    pooled.extend(directed_distances(&sb, &sa, spacing));
    pooled.sort_unstable_by(f64::total_cmp);
    Some((*pooled.last().unwrap(), percentile_inclusive(&pooled, 0.95)))
}

pub fn dice(gt: &LabelVolume, pred: &LabelVolume, class: u16) -> Result<Option<f64>> {
    gt.check_same_geometry(pred)?;
    Ok(dice_masks(
        class_mask(gt, class).view(),
        class_mask(pred, class).view(),
    ))
}

pub fn hausdorff(gt: &LabelVolume, pred: &LabelVolume, class: u16) -> Result<Option<(f64, f64)>> {
    gt.check_same_geometry(pred)?;
    Ok(hausdorff_masks(
        class_mask(gt, class).view(),
        class_mask(pred, class).view(),
        gt.spacing,
    ))
}
