//! Detection evaluation: IoU matching, AP@0.50, precision–confidence AUC and
//! the similarity analyses built on per-frame results.

mod analysis;
mod pauc;
mod report;

use std::collections::{BTreeSet, HashMap};

pub use analysis::{
    binned_delta_pauc, similarity_correlations, spearman, BinSpec, Correlations, DeltaBin,
    FrameStat,
};
pub use pauc::{p_auc, threshold_grid, CurvePoint, GridKind, PAuc, PAucConfig};
pub use report::{evaluate, write_bins_csv, write_curve_csv, EvalReport, FrameReport};

use crate::detection::{BBox, Detection, GroundTruthBox};
use crate::error::{BemError, Result};
use crate::num::Scalar;

pub const IOU_THRESHOLD: f64 = 0.5;

/// Intersection over union; boxes without area give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || a.area() <= 0.0 || b.area() <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// An unlabeled detection or ground-truth box is compatible with any class.
#[inline]
fn labels_compatible(a: Option<u32>, b: Option<u32>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

/// Indices of `dets` in descending score order, ties by input index.
pub(crate) fn score_order<T: Scalar>(dets: &[Detection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Greedy one-to-one matching within each frame. Detections are visited by
/// descending score; each takes the unmatched, label-compatible ground truth
/// with the highest IoU at or above `iou_thresh` (ties to the lower index).
/// Returns a TP flag per detection, in input order.
pub fn match_detections<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> Vec<bool> {
    let mut by_frame: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_frame.entry(g.frame_id).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in score_order(dets) {
        let d = &dets[i];
        let Some(cands) = by_frame.get(&d.frame_id) else { continue };
        let mut best: Option<(usize, f64)> = None;
        for &g in cands {
            if taken[g] || !labels_compatible(d.label, gts[g].label) {
                continue;
            }
            let v = iou(&d.bbox, &gts[g].bbox);
            if v >= iou_thresh && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[i] = true;
        }
    }
    tp
}

/// Single-class AP with 101-point interpolation from already-computed flags.
pub(crate) fn interpolated_ap<T: Scalar>(dets: &[Detection<T>], tp: &[bool], n_gt: usize) -> f64 {
    let order = score_order(dets);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut ntp, mut nfp) = (0usize, 0usize);
    for &i in &order {
        if tp[i] {
            ntp += 1;
        } else {
            nfp += 1;
        }
        recall.push(ntp as f64 / n_gt as f64);
        precision.push(ntp as f64 / (ntp + nfp) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&rc| rc < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// COCO-style AP at IoU 0.50 with 101-point recall interpolation, averaged
/// over the ground-truth classes present.
pub fn average_precision_50<T: Scalar>(dets: &[Detection<T>], gts: &[GroundTruthBox]) -> Result<f64> {
    if gts.is_empty() {
        return Err(BemError::UndefinedAp);
    }
    let classes: BTreeSet<Option<u32>> = gts.iter().map(|g| g.label).collect();
    let mut total = 0.0;
    for class in &classes {
        let class_gts: Vec<GroundTruthBox> = gts.iter().filter(|g| g.label == *class).copied().collect();
        let class_dets: Vec<Detection<T>> = dets
            .iter()
            .filter(|d| class.is_none() || d.label.is_none() || d.label == *class)
            .copied()
            .collect();
        let tp = match_detections(&class_dets, &class_gts, IOU_THRESHOLD);
        total += interpolated_ap(&class_dets, &tp, class_gts.len());
    }
    Ok(total / classes.len() as f64)
}
