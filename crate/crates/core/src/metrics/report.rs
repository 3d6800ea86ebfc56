use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analysis::DeltaBin;
use super::pauc::{p_auc_from_flags, CurvePoint, PAucConfig};
use super::{average_precision_50, match_detections, IOU_THRESHOLD};
use crate::detection::{Detection, GroundTruthBox};
use crate::error::Result;
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_id: u64,
    pub similarity: Option<f64>,
    pub object_count: usize,
    pub detections: usize,
    pub p_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub map50: f64,
    /// P-AUC over all detections of the corpus.
    pub p_auc: f64,
    /// Mean of per-frame P-AUC values.
    pub p_auc_frame_mean: f64,
    pub total_detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub curve: Vec<CurvePoint>,
    pub per_frame: Vec<FrameReport>,
}

/// Evaluates detections over the given frames (`frame_id`, similarity). Frames
/// absent from `frames` but present in the detections or ground truth are
/// added with no similarity.
pub fn evaluate<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[GroundTruthBox],
    frames: &[(u64, Option<f64>)],
    cfg: &PAucConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let map50 = average_precision_50(dets, gts)?;
    let tp = match_detections(dets, gts, IOU_THRESHOLD);
    let corpus = p_auc_from_flags(dets, &tp, cfg)?;

    let mut per_frame: BTreeMap<u64, (Option<f64>, Vec<usize>, usize)> = BTreeMap::new();
    for &(id, c) in frames {
        per_frame.entry(id).or_default().0 = c;
    }
    for (i, d) in dets.iter().enumerate() {
        per_frame.entry(d.frame_id).or_default().1.push(i);
    }
    for g in gts {
        per_frame.entry(g.frame_id).or_default().2 += 1;
    }
    let rows: Vec<(u64, Option<f64>, Vec<usize>, usize)> =
        per_frame.into_iter().map(|(id, (c, idx, n))| (id, c, idx, n)).collect();
    let per_frame = rows
        .par_iter()
        .map(|(id, c, idx, n_gt)| {
            let fd: Vec<Detection<T>> = idx.iter().map(|&i| dets[i]).collect();
            let ft: Vec<bool> = idx.iter().map(|&i| tp[i]).collect();
            let r = p_auc_from_flags(&fd, &ft, cfg)?;
            Ok(FrameReport { frame_id: *id, similarity: *c, object_count: *n_gt, detections: fd.len(), p_auc: r.value })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_tp = tp.iter().filter(|&&t| t).count();
    let mean = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().map(|f| f.p_auc).sum::<f64>() / per_frame.len() as f64
    };
    Ok(EvalReport {
        map50,
        p_auc: corpus.value,
        p_auc_frame_mean: mean,
        total_detections: dets.len(),
        true_positives: n_tp,
        false_positives: dets.len() - n_tp,
        curve: corpus.curve,
        per_frame,
    })
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "tau,precision,tp,fp")?;
    for p in curve {
        writeln!(f, "{},{},{},{}", p.tau, p.precision, p.tp, p.fp)?;
    }
    Ok(())
}

pub fn write_bins_csv(path: &Path, bins: &[DeltaBin]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "c_lo,c_hi,n_frames,delta_pauc")?;
    for b in bins {
        let d = b.delta_pauc.map(|d| d.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{}", b.c_lo, b.c_hi, b.n_frames, d)?;
    }
    Ok(())
}
