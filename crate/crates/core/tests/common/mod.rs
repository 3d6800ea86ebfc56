//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use bem_core::{BBox, ForegroundMask, Frame};

/// `σ(ln 4 − 1) = 4 / (e + 4)`, computed by a standalone script.
pub const HAND_CHECKED_S: f64 = 0.5953903248083103;
/// `σ(ln 4 / 2)`.
pub const TEMPERATURE_2_OF_0_8: f64 = 0.6666666666666666;

/// Per-pixel loop: masked mean over the window, unmasked mean where no frame
/// sees background, clamped to `[0, 1]`.
pub fn brute_force_background(frames: &[Frame<f64>], masks: &[ForegroundMask]) -> Vec<f64> {
    let (w, h, ch) = frames[0].dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut num = 0.0f64;
                let mut den = 0u32;
                let mut plain = 0.0f64;
                for (f, m) in frames.iter().zip(masks) {
                    let v = f.get(x, y, c);
                    let keep = m.values()[y * w + x];
                    num += v * keep as f64;
                    den += keep as u32;
                    plain += v;
                }
                let v = if den > 0 { num / den as f64 } else { plain / frames.len() as f64 };
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let ua = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if ua <= 0.0 {
        0.0
    } else {
        inter / ua
    }
}

/// One frame: scored boxes and ground-truth boxes, single class.
#[derive(Debug, Clone)]
pub struct OracleFrame {
    pub dets: Vec<(BBox, f64)>,
    pub gts: Vec<BBox>,
}

/// TP flags for one frame: visit by descending score (stable), take the best
/// unmatched gt with IoU >= 0.5, first index wins ties.
pub fn greedy_flags(dets: &[(BBox, f64)], gts: &[BBox]) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    // insertion sort keeps equal scores in input order
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && dets[idx[j - 1]].1 < dets[idx[j]].1 {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in idx {
        let mut best = None;
        let mut best_iou = 0.5;
        for (g, gb) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let v = box_iou(&dets[i].0, gb);
            if v >= best_iou && (best.is_none() || v > best_iou) {
                best = Some(g);
                best_iou = v;
            }
        }
        if let Some(g) = best {
            used[g] = true;
            flags[i] = true;
        }
    }
    flags
}

/// Precision at each threshold, recounting TP/FP from scratch on the subset
/// of detections at or above it.
pub fn brute_force_precision(frames: &[OracleFrame], tau: f64, empty: f64) -> f64 {
    let (mut tp, mut fp) = (0usize, 0usize);
    for f in frames {
        let kept: Vec<(BBox, f64)> = f.dets.iter().copied().filter(|d| d.1 >= tau).collect();
        for flag in greedy_flags(&kept, &f.gts) {
            if flag {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    if tp + fp == 0 {
        empty
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

/// Left Riemann sum of brute-force precision over `taus` (descending).
pub fn brute_force_pauc(frames: &[OracleFrame], taus: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..taus.len() - 1 {
        total += brute_force_precision(frames, taus[j], 1.0) * (taus[j] - taus[j + 1]);
    }
    total
}

/// AP from the raw PR curve: at each of 101 recall levels, the best
/// precision among operating points reaching that recall.
pub fn brute_force_ap(frames: &[OracleFrame]) -> f64 {
    let n_gt: usize = frames.iter().map(|f| f.gts.len()).sum();
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for f in frames {
        let flags = greedy_flags(&f.dets, &f.gts);
        scored.extend(f.dets.iter().zip(flags).map(|(d, t)| (d.1, t)));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    for (_, t) in &scored {
        n += 1;
        if *t {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / n as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let best = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}
