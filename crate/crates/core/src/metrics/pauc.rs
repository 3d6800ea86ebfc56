//! Precision–confidence AUC.
//!
//! `P(τ)` is the precision of the detections scoring at least `τ`. Over a
//! descending grid `τ_1 = 1 > … > τ_J = 0` the area is the left Riemann sum
//! `Σ_{j<J} P(τ_j)·(τ_j − τ_{j+1})`. Thresholds with no surviving detection
//! use `empty_precision`.

use serde::{Deserialize, Serialize};

use super::{match_detections, score_order, IOU_THRESHOLD};
use crate::detection::{Detection, GroundTruthBox};
use crate::error::{BemError, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    #[default]
    Uniform,
    ScoreQuantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PAucConfig {
    pub grid: GridKind,
    pub points: usize,
    pub empty_precision: f64,
}

impl Default for PAucConfig {
    fn default() -> Self {
        PAucConfig { grid: GridKind::Uniform, points: 101, empty_precision: 1.0 }
    }
}

impl PAucConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(BemError::invalid(format!("P-AUC grid needs >= 2 points, got {}", self.points)));
        }
        if !(0.0..=1.0).contains(&self.empty_precision) {
            return Err(BemError::invalid("empty_precision must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub precision: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PAuc {
    pub value: f64,
    pub curve: Vec<CurvePoint>,
}

/// Strictly decreasing thresholds from 1 to 0.
///
/// The score-quantile grid places its interior points at nearest-rank
/// quantiles of `scores` and drops duplicates, so it can be shorter than
/// `points`.
pub fn threshold_grid(cfg: &PAucConfig, scores: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let last = (cfg.points - 1) as f64;
    let uniform = || (0..cfg.points).map(|j| 1.0 - j as f64 / last).collect::<Vec<_>>();
    match cfg.grid {
        GridKind::Uniform => Ok(uniform()),
        GridKind::ScoreQuantile => {
            let mut sorted: Vec<f64> = scores.iter().copied().filter(|s| *s > 0.0 && *s < 1.0).collect();
            if sorted.is_empty() {
                return Ok(uniform());
            }
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut grid = vec![1.0];
            for j in 1..cfg.points - 1 {
                let q = 1.0 - j as f64 / last;
                let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
                let v = sorted[idx];
                if v < *grid.last().expect("non-empty") {
                    grid.push(v);
                }
            }
            grid.push(0.0);
            Ok(grid)
        }
    }
}

/// P-AUC of `dets` against `gts`, with TP flags from IoU-0.50 greedy matching.
pub fn p_auc<T: Scalar>(dets: &[Detection<T>], gts: &[GroundTruthBox], cfg: &PAucConfig) -> Result<PAuc> {
    let tp = match_detections(dets, gts, IOU_THRESHOLD);
    p_auc_from_flags(dets, &tp, cfg)
}

pub(crate) fn p_auc_from_flags<T: Scalar>(dets: &[Detection<T>], tp: &[bool], cfg: &PAucConfig) -> Result<PAuc> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score.f64()).collect();
    let grid = threshold_grid(cfg, &scores)?;
    let order = score_order(dets);
    let mut curve = Vec::with_capacity(grid.len());
    let (mut k, mut ntp, mut nfp) = (0usize, 0usize, 0usize);
    for &tau in &grid {
        while k < order.len() && scores[order[k]] >= tau {
            if tp[order[k]] {
                ntp += 1;
            } else {
                nfp += 1;
            }
            k += 1;
        }
        let precision = if ntp + nfp == 0 { cfg.empty_precision } else { ntp as f64 / (ntp + nfp) as f64 };
        curve.push(CurvePoint { tau, precision, tp: ntp, fp: nfp });
    }
    let value = curve.windows(2).map(|w| w[0].precision * (w[0].tau - w[1].tau)).sum::<f64>();
    Ok(PAuc { value: value.clamp(0.0, 1.0), curve })
}
