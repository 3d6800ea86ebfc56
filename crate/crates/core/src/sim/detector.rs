//! Synthetic detector with controllable recall, score distributions and
//! false-positive density.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rng::SimRng;
use crate::detection::{BBox, Detection, GroundTruthBox};
use crate::error::{BemError, Result};
use crate::metrics::iou;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpPlacement {
    /// False boxes never intersect a ground-truth box.
    #[default]
    BackgroundOnly,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDetectorConfig {
    pub seed: u64,
    pub tp_recall: f64,
    /// Beta(a, b) for true-positive scores.
    pub tp_score_params: [f64; 2],
    /// Beta(a, b) for false-positive scores.
    pub fp_score_params: [f64; 2],
    /// Poisson mean of false positives per frame, before the density term.
    pub fp_rate_per_frame: f64,
    /// Extra mean false positives: `fp_rate_per_object · n^fp_density_exponent`
    /// for a frame with `n` objects.
    pub fp_rate_per_object: f64,
    pub fp_density_exponent: f64,
    pub fp_placement: FpPlacement,
    /// Inclusive false-positive side-length range in pixels.
    pub fp_size: [usize; 2],
    pub box_jitter_sigma: f64,
}

impl Default for SynthDetectorConfig {
    fn default() -> Self {
        SynthDetectorConfig {
            seed: 0,
            tp_recall: 0.95,
            tp_score_params: [8.0, 2.0],
            fp_score_params: [2.0, 5.0],
            fp_rate_per_frame: 1.0,
            fp_rate_per_object: 0.0,
            fp_density_exponent: 1.0,
            fp_placement: FpPlacement::BackgroundOnly,
            fp_size: [6, 12],
            box_jitter_sigma: 0.5,
        }
    }
}

impl SynthDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tp_recall) {
            return Err(BemError::config("tp_recall must be in [0,1]"));
        }
        if self.tp_score_params.iter().chain(&self.fp_score_params).any(|p| !(*p > 0.0)) {
            return Err(BemError::config("Beta parameters must be > 0"));
        }
        if !(self.fp_rate_per_frame >= 0.0) || !(self.fp_rate_per_object >= 0.0) || !(self.fp_density_exponent >= 0.0)
        {
            return Err(BemError::config("false-positive rates must be >= 0"));
        }
        if self.fp_size[0] == 0 || self.fp_size[0] > self.fp_size[1] {
            return Err(BemError::config(format!("bad fp_size range {:?}", self.fp_size)));
        }
        if !(self.box_jitter_sigma >= 0.0) {
            return Err(BemError::config("box_jitter_sigma must be >= 0"));
        }
        Ok(())
    }

    pub fn fp_rate(&self, objects: usize) -> f64 {
        let density = if objects == 0 { 0.0 } else { (objects as f64).powf(self.fp_density_exponent) };
        self.fp_rate_per_frame + self.fp_rate_per_object * density
    }
}

const PLACEMENT_ATTEMPTS: usize = 100;

fn jitter(b: &BBox, sigma: f64, width: f64, height: f64, rng: &mut SimRng) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let j = BBox {
        x1: (b.x1 + sigma * rng.normal()).clamp(0.0, width),
        y1: (b.y1 + sigma * rng.normal()).clamp(0.0, height),
        x2: (b.x2 + sigma * rng.normal()).clamp(0.0, width),
        y2: (b.y2 + sigma * rng.normal()).clamp(0.0, height),
    };
    if j.x1 < j.x2 && j.y1 < j.y2 {
        j
    } else {
        *b
    }
}

/// Detections for frames `0..frame_count` of a `width × height` stream.
///
/// Per frame: each ground-truth box, in order, draws its recall coin and, if
/// emitted, four jitter normals and a Beta score; then a Poisson count of
/// false positives each draws a size, a position (retried up to 100 times for
/// background-only placement, dropped if none fits) and a Beta score.
pub fn synth_detect(
    width: usize,
    height: usize,
    frame_count: usize,
    ground_truth: &[GroundTruthBox],
    cfg: &SynthDetectorConfig,
) -> Result<Vec<Detection<f64>>> {
    cfg.validate()?;
    let mut rng = SimRng::new(cfg.seed, 1);
    let mut by_frame: BTreeMap<u64, Vec<&GroundTruthBox>> = BTreeMap::new();
    for g in ground_truth {
        by_frame.entry(g.frame_id).or_default().push(g);
    }
    let (wf, hf) = (width as f64, height as f64);
    let mut out = Vec::new();
    for t in 0..frame_count as u64 {
        let gts = by_frame.get(&t).map(Vec::as_slice).unwrap_or(&[]);
        for g in gts {
            if rng.uniform() >= cfg.tp_recall {
                continue;
            }
            let bbox = jitter(&g.bbox, cfg.box_jitter_sigma, wf, hf, &mut rng);
            let [a, b] = cfg.tp_score_params;
            let score = rng.beta(a, b);
            out.push(Detection { frame_id: t, bbox, score, label: g.label.or(Some(0)) });
        }
        let n_fp = rng.poisson(cfg.fp_rate(gts.len()));
        for _ in 0..n_fp {
            let fw = rng.int_inclusive(cfg.fp_size[0].min(width), cfg.fp_size[1].min(width));
            let fh = rng.int_inclusive(cfg.fp_size[0].min(height), cfg.fp_size[1].min(height));
            let mut placed = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let x = rng.range(0.0, (width - fw) as f64 + 1.0).floor().min((width - fw) as f64);
                let y = rng.range(0.0, (height - fh) as f64 + 1.0).floor().min((height - fh) as f64);
                let b = BBox { x1: x, y1: y, x2: x + fw as f64, y2: y + fh as f64 };
                let clear = cfg.fp_placement == FpPlacement::Uniform
                    || gts.iter().all(|g| iou(&g.bbox, &b) == 0.0);
                if clear {
                    placed = Some(b);
                    break;
                }
            }
            let [a, b] = cfg.fp_score_params;
            let score = rng.beta(a, b);
            if let Some(bbox) = placed {
                out.push(Detection { frame_id: t, bbox, score, label: Some(0) });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(frame: u64, x: f64) -> GroundTruthBox {
        GroundTruthBox { frame_id: frame, bbox: BBox { x1: x, y1: 0.0, x2: x + 8.0, y2: 8.0 }, label: Some(0) }
    }

    #[test]
    fn perfect_detector_reproduces_gt() {
        let gts = vec![gt(0, 0.0), gt(0, 20.0), gt(2, 5.0)];
        let cfg = SynthDetectorConfig { tp_recall: 1.0, fp_rate_per_frame: 0.0, box_jitter_sigma: 0.0, ..Default::default() };
        let d = synth_detect(64, 64, 3, &gts, &cfg).unwrap();
        assert_eq!(d.len(), 3);
        for (d, g) in d.iter().zip(&gts) {
            assert_eq!((d.frame_id, d.bbox), (g.frame_id, g.bbox));
            assert!(d.score > 0.0 && d.score < 1.0);
        }
    }

    #[test]
    fn background_only_fps_avoid_objects() {
        let gts: Vec<_> = (0..50).map(|t| gt(t, 10.0)).collect();
        let cfg = SynthDetectorConfig { tp_recall: 0.0, fp_rate_per_frame: 3.0, ..Default::default() };
        let d = synth_detect(64, 64, 50, &gts, &cfg).unwrap();
        assert!(!d.is_empty());
        for det in &d {
            assert_eq!(iou(&det.bbox, &gts[det.frame_id as usize].bbox), 0.0);
            assert!(det.bbox.x2 <= 64.0 && det.bbox.y2 <= 64.0);
        }
    }

    #[test]
    fn density_term() {
        let cfg = SynthDetectorConfig { fp_rate_per_frame: 0.5, fp_rate_per_object: 0.1, fp_density_exponent: 2.0, ..Default::default() };
        assert_eq!(cfg.fp_rate(0), 0.5);
        assert!((cfg.fp_rate(10) - 10.5).abs() < 1e-12);
        assert!(SynthDetectorConfig { tp_score_params: [0.0, 1.0], ..Default::default() }.validate().is_err());
    }
}
