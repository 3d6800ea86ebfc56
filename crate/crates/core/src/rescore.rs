//! Similarity-driven, rank-weighted logit re-scoring.
//!
//! For a frame with background similarity `c` and calibrated scores `s̃`:
//!
//! ```text
//! z'_i = logit(s̃_i) − (α/γ) · w_i / max(c, δ)
//! s'_i = σ(z'_i)
//! ```
//!
//! The penalty is never negative, so re-scoring only ever lowers a score.
//! Frames without a similarity (no prototype yet) pass through calibrated.

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{BemError, Result};
use crate::num::{logit, sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    None,
    #[default]
    Clip,
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub clip_epsilon: f64,
    pub temperature: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { mode: CalibrationMode::Clip, clip_epsilon: 1e-6, temperature: 1.0 }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 0.5) {
            return Err(BemError::config(format!("clip_epsilon {} not in (0, 0.5)", self.clip_epsilon)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(BemError::config(format!("temperature {} must be > 0", self.temperature)));
        }
        Ok(())
    }
}

/// Which end of the confidence ranking receives the largest weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// `w = (r − 1)/(N + 1)`: the most confident proposal is never penalized.
    #[default]
    Intent,
    /// `w = (N − r)/(N + 1)`: the formula as printed, heaviest on the top proposal.
    Literal,
}

impl std::str::FromStr for RankMode {
    type Err = BemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(RankMode::Intent),
            "literal" => Ok(RankMode::Literal),
            _ => Err(BemError::config(format!("unknown rank mode {s:?}"))),
        }
    }
}

impl std::str::FromStr for CalibrationMode {
    type Err = BemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CalibrationMode::None),
            "clip" => Ok(CalibrationMode::Clip),
            "temperature" => Ok(CalibrationMode::Temperature),
            _ => Err(BemError::config(format!("unknown calibration mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub rank_mode: RankMode,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig { alpha: 0.1, gamma: 0.001, delta: 1e-6, rank_mode: RankMode::Intent }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(BemError::config(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(BemError::config(format!("gamma {} must be > 0", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(BemError::config(format!("delta {} not in (0, 1]", self.delta)));
        }
        Ok(())
    }
}

fn clip<T: Scalar>(s: T, eps: T) -> T {
    s.max(eps).min(T::one() - eps)
}

pub fn calibrate_one<T: Scalar>(s: T, cfg: &CalibrationConfig) -> Result<T> {
    if !s.is_finite() {
        return Err(BemError::invalid(format!("non-finite score {s}")));
    }
    let eps = T::of(cfg.clip_epsilon);
    Ok(match cfg.mode {
        CalibrationMode::None | CalibrationMode::Clip => clip(s, eps),
        CalibrationMode::Temperature => {
            let z = logit(clip(s, eps)) / T::of(cfg.temperature);
            // sharpening (T < 1) can saturate; keep the logit finite
            clip(sigmoid(z), eps)
        }
    })
}

/// Calibrated confidences `s̃` with finite logits.
pub fn calibrate<T: Scalar>(scores: &[T], cfg: &CalibrationConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    scores.iter().map(|&s| calibrate_one(s, cfg)).collect()
}

/// 1-based descending-confidence ranks; equal scores rank by input index.
pub fn confidence_ranks<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Rank weights in `[0, 1)` for the given ranks (a permutation of `1..=N`).
pub fn rank_weights<T: Scalar>(ranks: &[usize], mode: RankMode) -> Result<Vec<T>> {
    let n = ranks.len();
    let mut seen = vec![false; n];
    for &r in ranks {
        if r == 0 || r > n || std::mem::replace(&mut seen[r - 1], true) {
            return Err(BemError::invalid(format!("ranks are not a permutation of 1..={n}")));
        }
    }
    let denom = T::of((n + 1) as f64);
    Ok(ranks
        .iter()
        .map(|&r| {
            let num = match mode {
                RankMode::Intent => r - 1,
                RankMode::Literal => n - r,
            };
            T::of(num as f64) / denom
        })
        .collect())
}

/// Applies the penalty to one calibrated score. A zero penalty returns `s̃`
/// unchanged; otherwise the result is clamped into `[min_positive, s̃]` so the
/// floating-point round trip can never raise a score or reach exactly zero.
pub fn penalize<T: Scalar>(calibrated: T, weight: T, similarity: T, cfg: &RescoreConfig) -> Result<T> {
    let penalty = T::of(cfg.alpha) / T::of(cfg.gamma) * weight / similarity.max(T::of(cfg.delta));
    if !penalty.is_finite() || penalty < T::zero() {
        return Err(BemError::Internal(format!("penalty {penalty} is not a finite non-negative value")));
    }
    if penalty == T::zero() {
        return Ok(calibrated);
    }
    let s = sigmoid(logit(calibrated) - penalty);
    Ok(s.min(calibrated).max(T::min_positive_value()))
}

/// Re-scores one frame's scores. `similarity = None` means no prototype
/// exists yet and the calibrated scores pass through.
pub fn rescore_scores<T: Scalar>(
    scores: &[T],
    similarity: Option<T>,
    rcfg: &RescoreConfig,
    ccfg: &CalibrationConfig,
) -> Result<Vec<T>> {
    rcfg.validate()?;
    let calibrated = calibrate(scores, ccfg)?;
    let Some(c) = similarity else {
        return Ok(calibrated);
    };
    if !(c >= -T::one() && c <= T::one()) {
        return Err(BemError::invalid(format!("similarity {c} outside [-1, 1]")));
    }
    let ranks = confidence_ranks(&calibrated);
    let weights: Vec<T> = rank_weights(&ranks, rcfg.rank_mode)?;
    calibrated.iter().zip(&weights).map(|(&s, &w)| penalize(s, w, c, rcfg)).collect()
}

/// Re-scores all detections of one frame; boxes and order are unchanged.
pub fn rescore<T: Scalar>(
    detections: &[Detection<T>],
    similarity: Option<T>,
    rcfg: &RescoreConfig,
    ccfg: &CalibrationConfig,
) -> Result<Vec<Detection<T>>> {
    let scores: Vec<T> = detections.iter().map(|d| d.score).collect();
    let rescored = rescore_scores(&scores, similarity, rcfg, ccfg)?;
    Ok(detections.iter().zip(rescored).map(|(d, s)| d.with_score(s)).collect())
}
