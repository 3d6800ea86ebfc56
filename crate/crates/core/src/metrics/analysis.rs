//! Similarity analyses over per-frame results: rank correlations of the
//! background similarity with object count and per-frame P-AUC, and P-AUC
//! gains binned by similarity.

use serde::{Deserialize, Serialize};

use super::report::EvalReport;
use crate::error::{BemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStat {
    pub similarity: f64,
    pub object_count: usize,
    pub p_auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    /// Spearman ρ of similarity vs object count.
    pub rho_count: f64,
    /// Spearman ρ of similarity vs per-frame P-AUC.
    pub rho_pauc: f64,
}

/// Average ranks (1-based), ties share the mean of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(BemError::invalid("spearman: series lengths differ"));
    }
    if xs.len() < 3 {
        return Err(BemError::UndefinedCorrelation(format!("need >= 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(BemError::invalid("spearman: non-finite value"));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(BemError::UndefinedCorrelation("constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn similarity_correlations(frames: &[FrameStat]) -> Result<Correlations> {
    let c: Vec<f64> = frames.iter().map(|f| f.similarity).collect();
    let count: Vec<f64> = frames.iter().map(|f| f.object_count as f64).collect();
    let pauc: Vec<f64> = frames.iter().map(|f| f.p_auc).collect();
    Ok(Correlations { rho_count: spearman(&c, &count)?, rho_pauc: spearman(&c, &pauc)? })
}

/// How similarity bins are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinSpec {
    /// `n` equal-width bins spanning the observed similarity range.
    Equal(usize),
    /// Explicit increasing edges; the last bin is closed on the right.
    Edges(Vec<f64>),
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec::Equal(10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBin {
    pub c_lo: f64,
    pub c_hi: f64,
    pub n_frames: usize,
    /// Mean per-frame `P-AUC(bem) − P-AUC(base)`; `None` for an empty bin.
    pub delta_pauc: Option<f64>,
}

/// Mean per-frame P-AUC change in each similarity bin. Similarities come from
/// the BEM report; frames without one (cold start) are left out.
pub fn binned_delta_pauc(baseline: &EvalReport, bem: &EvalReport, bins: &BinSpec) -> Result<Vec<DeltaBin>> {
    if baseline.per_frame.len() != bem.per_frame.len()
        || baseline.per_frame.iter().zip(&bem.per_frame).any(|(a, b)| a.frame_id != b.frame_id)
    {
        return Err(BemError::invalid("baseline and BEM reports cover different frames"));
    }
    let samples: Vec<(f64, f64)> = baseline
        .per_frame
        .iter()
        .zip(&bem.per_frame)
        .filter_map(|(a, b)| b.similarity.map(|c| (c, b.p_auc - a.p_auc)))
        .collect();

    let edges = match bins {
        BinSpec::Equal(n) => {
            if *n == 0 {
                return Err(BemError::invalid("need at least one bin"));
            }
            if samples.is_empty() {
                return Ok(Vec::new());
            }
            let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / *n as f64;
            (0..=*n).map(|i| if i == *n { hi } else { lo + width * i as f64 }).collect::<Vec<_>>()
        }
        BinSpec::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(BemError::invalid("bin edges must be >= 2 strictly increasing values"));
            }
            e.clone()
        }
    };
    let n_bins = edges.len() - 1;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(c, d) in &samples {
        let bin = if c == edges[n_bins] {
            Some(n_bins - 1)
        } else {
            edges.windows(2).position(|w| c >= w[0] && c < w[1])
        };
        if let Some(b) = bin {
            sums[b] += d;
            counts[b] += 1;
        }
    }
    Ok((0..n_bins)
        .map(|b| DeltaBin {
            c_lo: edges[b],
            c_hi: edges[b + 1],
            n_frames: counts[b],
            delta_pauc: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect())
}
