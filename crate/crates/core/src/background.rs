//! Masked temporal background estimation and background-quality scoring.
//!
//! A window of `L` frames is averaged per pixel using only the frames whose
//! mask marks the pixel as background:
//!
//! ```text
//! B(p) = Σ_t I_t(p)·M_t(p) / Σ_t M_t(p)
//! ```
//!
//! Pixels that are foreground in every frame of the window (zero coverage)
//! fall back to the plain temporal mean and keep `coverage = 0` so callers can
//! tell them apart.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{BBox, Detection};
use crate::error::{BemError, Result};
use crate::image::{ForegroundMask, Frame, ResidualImage};
use crate::num::Scalar;
use crate::pnm;

pub const DEFAULT_WINDOW: usize = 25;
pub const DEFAULT_DILATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub ghost_threshold: f64,
    pub mae_weight: f64,
    pub ghost_weight: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig { ghost_threshold: 30.0 / 255.0, mae_weight: 1.0, ghost_weight: 1.0 }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ghost_threshold > 0.0 && self.ghost_threshold < 1.0) {
            return Err(BemError::config(format!(
                "ghost_threshold {} not in (0,1)",
                self.ghost_threshold
            )));
        }
        if !(self.mae_weight >= 0.0 && self.ghost_weight >= 0.0) {
            return Err(BemError::config("quality weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_size: usize,
    pub candidate_sizes: Vec<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { window_size: DEFAULT_WINDOW, candidate_sizes: vec![5, 10, 15, 20, 25, 30] }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(BemError::config("window size must be >= 1"));
        }
        if self.candidate_sizes.is_empty() || self.candidate_sizes.contains(&0) {
            return Err(BemError::config("candidate sizes must be non-empty and >= 1"));
        }
        Ok(())
    }
}

/// Background image estimated from frames `window_start..=window_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundEstimate<T> {
    /// The estimate itself; its `frame_id` is `window_end`.
    pub image: Frame<T>,
    pub window_start: u64,
    pub window_end: u64,
    /// Number of frames that contributed to each pixel (`Σ_t M_t(p)`).
    pub coverage: Vec<u32>,
}

impl<T: Scalar> BackgroundEstimate<T> {
    pub fn window_len(&self) -> usize {
        (self.window_end - self.window_start + 1) as usize
    }

    pub fn zero_coverage_pixels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c == 0).count()
    }
}

/// Rasterizes boxes into a foreground mask. A pixel is foreground when its
/// center lies inside a box grown by `dilation` pixels on every side.
pub fn mask_from_boxes<'a>(
    frame_id: u64,
    width: usize,
    height: usize,
    boxes: impl IntoIterator<Item = &'a BBox>,
    dilation: f64,
) -> Result<ForegroundMask> {
    if width == 0 || height == 0 {
        return Err(BemError::invalid(format!("degenerate frame {width}x{height}")));
    }
    if !(dilation >= 0.0) || !dilation.is_finite() {
        return Err(BemError::invalid(format!("dilation must be >= 0, got {dilation}")));
    }
    let mut values = vec![1u8; width * height];
    for b in boxes {
        let (x1, y1, x2, y2) = (b.x1 - dilation, b.y1 - dilation, b.x2 + dilation, b.y2 + dilation);
        // pixel i is covered when its center i + 0.5 lies in [lo, hi)
        let edge = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
        let (xs, xe) = (edge(x1, width), edge(x2, width));
        let (ys, ye) = (edge(y1, height), edge(y2, height));
        for y in ys..ye {
            values[y * width + xs..y * width + xe.max(xs)].fill(0);
        }
    }
    ForegroundMask::new(frame_id, width, height, values)
}

pub fn mask_from_detections<T: Scalar>(
    frame_id: u64,
    width: usize,
    height: usize,
    detections: &[Detection<T>],
    dilation: f64,
) -> Result<ForegroundMask> {
    mask_from_boxes(frame_id, width, height, detections.iter().map(|d| &d.bbox), dilation)
}

/// Masked temporal average of a window. Accumulates in `f64` in frame order.
pub fn masked_temporal_average<T: Scalar>(
    frames: &[Frame<T>],
    masks: &[ForegroundMask],
) -> Result<BackgroundEstimate<T>> {
    let first = frames.first().ok_or_else(|| BemError::invalid("empty frame window"))?;
    if frames.len() != masks.len() {
        return Err(BemError::invalid(format!(
            "{} frames but {} masks",
            frames.len(),
            masks.len()
        )));
    }
    let (w, h, ch) = first.dims();
    for (f, m) in frames.iter().zip(masks) {
        if f.dims() != (w, h, ch) || m.width() != w || m.height() != h {
            return Err(BemError::invalid(format!(
                "dimension mismatch at frame {}: expected {w}x{h}x{ch}",
                f.frame_id
            )));
        }
    }

    let n_pix = w * h;
    let mut masked_sum = vec![0.0f64; n_pix * ch];
    let mut plain_sum = vec![0.0f64; n_pix * ch];
    let mut coverage = vec![0u32; n_pix];
    for (f, m) in frames.iter().zip(masks) {
        let px = f.pixels();
        for p in 0..n_pix {
            let mv = m.values()[p] as f64;
            coverage[p] += m.values()[p] as u32;
            for c in 0..ch {
                let v = px[p * ch + c].f64();
                masked_sum[p * ch + c] += v * mv;
                plain_sum[p * ch + c] += v;
            }
        }
    }

    let len = frames.len() as f64;
    let mut pixels = Vec::with_capacity(n_pix * ch);
    for p in 0..n_pix {
        for c in 0..ch {
            let v = if coverage[p] > 0 {
                masked_sum[p * ch + c] / coverage[p] as f64
            } else {
                plain_sum[p * ch + c] / len
            };
            pixels.push(T::of(v.clamp(0.0, 1.0)));
        }
    }
    let window_start = first.frame_id;
    let window_end = frames[frames.len() - 1].frame_id;
    Ok(BackgroundEstimate {
        image: Frame::new(window_end, w, h, ch, pixels)?,
        window_start,
        window_end,
        coverage,
    })
}

/// `R = |mean_c I − mean_c B|` per pixel.
pub fn residual<T: Scalar>(frame: &Frame<T>, background: &Frame<T>) -> Result<ResidualImage> {
    if frame.dims() != background.dims() {
        return Err(BemError::invalid(format!(
            "residual: frame dims {:?} vs background {:?}",
            frame.dims(),
            background.dims()
        )));
    }
    let n = frame.width() * frame.height();
    let values = (0..n).map(|p| (frame.channel_mean(p) - background.channel_mean(p)).abs()).collect();
    Ok(ResidualImage { width: frame.width(), height: frame.height(), values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub mae: f64,
    pub ghost_rate: f64,
    pub combined: f64,
}

/// MAE and ghost rate of a residual over the background pixels of `bg_mask`.
pub fn background_quality(
    residual: &ResidualImage,
    bg_mask: &ForegroundMask,
    cfg: &QualityConfig,
) -> Result<QualityScore> {
    cfg.validate()?;
    if bg_mask.width() != residual.width || bg_mask.height() != residual.height {
        return Err(BemError::invalid("quality: mask and residual dimensions differ"));
    }
    let mut n_bg = 0usize;
    let mut sum = 0.0;
    let mut ghosts = 0usize;
    for (p, &r) in residual.values.iter().enumerate() {
        if bg_mask.is_background(p) {
            n_bg += 1;
            sum += r;
            if r > cfg.ghost_threshold {
                ghosts += 1;
            }
        }
    }
    if n_bg == 0 {
        return Err(BemError::EmptyBackground);
    }
    let mae = sum / n_bg as f64;
    let ghost_rate = ghosts as f64 / n_bg as f64;
    Ok(QualityScore { mae, ghost_rate, combined: cfg.mae_weight * mae + cfg.ghost_weight * ghost_rate })
}

/// One fixed-camera sequence with a mask per frame.
#[derive(Debug, Clone, Copy)]
pub struct MaskedSequence<'a, T> {
    pub frames: &'a [Frame<T>],
    pub masks: &'a [ForegroundMask],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    #[serde(rename = "L")]
    pub window: usize,
    pub mean_mae: f64,
    pub mean_ghost_rate: f64,
    pub mean_combined: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_window: usize,
    pub per_window: Vec<WindowScore>,
}

/// Scores one candidate window size. Windows are non-overlapping (stride `L`);
/// the background from window `w` is evaluated on every frame of window
/// `w + 1`, using that frame's own mask as the background pixel set. Frames
/// with no background pixels are skipped.
pub fn score_window_size<T: Scalar>(
    sequences: &[MaskedSequence<'_, T>],
    window: usize,
    qcfg: &QualityConfig,
) -> Result<WindowScore> {
    let (mut mae, mut ghost, mut combined, mut count) = (0.0, 0.0, 0.0, 0usize);
    for seq in sequences {
        let n_windows = seq.frames.len() / window;
        for w in 0..n_windows.saturating_sub(1) {
            let (s, e) = (w * window, (w + 1) * window);
            let bg = masked_temporal_average(&seq.frames[s..e], &seq.masks[s..e])?;
            let (mut wm, mut wg, mut wc, mut wn) = (0.0, 0.0, 0.0, 0usize);
            for t in e..e + window {
                let r = residual(&seq.frames[t], &bg.image)?;
                match background_quality(&r, &seq.masks[t], qcfg) {
                    Ok(q) => {
                        wm += q.mae;
                        wg += q.ghost_rate;
                        wc += q.combined;
                        wn += 1;
                    }
                    Err(BemError::EmptyBackground) => continue,
                    Err(e) => return Err(e),
                }
            }
            if wn > 0 {
                let n = wn as f64;
                mae += wm / n;
                ghost += wg / n;
                combined += wc / n;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(BemError::invalid(format!("no evaluable windows for L={window}")));
    }
    let n = count as f64;
    Ok(WindowScore {
        window,
        mean_mae: mae / n,
        mean_ghost_rate: ghost / n,
        mean_combined: combined / n,
        windows: count,
    })
}

/// Picks the window size with the lowest mean combined quality score; ties go
/// to the smaller size. Every sequence must hold at least two windows of the
/// largest candidate (one to estimate, one to evaluate).
pub fn sweep_window_size<T: Scalar>(
    sequences: &[MaskedSequence<'_, T>],
    wcfg: &WindowConfig,
    qcfg: &QualityConfig,
) -> Result<SweepResult> {
    wcfg.validate()?;
    qcfg.validate()?;
    if sequences.is_empty() {
        return Err(BemError::invalid("sweep needs at least one sequence"));
    }
    let max_l = *wcfg.candidate_sizes.iter().max().expect("validated non-empty");
    for (i, seq) in sequences.iter().enumerate() {
        if seq.frames.len() != seq.masks.len() {
            return Err(BemError::invalid(format!("sequence {i}: frame/mask count mismatch")));
        }
        let need = 2 * max_l;
        if seq.frames.len() < need {
            return Err(BemError::invalid(format!(
                "sequence {i} has {} frames; L={max_l} needs {need} ({} short)",
                seq.frames.len(),
                need - seq.frames.len()
            )));
        }
    }
    let per_window = wcfg
        .candidate_sizes
        .par_iter()
        .map(|&l| score_window_size(sequences, l, qcfg))
        .collect::<Result<Vec<_>>>()?;
    let best = per_window
        .iter()
        .min_by(|a, b| {
            a.mean_combined.total_cmp(&b.mean_combined).then(a.window.cmp(&b.window))
        })
        .expect("non-empty");
    Ok(SweepResult { best_window: best.window, per_window })
}

pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "L,mean_mae,mean_ghost_rate,mean_combined")?;
    for s in &result.per_window {
        writeln!(f, "{},{},{},{}", s.window, s.mean_mae, s.mean_ghost_rate, s.mean_combined)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSidecar {
    pub window_start: u64,
    pub window_end: u64,
    #[serde(rename = "L")]
    pub window: usize,
}

/// Writes the background image (PPM/PGM) and its `<stem>.json` sidecar.
pub fn write_background<T: Scalar>(image_path: &Path, bg: &BackgroundEstimate<T>) -> Result<()> {
    pnm::write_frame(image_path, &bg.image)?;
    let sidecar = BackgroundSidecar {
        window_start: bg.window_start,
        window_end: bg.window_end,
        window: bg.window_len(),
    };
    fs::write(image_path.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(id: u64, w: usize, h: usize, v: f64) -> Frame<f64> {
        Frame::filled(id, w, h, 1, v).unwrap()
    }

    #[test]
    fn mask_edge_cases() {
        let empty: Vec<Detection<f64>> = vec![];
        let m = mask_from_detections(0, 4, 4, &empty, 0.0).unwrap();
        assert_eq!(m.foreground_count(), 0);

        let full = [BBox::new(0.0, 0.0, 4.0, 4.0).unwrap()];
        let m = mask_from_boxes(0, 4, 4, &full, 0.0).unwrap();
        assert_eq!(m.background_count(), 0);

        let b = [BBox::new(1.0, 1.0, 3.0, 3.0).unwrap()];
        let m = mask_from_boxes(0, 4, 4, &b, 0.0).unwrap();
        // hand enumeration: pixels (1,1) (2,1) (1,2) (2,2)
        let expect: Vec<u8> = vec![1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1];
        assert_eq!(m.values(), expect.as_slice());

        let m = mask_from_boxes(0, 4, 4, &b, 1.0).unwrap();
        assert_eq!(m.foreground_count(), 16);

        assert!(mask_from_boxes(0, 4, 4, &b, -1.0).is_err());
        assert!(mask_from_boxes(0, 0, 4, &b, 0.0).is_err());
    }

    #[test]
    fn mask_clips_boxes_outside_frame() {
        let b = [BBox::new(-5.0, 2.0, 1.0, 100.0).unwrap()];
        let m = mask_from_boxes(0, 4, 4, &b, 0.0).unwrap();
        assert_eq!(m.foreground_count(), 2);
        let far = [BBox::new(10.0, 10.0, 12.0, 12.0).unwrap()];
        assert_eq!(mask_from_boxes(0, 4, 4, &far, 0.0).unwrap().foreground_count(), 0);
    }

    #[test]
    fn temporal_average_examples() {
        let frames = [gray(0, 1, 1, 0.10), gray(1, 1, 1, 0.20)];
        let ones = [ForegroundMask::all_background(0, 1, 1).unwrap(), ForegroundMask::all_background(1, 1, 1).unwrap()];
        let b = masked_temporal_average(&frames, &ones).unwrap();
        assert!((b.image.get(0, 0, 0) - 0.15).abs() < 1e-15);
        assert_eq!(b.coverage, vec![2]);

        let masks = [ForegroundMask::new(0, 1, 1, vec![0]).unwrap(), ForegroundMask::new(1, 1, 1, vec![1]).unwrap()];
        let b = masked_temporal_average(&frames, &masks).unwrap();
        assert_eq!(b.image.get(0, 0, 0), 0.20);
        assert_eq!((b.window_start, b.window_end, b.window_len()), (0, 1, 2));
    }

    #[test]
    fn zero_coverage_falls_back_to_plain_mean() {
        let frames = [gray(0, 1, 1, 0.2), gray(1, 1, 1, 0.4)];
        let zeros = [ForegroundMask::new(0, 1, 1, vec![0]).unwrap(), ForegroundMask::new(1, 1, 1, vec![0]).unwrap()];
        let b = masked_temporal_average(&frames, &zeros).unwrap();
        assert!((b.image.get(0, 0, 0) - 0.3).abs() < 1e-15);
        assert_eq!(b.coverage, vec![0]);
        assert_eq!(b.zero_coverage_pixels(), 1);
    }

    #[test]
    fn temporal_average_errors() {
        let none: [Frame<f64>; 0] = [];
        assert!(masked_temporal_average(&none, &[]).is_err());
        let frames = [gray(0, 2, 2, 0.1), gray(1, 2, 1, 0.1)];
        let masks = [ForegroundMask::all_background(0, 2, 2).unwrap(), ForegroundMask::all_background(1, 2, 2).unwrap()];
        assert!(masked_temporal_average(&frames, &masks).is_err());
        assert!(masked_temporal_average(&frames[..1], &masks).is_err());
    }

    #[test]
    fn residual_examples() {
        let i = gray(0, 2, 2, 0.5);
        assert!(residual(&i, &i).unwrap().values.iter().all(|&v| v == 0.0));
        let r = residual(&i, &gray(0, 2, 2, 0.3)).unwrap();
        assert!(r.values.iter().all(|&v| (v - 0.2).abs() < 1e-12));

        let i = Frame::new(0, 1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let b = Frame::new(0, 1, 1, 3, vec![0.3, 0.3, 0.3]).unwrap();
        assert!((residual(&i, &b).unwrap().values[0] - 0.1).abs() < 1e-12);
        assert!(residual(&i, &gray(0, 1, 1, 0.3)).is_err());
    }

    #[test]
    fn quality_examples() {
        let cfg = QualityConfig::default();
        let zero = ResidualImage { width: 4, height: 4, values: vec![0.0; 16] };
        let all = ForegroundMask::all_background(0, 4, 4).unwrap();
        let q = background_quality(&zero, &all, &cfg).unwrap();
        assert_eq!((q.mae, q.ghost_rate, q.combined), (0.0, 0.0, 0.0));

        let mut vals = vec![0.0; 12];
        vals[0] = 0.5;
        vals[1] = 0.5;
        vals[2] = 0.5;
        vals[10] = 0.9; // foreground
        vals[11] = 0.9; // foreground
        let r = ResidualImage { width: 12, height: 1, values: vals };
        let mut mv = vec![1u8; 12];
        mv[10] = 0;
        mv[11] = 0;
        let m = ForegroundMask::new(0, 12, 1, mv).unwrap();
        let q = background_quality(&r, &m, &cfg).unwrap();
        assert!((q.ghost_rate - 0.3).abs() < 1e-15);
        assert!((q.mae - 0.15).abs() < 1e-15);
        assert!((q.combined - 0.45).abs() < 1e-15);

        let none = ForegroundMask::new(0, 4, 4, vec![0; 16]).unwrap();
        assert!(matches!(background_quality(&zero, &none, &cfg), Err(BemError::EmptyBackground)));
    }

    #[test]
    fn sweep_single_candidate_and_short_stream() {
        let frames: Vec<_> = (0..50).map(|t| gray(t, 2, 2, 0.5)).collect();
        let masks: Vec<_> = (0..50).map(|t| ForegroundMask::all_background(t, 2, 2).unwrap()).collect();
        let seq = [MaskedSequence { frames: &frames, masks: &masks }];
        let wcfg = WindowConfig { window_size: 25, candidate_sizes: vec![25] };
        let r = sweep_window_size(&seq, &wcfg, &QualityConfig::default()).unwrap();
        assert_eq!(r.best_window, 25);

        let wcfg = WindowConfig { window_size: 25, candidate_sizes: vec![5, 30] };
        let err = sweep_window_size(&seq, &wcfg, &QualityConfig::default()).unwrap_err();
        assert!(err.to_string().contains("10 short"), "{err}");
    }

    #[test]
    fn sweep_tie_goes_to_smaller_window() {
        let frames: Vec<_> = (0..40).map(|t| gray(t, 2, 2, 0.5)).collect();
        let masks: Vec<_> = (0..40).map(|t| ForegroundMask::all_background(t, 2, 2).unwrap()).collect();
        let seq = [MaskedSequence { frames: &frames, masks: &masks }];
        let wcfg = WindowConfig { window_size: 5, candidate_sizes: vec![20, 10, 5] };
        let r = sweep_window_size(&seq, &wcfg, &QualityConfig::default()).unwrap();
        assert_eq!(r.best_window, 5);
        assert_eq!(r.per_window.len(), 3);
        assert_eq!(r.per_window[0].window, 20);
    }

    #[test]
    fn sidecar_written_next_to_image() {
        let dir = tempfile::tempdir().unwrap();
        let frames = [gray(3, 2, 2, 0.2), gray(4, 2, 2, 0.4)];
        let masks = [ForegroundMask::all_background(3, 2, 2).unwrap(), ForegroundMask::all_background(4, 2, 2).unwrap()];
        let bg = masked_temporal_average(&frames, &masks).unwrap();
        let p = dir.path().join("background_000003.pgm");
        write_background(&p, &bg).unwrap();
        let side: BackgroundSidecar =
            serde_json::from_str(&fs::read_to_string(p.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side, BackgroundSidecar { window_start: 3, window_end: 4, window: 2 });
    }
}
