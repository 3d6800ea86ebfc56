//! Fixed-camera scene generator: a static background, axis-aligned moving
//! rectangles with constant intensity, and clipped Gaussian sensor noise.
//!
//! Frames are quantized to 8-bit levels so that a stream written to PPM and
//! read back is identical to the in-memory stream.

use serde::{Deserialize, Serialize};

use super::rng::SimRng;
use crate::detection::{BBox, GroundTruthBox};
use crate::error::{BemError, Result};
use crate::image::Frame;
use crate::num::Scalar;

/// Background intensities lie in this range; objects sit outside it by at
/// least the contrast margin.
pub const BACKGROUND_RANGE: (f64, f64) = (0.3, 0.7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundKind {
    #[default]
    Gradient,
    TiledNoise,
}

/// Number of visible objects per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CountSchedule {
    Constant { count: usize },
    /// Linear from `from` at the first frame to `to` at the last, rounded.
    Ramp { from: usize, to: usize },
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
    /// `count` objects while `t mod period < on`, none otherwise.
    Pulse { count: usize, period: usize, on: usize },
}

impl Default for CountSchedule {
    fn default() -> Self {
        CountSchedule::Constant { count: 3 }
    }
}

impl CountSchedule {
    pub fn count_at(&self, t: usize, frame_count: usize) -> usize {
        match *self {
            CountSchedule::Constant { count } => count,
            CountSchedule::Ramp { from, to } => {
                if frame_count <= 1 {
                    return from;
                }
                let f = t as f64 / (frame_count - 1) as f64;
                (from as f64 + (to as f64 - from as f64) * f).round().max(0.0) as usize
            }
            CountSchedule::Sinusoid { mean, amplitude, period } => {
                let v = mean + amplitude * (std::f64::consts::TAU * t as f64 / period).sin();
                v.round().max(0.0) as usize
            }
            CountSchedule::Pulse { count, period, on } => {
                if period > 0 && t % period < on {
                    count
                } else {
                    0
                }
            }
        }
    }

    pub fn max_count(&self, frame_count: usize) -> usize {
        (0..frame_count).map(|t| self.count_at(t, frame_count)).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub frame_count: usize,
    pub background_kind: BackgroundKind,
    pub tile_size: usize,
    pub object_count_schedule: CountSchedule,
    /// Inclusive side-length range in pixels.
    pub object_size: [usize; 2],
    /// Pixels per frame; 0 keeps objects where they spawned.
    pub object_speed: f64,
    pub photometric_noise_sigma: f64,
    /// Minimum intensity gap between any object and the background.
    pub contrast_margin: f64,
    /// Intensity added to the whole background each frame.
    pub illumination_drift: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            width: 64,
            height: 64,
            channels: 3,
            frame_count: 100,
            background_kind: BackgroundKind::Gradient,
            tile_size: 8,
            object_count_schedule: CountSchedule::default(),
            object_size: [6, 12],
            object_speed: 1.0,
            photometric_noise_sigma: 0.01,
            contrast_margin: 0.1,
            illumination_drift: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return Err(BemError::config("scene dimensions and frame_count must be positive"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(BemError::config("channels must be 1 or 3"));
        }
        let [lo, hi] = self.object_size;
        if lo == 0 || lo > hi {
            return Err(BemError::config(format!("bad object_size range {:?}", self.object_size)));
        }
        if hi > self.width || hi > self.height {
            return Err(BemError::invalid(format!(
                "objects up to {hi}px do not fit a {}x{} frame",
                self.width, self.height
            )));
        }
        if !(self.photometric_noise_sigma >= 0.0) || !(self.object_speed >= 0.0) {
            return Err(BemError::config("noise sigma and object speed must be >= 0"));
        }
        let (blo, bhi) = BACKGROUND_RANGE;
        if !(self.contrast_margin > 0.0) || blo - self.contrast_margin < 0.0 || bhi + self.contrast_margin > 1.0 {
            return Err(BemError::config(format!("contrast_margin {} out of range", self.contrast_margin)));
        }
        if self.background_kind == BackgroundKind::TiledNoise && self.tile_size == 0 {
            return Err(BemError::config("tile_size must be >= 1"));
        }
        if let CountSchedule::Sinusoid { period, .. } = self.object_count_schedule {
            if !(period > 0.0) {
                return Err(BemError::config("sinusoid period must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Track {
    w: usize,
    h: usize,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    intensity: Vec<f64>,
}

impl Track {
    fn origin(&self, width: usize, height: usize) -> (usize, usize) {
        let x = (self.x.round().max(0.0) as usize).min(width - self.w);
        let y = (self.y.round().max(0.0) as usize).min(height - self.h);
        (x, y)
    }

    fn advance(&mut self, width: usize, height: usize) {
        fn bounce(p: &mut f64, v: &mut f64, max: f64) {
            *p += *v;
            if max <= 0.0 {
                *p = 0.0;
                return;
            }
            if *p < 0.0 {
                *p = -*p;
                *v = -*v;
            }
            if *p > max {
                *p = 2.0 * max - *p;
                *v = -*v;
            }
            *p = p.clamp(0.0, max);
        }
        bounce(&mut self.x, &mut self.vx, (width - self.w) as f64);
        bounce(&mut self.y, &mut self.vy, (height - self.h) as f64);
    }
}

#[derive(Debug, Clone)]
pub struct SceneStream<T> {
    pub frames: Vec<Frame<T>>,
    pub ground_truth: Vec<GroundTruthBox>,
    /// Noise-free background of frame 0 (before drift).
    pub true_background: Frame<T>,
    pub object_counts: Vec<usize>,
}

impl<T: Scalar> SceneStream<T> {
    pub fn ground_truth_for(&self, frame_id: u64) -> impl Iterator<Item = &GroundTruthBox> {
        self.ground_truth.iter().filter(move |g| g.frame_id == frame_id)
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn render_background(cfg: &SceneConfig, rng: &mut SimRng) -> Vec<f64> {
    let (w, h, ch) = (cfg.width, cfg.height, cfg.channels);
    let (lo, hi) = BACKGROUND_RANGE;
    let mut bg = vec![0.0; w * h * ch];
    match cfg.background_kind {
        BackgroundKind::Gradient => {
            let fx = |x: usize| if w > 1 { x as f64 / (w - 1) as f64 } else { 0.5 };
            let fy = |y: usize| if h > 1 { y as f64 / (h - 1) as f64 } else { 0.5 };
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        let t = match c {
                            0 => fx(x),
                            1 => fy(y),
                            _ => 0.5 * (fx(x) + 1.0 - fy(y)),
                        };
                        bg[(y * w + x) * ch + c] = lo + (hi - lo) * t;
                    }
                }
            }
        }
        BackgroundKind::TiledNoise => {
            let ts = cfg.tile_size;
            let (tw, th) = (w.div_ceil(ts), h.div_ceil(ts));
            let tiles: Vec<f64> = (0..tw * th * ch).map(|_| rng.range(lo, hi)).collect();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        bg[(y * w + x) * ch + c] = tiles[((y / ts) * tw + x / ts) * ch + c];
                    }
                }
            }
        }
    }
    bg
}

/// Renders the stream. Draw order: background tiles, then per track (w, h,
/// x, y, heading, dark/bright, per-channel intensity), then per frame the
/// noise of every pixel and channel in raster order.
pub fn generate_stream<T: Scalar>(cfg: &SceneConfig) -> Result<SceneStream<T>> {
    cfg.validate()?;
    let mut rng = SimRng::new(cfg.seed, 0);
    let (w, h, ch) = (cfg.width, cfg.height, cfg.channels);
    let bg = render_background(cfg, &mut rng);

    let (blo, bhi) = BACKGROUND_RANGE;
    let m = cfg.contrast_margin;
    let n_tracks = cfg.object_count_schedule.max_count(cfg.frame_count);
    let mut tracks: Vec<Track> = (0..n_tracks)
        .map(|_| {
            let tw = rng.int_inclusive(cfg.object_size[0], cfg.object_size[1]);
            let th = rng.int_inclusive(cfg.object_size[0], cfg.object_size[1]);
            let x = rng.range(0.0, (w - tw) as f64 + 1.0).min((w - tw) as f64);
            let y = rng.range(0.0, (h - th) as f64 + 1.0).min((h - th) as f64);
            let heading = rng.range(0.0, std::f64::consts::TAU);
            let bright = rng.uniform() < 0.5;
            let intensity = (0..ch)
                .map(|_| if bright { rng.range(bhi + m, 1.0) } else { rng.range(0.0, blo - m) })
                .collect();
            Track {
                w: tw,
                h: th,
                x,
                y,
                vx: cfg.object_speed * heading.cos(),
                vy: cfg.object_speed * heading.sin(),
                intensity,
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frame_count);
    let mut ground_truth = Vec::new();
    let mut object_counts = Vec::with_capacity(cfg.frame_count);
    for t in 0..cfg.frame_count {
        let drift = cfg.illumination_drift * t as f64;
        let mut px: Vec<f64> = bg.iter().map(|v| v + drift).collect();
        let n = cfg.object_count_schedule.count_at(t, cfg.frame_count);
        for track in &tracks[..n] {
            let (x0, y0) = track.origin(w, h);
            for y in y0..y0 + track.h {
                for x in x0..x0 + track.w {
                    let base = (y * w + x) * ch;
                    px[base..base + ch].copy_from_slice(&track.intensity);
                }
            }
            ground_truth.push(GroundTruthBox {
                frame_id: t as u64,
                bbox: BBox {
                    x1: x0 as f64,
                    y1: y0 as f64,
                    x2: (x0 + track.w) as f64,
                    y2: (y0 + track.h) as f64,
                },
                label: Some(0),
            });
        }
        if cfg.photometric_noise_sigma > 0.0 {
            for v in px.iter_mut() {
                *v += cfg.photometric_noise_sigma * rng.normal();
            }
        }
        let pixels = px.into_iter().map(|v| T::of(quantize(v))).collect();
        frames.push(Frame::new(t as u64, w, h, ch, pixels)?);
        object_counts.push(n);
        for track in tracks.iter_mut() {
            track.advance(w, h);
        }
    }
    let true_background = Frame::new(0, w, h, ch, bg.iter().map(|&v| T::of(v)).collect())?;
    Ok(SceneStream { frames, ground_truth, true_background, object_counts })
}
