//! End-to-end causal pipeline: background estimation, prototype memory and
//! re-scoring over a frame stream.
//!
//! Frames are consumed in windows of `L`. Frames of window `w + 1` are scored
//! against the prototype built from windows `0..=w`; the first window has no
//! prototype and passes through calibrated. Masks for background estimation
//! come from the detector's original boxes, never the re-scored ones. A
//! trailing partial window never refreshes the prototype.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::background::{
    mask_from_detections, masked_temporal_average, QualityConfig, DEFAULT_DILATION, DEFAULT_WINDOW,
};
use crate::bememb;
use crate::detection::{
    read_detections, read_ground_truth, write_rescored, Detection, GroundTruthBox, RescoredRecord,
};
use crate::embedding::{extract_embedding, Embedding, ExtractorSpec, FeatureExtractor, GridStats, PrototypeMemory};
use crate::error::{BemError, Result};
use crate::image::{ForegroundMask, Frame};
use crate::metrics::{
    binned_delta_pauc, evaluate, similarity_correlations, write_bins_csv, write_curve_csv, BinSpec,
    Correlations, DeltaBin, EvalReport, FrameStat, PAucConfig,
};
use crate::num::Scalar;
use crate::pnm;
use crate::rescore::{calibrate, rescore, CalibrationConfig, RescoreConfig};

/// Everything that controls processing, independent of file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub window: usize,
    /// Memory size `K`; `None` ties it to the window size.
    pub memory: Option<usize>,
    pub rescore: RescoreConfig,
    pub calibration: CalibrationConfig,
    pub quality: QualityConfig,
    pub extractor: ExtractorSpec,
    /// Raw score a detection needs to be masked out of the background.
    pub mask_threshold: f64,
    pub mask_dilation: f64,
    /// Never build a prototype: every frame passes through calibrated.
    pub disable_memory: bool,
    pub p_auc: PAucConfig,
    pub bins: BinSpec,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            window: DEFAULT_WINDOW,
            memory: None,
            rescore: RescoreConfig::default(),
            calibration: CalibrationConfig::default(),
            quality: QualityConfig::default(),
            extractor: ExtractorSpec::default(),
            mask_threshold: 0.25,
            mask_dilation: DEFAULT_DILATION,
            disable_memory: false,
            p_auc: PAucConfig::default(),
            bins: BinSpec::default(),
        }
    }
}

impl PipelineSettings {
    pub fn memory_size(&self) -> usize {
        self.memory.unwrap_or(self.window)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(BemError::config("window L must be >= 1"));
        }
        if self.memory == Some(0) {
            return Err(BemError::config("memory K must be >= 1"));
        }
        if !(self.mask_dilation >= 0.0) {
            return Err(BemError::config("mask_dilation must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return Err(BemError::config("mask_threshold must be in [0,1]"));
        }
        self.rescore.validate()?;
        self.calibration.validate()?;
        self.quality.validate()?;
        self.p_auc.validate().map_err(|e| BemError::config(e.to_string()))?;
        Ok(())
    }
}

/// Where frame and background embeddings come from.
pub enum EmbeddingSource<T: Scalar> {
    Extractor(Box<dyn FeatureExtractor<T> + Send + Sync>),
    /// Rows for every frame (by stream position) then one per complete window.
    Precomputed { frames: Vec<Embedding<T>>, backgrounds: Vec<Embedding<T>> },
}

impl<T: Scalar> EmbeddingSource<T> {
    pub fn grid(grid: usize) -> Self {
        EmbeddingSource::Extractor(Box::new(GridStats { grid }))
    }

    /// Resolves an extractor spec; `file:` specs need the stream length to
    /// split frame rows from background rows.
    pub fn from_spec(spec: &ExtractorSpec, n_frames: usize) -> Result<Self> {
        match spec {
            ExtractorSpec::Grid { grid } => Ok(Self::grid(*grid)),
            ExtractorSpec::File(path) => {
                let rows = bememb::read(path)?;
                if rows.len() < n_frames {
                    return Err(BemError::data(format!(
                        "{} has {} rows but the stream has {n_frames} frames",
                        path.display(),
                        rows.len()
                    )));
                }
                let mut rows: Vec<Embedding<T>> = rows.iter().map(Embedding::cast).collect();
                let backgrounds = rows.split_off(n_frames);
                Ok(EmbeddingSource::Precomputed { frames: rows, backgrounds })
            }
        }
    }

    fn frame(&self, frame: &Frame<T>, position: usize) -> Result<Embedding<T>> {
        match self {
            EmbeddingSource::Extractor(e) => extract_embedding(frame, e.as_ref()),
            EmbeddingSource::Precomputed { frames, .. } => frames
                .get(position)
                .cloned()
                .ok_or_else(|| BemError::data(format!("no precomputed embedding for frame {}", frame.frame_id))),
        }
    }

    fn background(&self, image: &Frame<T>, window_index: usize) -> Result<Embedding<T>> {
        match self {
            EmbeddingSource::Extractor(e) => extract_embedding(image, e.as_ref()),
            EmbeddingSource::Precomputed { backgrounds, .. } => backgrounds
                .get(window_index)
                .cloned()
                .ok_or_else(|| BemError::data(format!("no precomputed background embedding for window {window_index}"))),
        }
    }
}

/// Nanoseconds spent per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    /// Mask construction and background averaging.
    pub background_ns: u64,
    /// Frame and background embeddings, prototype update and similarity.
    pub embedding_ns: u64,
    /// Calibration, ranking and penalty.
    pub rescore_ns: u64,
}

impl StageTiming {
    pub fn total(&self) -> u64 {
        self.background_ns + self.embedding_ns + self.rescore_ns
    }

    fn add(&mut self, o: &StageTiming) {
        self.background_ns += o.background_ns;
        self.embedding_ns += o.embedding_ns;
        self.rescore_ns += o.rescore_ns;
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame_id: u64,
    /// `None` while no prototype exists.
    pub similarity: Option<f64>,
    /// Detector output as received.
    pub input: Vec<Detection<f64>>,
    pub calibrated: Vec<Detection<f64>>,
    pub rescored: Vec<Detection<f64>>,
    /// Per-frame stage costs; a window-closing frame also carries the
    /// background update for that window.
    pub timing: StageTiming,
    pub closed_window: bool,
}

/// Streaming state: current window buffer, prototype memory and cursor.
pub struct BemPipeline<T: Scalar> {
    settings: PipelineSettings,
    source: EmbeddingSource<T>,
    memory: PrototypeMemory<T>,
    frames: Vec<Frame<T>>,
    masks: Vec<ForegroundMask>,
    next_id: Option<u64>,
    dims: Option<(usize, usize, usize)>,
    position: usize,
    windows: usize,
    timing: StageTiming,
}

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

impl<T: Scalar> BemPipeline<T> {
    pub fn new(settings: PipelineSettings, source: EmbeddingSource<T>) -> Result<Self> {
        settings.validate()?;
        let memory = PrototypeMemory::new(settings.memory_size())?;
        Ok(BemPipeline {
            frames: Vec::with_capacity(settings.window),
            masks: Vec::with_capacity(settings.window),
            settings,
            source,
            memory,
            next_id: None,
            dims: None,
            position: 0,
            windows: 0,
            timing: StageTiming::default(),
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn has_prototype(&self) -> bool {
        self.memory.prototype().is_some()
    }

    pub fn windows_completed(&self) -> usize {
        self.windows
    }

    pub fn timing(&self) -> StageTiming {
        self.timing
    }

    /// Processes the next frame with its raw detections.
    pub fn push(&mut self, frame: Frame<T>, detections: &[Detection<f64>]) -> Result<FrameOutput> {
        if let Some(expected) = self.next_id {
            if frame.frame_id != expected {
                return Err(BemError::data(format!("missing frame id {expected} (got {})", frame.frame_id)));
            }
        }
        match self.dims {
            Some(d) if d != frame.dims() => {
                return Err(BemError::data(format!(
                    "frame {} has dims {:?}, stream has {d:?}",
                    frame.frame_id,
                    frame.dims()
                )))
            }
            _ => self.dims = Some(frame.dims()),
        }
        if let Some(d) = detections.iter().find(|d| d.frame_id != frame.frame_id) {
            return Err(BemError::invalid(format!(
                "detection for frame {} passed with frame {}",
                d.frame_id, frame.frame_id
            )));
        }
        let mut timing = StageTiming::default();
        let s = &self.settings;

        let mut similarity = None;
        if !s.disable_memory && self.has_prototype() {
            let t0 = Instant::now();
            let e = self.source.frame(&frame, self.position)?;
            similarity = self.memory.query(&e)?.map(|c| c.f64());
            timing.embedding_ns += elapsed_ns(t0);
        }

        let t0 = Instant::now();
        let scores: Vec<f64> = detections.iter().map(|d| d.score).collect();
        let calibrated_scores = calibrate(&scores, &s.calibration)?;
        let calibrated: Vec<Detection<f64>> =
            detections.iter().zip(&calibrated_scores).map(|(d, &c)| d.with_score(c)).collect();
        let rescored = rescore(detections, similarity, &s.rescore, &s.calibration)?;
        timing.rescore_ns += elapsed_ns(t0);

        let mut closed_window = false;
        if !s.disable_memory {
            let t0 = Instant::now();
            let masked: Vec<Detection<f64>> =
                detections.iter().filter(|d| d.score >= s.mask_threshold).copied().collect();
            let (w, h, _) = frame.dims();
            let mask = mask_from_detections(frame.frame_id, w, h, &masked, s.mask_dilation)?;
            self.frames.push(frame.clone());
            self.masks.push(mask);
            timing.background_ns += elapsed_ns(t0);

            if self.frames.len() == s.window {
                let t0 = Instant::now();
                let bg = masked_temporal_average(&self.frames, &self.masks)?;
                timing.background_ns += elapsed_ns(t0);
                let t0 = Instant::now();
                let e_b = self.source.background(&bg.image, self.windows)?;
                self.memory.update(e_b)?;
                timing.embedding_ns += elapsed_ns(t0);
                self.frames.clear();
                self.masks.clear();
                self.windows += 1;
                closed_window = true;
            }
        }

        self.timing.add(&timing);
        self.next_id = Some(frame.frame_id + 1);
        self.position += 1;
        Ok(FrameOutput {
            frame_id: frame.frame_id,
            similarity,
            input: detections.to_vec(),
            calibrated,
            rescored,
            timing,
            closed_window,
        })
    }
}

/// Result of running the pipeline over an in-memory stream.
#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub frames: Vec<FrameOutput>,
    pub windows: usize,
    pub cold_start_only: bool,
    pub timing: StageTiming,
}

impl StreamOutput {
    pub fn rescored(&self) -> Vec<Detection<f64>> {
        self.frames.iter().flat_map(|f| f.rescored.iter().copied()).collect()
    }

    pub fn calibrated(&self) -> Vec<Detection<f64>> {
        self.frames.iter().flat_map(|f| f.calibrated.iter().copied()).collect()
    }

    pub fn similarities(&self) -> Vec<(u64, Option<f64>)> {
        self.frames.iter().map(|f| (f.frame_id, f.similarity)).collect()
    }

    pub fn records(&self) -> Vec<RescoredRecord> {
        self.frames
            .iter()
            .flat_map(|f| {
                f.rescored.iter().zip(&f.input).map(move |(r, raw)| RescoredRecord {
                    frame_id: r.frame_id,
                    bbox: r.bbox.as_array(),
                    score: r.score,
                    label: r.label,
                    score_raw: raw.score,
                    similarity: f.similarity,
                })
            })
            .collect()
    }
}

/// Groups detections by frame, rejecting any that reference unknown frames.
pub fn group_by_frame<T: Scalar>(
    frames: &[Frame<T>],
    detections: &[Detection<f64>],
) -> Result<BTreeMap<u64, Vec<Detection<f64>>>> {
    let mut grouped: BTreeMap<u64, Vec<Detection<f64>>> = frames.iter().map(|f| (f.frame_id, Vec::new())).collect();
    for d in detections {
        grouped
            .get_mut(&d.frame_id)
            .ok_or_else(|| BemError::data(format!("detection references unknown frame {}", d.frame_id)))?
            .push(*d);
    }
    Ok(grouped)
}

pub fn run_stream<T: Scalar>(
    frames: &[Frame<T>],
    detections: &[Detection<f64>],
    settings: &PipelineSettings,
    source: EmbeddingSource<T>,
) -> Result<StreamOutput> {
    let grouped = group_by_frame(frames, detections)?;
    let mut pipe = BemPipeline::new(settings.clone(), source)?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        out.push(pipe.push(f.clone(), &grouped[&f.frame_id])?);
    }
    Ok(StreamOutput {
        frames: out,
        windows: pipe.windows_completed(),
        cold_start_only: !pipe.has_prototype(),
        timing: pipe.timing(),
    })
}

/// Baseline vs re-scored evaluation of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BemReport {
    pub frames: usize,
    /// Complete windows processed; unknown when evaluating files.
    pub windows: Option<usize>,
    pub cold_start_only: bool,
    pub baseline: EvalReport,
    pub bem: EvalReport,
    pub delta_p_auc: f64,
    pub delta_p_auc_frame_mean: f64,
    pub delta_map50: f64,
    /// Similarity vs object count and vs baseline per-frame P-AUC, over frames
    /// that have a similarity. `None` when undefined.
    pub correlations: Option<Correlations>,
    pub bins: Vec<DeltaBin>,
}

pub fn evaluate_stream(
    output: &StreamOutput,
    gts: &[GroundTruthBox],
    settings: &PipelineSettings,
) -> Result<BemReport> {
    let mut report =
        compare_detections(&output.calibrated(), &output.rescored(), gts, &output.similarities(), settings)?;
    report.frames = output.frames.len();
    report.windows = Some(output.windows);
    report.cold_start_only = output.cold_start_only;
    Ok(report)
}

/// Evaluates calibrated baseline and re-scored detections of the same frames.
/// `frames` lists frame ids with their similarity.
pub fn compare_detections(
    baseline: &[Detection<f64>],
    rescored: &[Detection<f64>],
    gts: &[GroundTruthBox],
    frames: &[(u64, Option<f64>)],
    settings: &PipelineSettings,
) -> Result<BemReport> {
    let base = evaluate(baseline, gts, frames, &settings.p_auc)?;
    let bem = evaluate(rescored, gts, frames, &settings.p_auc)?;
    let stats: Vec<FrameStat> = base
        .per_frame
        .iter()
        .filter_map(|f| {
            f.similarity.map(|c| FrameStat { similarity: c, object_count: f.object_count, p_auc: f.p_auc })
        })
        .collect();
    let correlations = match similarity_correlations(&stats) {
        Ok(c) => Some(c),
        Err(BemError::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    let bins = binned_delta_pauc(&base, &bem, &settings.bins)?;
    Ok(BemReport {
        frames: base.per_frame.len(),
        windows: None,
        cold_start_only: stats.is_empty(),
        delta_p_auc: bem.p_auc - base.p_auc,
        delta_p_auc_frame_mean: bem.p_auc_frame_mean - base.p_auc_frame_mean,
        delta_map50: bem.map50 - base.map50,
        correlations,
        bins,
        baseline: base,
        bem,
    })
}

/// File-level pipeline configuration: settings plus paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub settings: PipelineSettings,
    pub frames: PathBuf,
    pub detections: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    pub output: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| BemError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BemError::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        if !self.frames.is_dir() {
            return Err(BemError::config(format!("frames directory {} not found", self.frames.display())));
        }
        if !self.detections.is_file() {
            return Err(BemError::config(format!("detections file {} not found", self.detections.display())));
        }
        if let Some(gt) = &self.ground_truth {
            if !gt.is_file() {
                return Err(BemError::config(format!("ground-truth file {} not found", gt.display())));
            }
        }
        if let ExtractorSpec::File(p) = &self.settings.extractor {
            if !p.is_file() {
                return Err(BemError::config(format!("embedding file {} not found", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub output: StreamOutput,
    pub report: Option<BemReport>,
}

pub fn write_similarity_csv(path: &Path, sims: &[(u64, Option<f64>)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "frame_id,c")?;
    for (id, c) in sims {
        writeln!(f, "{id},{}", c.map(|c| c.to_string()).unwrap_or_default())?;
    }
    Ok(())
}

pub fn read_similarity_csv(path: &Path) -> Result<BTreeMap<u64, f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.split(',');
        let (Some(id), Some(c)) = (parts.next(), parts.next()) else {
            return Err(BemError::data(format!("{}:{}: expected frame_id,c", path.display(), i + 1)));
        };
        let id: u64 = id.trim().parse().map_err(|_| BemError::data(format!("{}:{}: bad frame id", path.display(), i + 1)))?;
        if c.trim().is_empty() {
            continue;
        }
        let c: f64 = c.trim().parse().map_err(|_| BemError::data(format!("{}:{}: bad similarity", path.display(), i + 1)))?;
        out.insert(id, c);
    }
    Ok(out)
}

/// Writes `report.json`, `curve.csv` (re-scored corpus curve) and `bins.csv`.
pub fn write_report(out: &Path, report: &BemReport) -> Result<()> {
    fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;
    write_curve_csv(&out.join("curve.csv"), &report.bem.curve)?;
    write_bins_csv(&out.join("bins.csv"), &report.bins)?;
    Ok(())
}

/// Runs the pipeline from files. Writes `rescored.jsonl`, `similarity.csv`,
/// `timing.json`, `run.lock.json` and, when ground truth is configured, the
/// evaluation report files.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let frames: Vec<Frame<f32>> = pnm::read_frame_dir(&cfg.frames)?;
    let dets = read_detections(&cfg.detections)?;
    let source = EmbeddingSource::from_spec(&cfg.settings.extractor, frames.len())?;
    let output = run_stream(&frames, &dets, &cfg.settings, source)?;

    fs::create_dir_all(&cfg.output)?;
    write_rescored(&cfg.output.join("rescored.jsonl"), &output.records())?;
    write_similarity_csv(&cfg.output.join("similarity.csv"), &output.similarities())?;
    let per_frame = if frames.is_empty() { 0 } else { output.timing.total() / frames.len() as u64 };
    let timing = serde_json::json!({
        "total": output.timing,
        "per_frame_mean_ns": per_frame,
        "frames": frames.len(),
    });
    fs::write(cfg.output.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    fs::write(cfg.output.join("run.lock.json"), serde_json::to_string_pretty(cfg)?)?;

    let report = match &cfg.ground_truth {
        Some(path) => {
            let gts = read_ground_truth(path)?;
            let report = evaluate_stream(&output, &gts, &cfg.settings)?;
            write_report(&cfg.output, &report)?;
            Some(report)
        }
        None => {
            if output.cold_start_only {
                let note = serde_json::json!({ "cold_start_only": true, "frames": frames.len() });
                fs::write(cfg.output.join("report.json"), serde_json::to_string_pretty(&note)?)?;
            }
            None
        }
    };
    Ok(PipelineRun { output, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ns: f64,
    pub p95_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadStats {
    pub repetitions: usize,
    pub frames: usize,
    /// Per-frame added latency with the background update spread evenly
    /// over the frames of its window.
    pub per_frame: LatencyStats,
    pub background: LatencyStats,
    pub embedding: LatencyStats,
    pub rescore: LatencyStats,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

fn stats(mut xs: Vec<f64>) -> LatencyStats {
    xs.sort_by(f64::total_cmp);
    LatencyStats { median_ns: percentile(&xs, 0.5), p95_ns: percentile(&xs, 0.95) }
}

/// Re-runs the in-memory pipeline `repetitions` times and reports per-frame
/// BEM latency, excluding file I/O.
pub fn measure_overhead<T: Scalar>(
    frames: &[Frame<T>],
    detections: &[Detection<f64>],
    settings: &PipelineSettings,
    make_source: impl Fn() -> Result<EmbeddingSource<T>>,
    repetitions: usize,
) -> Result<OverheadStats> {
    if repetitions < 3 {
        return Err(BemError::invalid(format!("need >= 3 repetitions, got {repetitions}")));
    }
    let (mut total, mut bg, mut emb, mut rs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..repetitions {
        let out = run_stream(frames, detections, settings, make_source()?)?;
        let l = settings.window;
        for chunk in out.frames.chunks(l) {
            let window_bg: u64 = chunk.iter().map(|f| f.timing.background_ns).sum();
            let amortized = window_bg as f64 / chunk.len() as f64;
            for f in chunk {
                let t = f.timing;
                bg.push(amortized);
                emb.push(t.embedding_ns as f64);
                rs.push(t.rescore_ns as f64);
                total.push(amortized + t.embedding_ns as f64 + t.rescore_ns as f64);
            }
        }
    }
    Ok(OverheadStats {
        repetitions,
        frames: frames.len(),
        per_frame: stats(total),
        background: stats(bg),
        embedding: stats(emb),
        rescore: stats(rs),
    })
}
