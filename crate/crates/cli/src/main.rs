//! `bem`: background embedding memory toolkit.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bem_core::background::{mask_from_detections, sweep_window_size, write_background, write_sweep_csv, MaskedSequence};
use bem_core::detection::{read_detection_records, read_detections, read_ground_truth, write_rescored, RescoredRecord};
use bem_core::metrics::{evaluate, write_curve_csv};
use bem_core::pipeline::{
    compare_detections, group_by_frame, measure_overhead, read_similarity_csv, run_pipeline, write_report,
    EmbeddingSource, PipelineConfig, PipelineSettings,
};
use bem_core::sim::{simulate, write_simulation, SimulationConfig};
use bem_core::{
    calibrate, masked_temporal_average, pnm, rescore, BemError, CalibrationMode, Detection, ForegroundMask, Frame,
    RankMode, Result, WindowConfig,
};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "bem", version, about = "Background embedding memory: training-free false-positive suppression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a seeded synthetic stream with ground truth and detections.
    Simulate {
        /// Simulation config (scene + detector); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scene and detector seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the masked background of every complete window.
    EstimateBg {
        #[command(flatten)]
        input: FrameInput,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the window size with the best background quality.
    SweepWindow {
        /// Frame directories, one per sequence.
        #[arg(long, required = true)]
        frames: Vec<PathBuf>,
        /// Detection files, one per sequence in the same order; omit for
        /// all-background masks.
        #[arg(long)]
        dets: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<usize>>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-score detections given per-frame similarities.
    Rescore {
        #[arg(long)]
        dets: PathBuf,
        /// CSV with `frame_id,c`; frames without a value pass through.
        #[arg(long, conflicts_with = "c")]
        similarity: Option<PathBuf>,
        /// One similarity for every frame.
        #[arg(long, allow_hyphen_values = true)]
        c: Option<f64>,
        #[command(flatten)]
        knobs: RescoreKnobs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate detections; compares against a baseline when one is known.
    Eval {
        /// Detections to evaluate; re-scored files carry their own baseline.
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Baseline detections (calibrated before use).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the causal pipeline from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure per-frame overhead of the pipeline stages.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FrameInput {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    dets: Option<PathBuf>,
}

#[derive(Args)]
struct RescoreKnobs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rank_mode: Option<RankMode>,
    #[arg(long)]
    calib: Option<CalibrationMode>,
    #[arg(long)]
    temperature: Option<f64>,
}

fn config_error(msg: impl Into<String>) -> BemError {
    BemError::InvalidConfig(msg.into())
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(config_error(format!("file {} not found", p.display())))
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(config_error(format!("directory {} not found", p.display())))
    }
}

fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn load_settings(path: Option<&Path>) -> Result<PipelineSettings> {
    let s: PipelineSettings = load_json(path)?;
    s.validate()?;
    Ok(s)
}

fn masks_for(frames: &[Frame<f32>], dets: Option<&Path>, s: &PipelineSettings) -> Result<Vec<ForegroundMask>> {
    let dets = match dets {
        Some(p) => read_detections(p)?,
        None => Vec::new(),
    };
    let grouped = group_by_frame(frames, &dets)?;
    frames
        .iter()
        .map(|f| {
            let kept: Vec<Detection<f64>> =
                grouped[&f.frame_id].iter().filter(|d| d.score >= s.mask_threshold).copied().collect();
            mask_from_detections(f.frame_id, f.width(), f.height(), &kept, s.mask_dilation)
        })
        .collect()
}

fn simulate_cmd(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SimulationConfig = load_json(config)?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    let sim = simulate::<f32>(&cfg)?;
    write_simulation(out, &cfg, &sim)?;
    println!(
        "wrote {} frames, {} ground-truth boxes, {} detections to {}",
        sim.stream.frames.len(),
        sim.stream.ground_truth.len(),
        sim.detections.len(),
        out.display()
    );
    Ok(())
}

fn estimate_bg_cmd(input: &FrameInput, config: Option<&Path>, window: Option<usize>, out: &Path) -> Result<()> {
    require_dir(&input.frames)?;
    if let Some(d) = &input.dets {
        require_file(d)?;
    }
    let mut s = load_settings(config)?;
    if let Some(l) = window {
        s.window = l;
        s.validate()?;
    }
    let frames: Vec<Frame<f32>> = pnm::read_frame_dir(&input.frames)?;
    let masks = masks_for(&frames, input.dets.as_deref(), &s)?;
    fs::create_dir_all(out)?;
    let mut written = 0;
    for (fw, mw) in frames.chunks_exact(s.window).zip(masks.chunks_exact(s.window)) {
        let bg = masked_temporal_average(fw, mw)?;
        let name = pnm::frame_file_name(bg.window_start, bg.image.channels()).replace("frame_", "background_");
        write_background(&out.join(name), &bg)?;
        written += 1;
    }
    println!("wrote {written} backgrounds (L={}) to {}", s.window, out.display());
    Ok(())
}

fn sweep_cmd(frames: &[PathBuf], dets: &[PathBuf], candidates: Option<Vec<usize>>, config: Option<&Path>, out: &Path) -> Result<()> {
    if !dets.is_empty() && dets.len() != frames.len() {
        return Err(config_error(format!("{} frame directories but {} detection files", frames.len(), dets.len())));
    }
    frames.iter().try_for_each(|p| require_dir(p))?;
    dets.iter().try_for_each(|p| require_file(p))?;
    let s = load_settings(config)?;
    let wcfg = WindowConfig { candidate_sizes: candidates.unwrap_or_else(|| WindowConfig::default().candidate_sizes), ..Default::default() };
    wcfg.validate()?;
    let mut loaded = Vec::new();
    for (i, dir) in frames.iter().enumerate() {
        let f: Vec<Frame<f32>> = pnm::read_frame_dir(dir)?;
        let m = masks_for(&f, dets.get(i).map(PathBuf::as_path), &s)?;
        loaded.push((f, m));
    }
    let seqs: Vec<MaskedSequence<'_, f32>> = loaded.iter().map(|(f, m)| MaskedSequence { frames: f, masks: m }).collect();
    let res = sweep_window_size(&seqs, &wcfg, &s.quality)?;
    fs::create_dir_all(out)?;
    write_sweep_csv(&out.join("sweep.csv"), &res)?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&res)?)?;
    println!("best L={}", res.best_window);
    Ok(())
}

fn rescore_cmd(
    dets: &Path,
    similarity: Option<&Path>,
    c: Option<f64>,
    knobs: &RescoreKnobs,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    require_file(dets)?;
    if let Some(p) = similarity {
        require_file(p)?;
    }
    let mut s = load_settings(config)?;
    let r = &mut s.rescore;
    r.alpha = knobs.alpha.unwrap_or(r.alpha);
    r.gamma = knobs.gamma.unwrap_or(r.gamma);
    r.delta = knobs.delta.unwrap_or(r.delta);
    r.rank_mode = knobs.rank_mode.unwrap_or(r.rank_mode);
    s.calibration.mode = knobs.calib.unwrap_or(s.calibration.mode);
    s.calibration.temperature = knobs.temperature.unwrap_or(s.calibration.temperature);
    s.validate()?;
    if let Some(c) = c {
        if !(-1.0..=1.0).contains(&c) {
            return Err(config_error(format!("--c {c} outside [-1, 1]")));
        }
    }
    let sims: BTreeMap<u64, f64> = match similarity {
        Some(p) => read_similarity_csv(p)?,
        None => BTreeMap::new(),
    };
    let input = read_detections(dets)?;
    let mut by_frame: BTreeMap<u64, Vec<Detection<f64>>> = BTreeMap::new();
    for d in &input {
        by_frame.entry(d.frame_id).or_default().push(*d);
    }
    let mut rows = Vec::with_capacity(input.len());
    for (frame, ds) in &by_frame {
        let c = c.or_else(|| sims.get(frame).copied());
        let out = rescore(ds, c, &s.rescore, &s.calibration)?;
        rows.extend(out.iter().zip(ds).map(|(r, raw)| RescoredRecord {
            frame_id: r.frame_id,
            bbox: r.bbox.as_array(),
            score: r.score,
            label: r.label,
            score_raw: raw.score,
            similarity: c,
        }));
    }
    fs::create_dir_all(out)?;
    write_rescored(&out.join("rescored.jsonl"), &rows)?;
    println!("re-scored {} detections in {} frames", rows.len(), by_frame.len());
    Ok(())
}

fn eval_cmd(dets: &Path, gt: &Path, baseline: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<()> {
    require_file(dets)?;
    require_file(gt)?;
    if let Some(b) = baseline {
        require_file(b)?;
    }
    let s = load_settings(config)?;
    let records = read_detection_records(dets)?;
    let evaluated = records.iter().map(|r| r.to_detection()).collect::<Result<Vec<_>>>()?;
    let gts = read_ground_truth(gt)?;

    let mut sims: BTreeMap<u64, Option<f64>> = BTreeMap::new();
    for r in &records {
        let e = sims.entry(r.frame_id).or_insert(None);
        if e.is_none() {
            *e = r.similarity;
        }
    }
    for g in &gts {
        sims.entry(g.frame_id).or_insert(None);
    }
    let frames: Vec<(u64, Option<f64>)> = sims.into_iter().collect();

    let base = match baseline {
        Some(p) => Some(read_detections(p)?),
        None if !records.is_empty() && records.iter().all(|r| r.score_raw.is_some()) => Some(
            records
                .iter()
                .zip(&evaluated)
                .map(|(r, d)| d.with_score(r.score_raw.expect("checked")))
                .collect(),
        ),
        None => None,
    };
    fs::create_dir_all(out)?;
    match base {
        Some(b) => {
            let scores: Vec<f64> = b.iter().map(|d| d.score).collect();
            let cal = calibrate(&scores, &s.calibration)?;
            let b: Vec<Detection<f64>> = b.iter().zip(cal).map(|(d, c)| d.with_score(c)).collect();
            let report = compare_detections(&b, &evaluated, &gts, &frames, &s)?;
            write_report(out, &report)?;
            println!(
                "AP50 {:.4} ({:+.4})  P-AUC {:.4} ({:+.4})",
                report.bem.map50, report.delta_map50, report.bem.p_auc, report.delta_p_auc
            );
        }
        None => {
            let report = evaluate(&evaluated, &gts, &frames, &s.p_auc)?;
            fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            write_curve_csv(&out.join("curve.csv"), &report.curve)?;
            println!("AP50 {:.4}  P-AUC {:.4}", report.map50, report.p_auc);
        }
    }
    Ok(())
}

fn pipeline_cmd(config: &Path, out: Option<PathBuf>) -> Result<()> {
    require_file(config)?;
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(o) = out {
        cfg.output = o;
    }
    let run = run_pipeline(&cfg)?;
    match &run.report {
        Some(r) => println!(
            "{} frames, {} windows; AP50 {:.4} ({:+.4}), P-AUC {:.4} ({:+.4})",
            r.frames,
            r.windows.unwrap_or(0),
            r.bem.map50,
            r.delta_map50,
            r.bem.p_auc,
            r.delta_p_auc
        ),
        None => println!("{} frames, {} windows", run.output.frames.len(), run.output.windows),
    }
    Ok(())
}

fn bench_cmd(config: &Path, reps: usize, out: Option<PathBuf>) -> Result<()> {
    require_file(config)?;
    let cfg = PipelineConfig::load(config)?;
    cfg.validate()?;
    if reps < 3 {
        return Err(config_error(format!("--reps must be >= 3, got {reps}")));
    }
    let frames: Vec<Frame<f32>> = pnm::read_frame_dir(&cfg.frames)?;
    let dets = read_detections(&cfg.detections)?;
    let stats = measure_overhead(
        &frames,
        &dets,
        &cfg.settings,
        || EmbeddingSource::from_spec(&cfg.settings.extractor, frames.len()),
        reps,
    )?;
    let out = out.unwrap_or(cfg.output);
    fs::create_dir_all(&out)?;
    fs::write(out.join("overhead.json"), serde_json::to_string_pretty(&stats)?)?;
    println!(
        "per-frame overhead: median {:.1} us, p95 {:.1} us ({} frames x {} reps)",
        stats.per_frame.median_ns / 1e3,
        stats.per_frame.p95_ns / 1e3,
        stats.frames,
        stats.repetitions
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => simulate_cmd(config.as_deref(), &out, seed),
        Command::EstimateBg { input, config, window, out } => estimate_bg_cmd(&input, config.as_deref(), window, &out),
        Command::SweepWindow { frames, dets, candidates, config, out } => {
            sweep_cmd(&frames, &dets, candidates, config.as_deref(), &out)
        }
        Command::Rescore { dets, similarity, c, knobs, config, out } => {
            rescore_cmd(&dets, similarity.as_deref(), c, &knobs, config.as_deref(), &out)
        }
        Command::Eval { dets, gt, baseline, config, out } => {
            eval_cmd(&dets, &gt, baseline.as_deref(), config.as_deref(), &out)
        }
        Command::Pipeline { config, out } => pipeline_cmd(&config, out),
        Command::Bench { config, reps, out } => bench_cmd(&config, reps, out),
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("BEM_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| config_error(format!("BEM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| BemError::Internal(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
