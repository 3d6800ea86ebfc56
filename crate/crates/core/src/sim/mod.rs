//! Deterministic synthetic fixed-camera streams with ground truth and a
//! configurable detector.

mod detector;
mod rng;
mod scene;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use detector::{synth_detect, FpPlacement, SynthDetectorConfig};
pub use rng::{SimRng, RNG_VERSION};
pub use scene::{generate_stream, BackgroundKind, CountSchedule, SceneConfig, SceneStream, BACKGROUND_RANGE};

use crate::detection::{write_detections, write_ground_truth, Detection};
use crate::error::Result;
use crate::num::Scalar;
use crate::pnm;

/// Scene plus detector: the document read by `bem simulate --config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub scene: SceneConfig,
    pub detector: SynthDetectorConfig,
}

impl SimulationConfig {
    /// Sets both seeds; the detector draws from its own stream of the same seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.detector.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Simulation<T> {
    pub stream: SceneStream<T>,
    pub detections: Vec<Detection<f64>>,
}

pub fn simulate<T: Scalar>(cfg: &SimulationConfig) -> Result<Simulation<T>> {
    let stream = generate_stream::<T>(&cfg.scene)?;
    let detections = synth_detect(
        cfg.scene.width,
        cfg.scene.height,
        cfg.scene.frame_count,
        &stream.ground_truth,
        &cfg.detector,
    )?;
    Ok(Simulation { stream, detections })
}

#[derive(Serialize)]
struct SceneLock<'a> {
    rng: &'static str,
    #[serde(flatten)]
    config: &'a SimulationConfig,
}

/// Writes frames, `gt.jsonl`, `dets.jsonl`, `truth_background.ppm` and
/// `scene.lock.json` into `out`.
pub fn write_simulation<T: Scalar>(out: &Path, cfg: &SimulationConfig, sim: &Simulation<T>) -> Result<()> {
    fs::create_dir_all(out)?;
    for f in &sim.stream.frames {
        pnm::write_frame(&out.join(pnm::frame_file_name(f.frame_id, f.channels())), f)?;
    }
    write_ground_truth(&out.join("gt.jsonl"), &sim.stream.ground_truth)?;
    write_detections(&out.join("dets.jsonl"), &sim.detections)?;
    let bg_name = if sim.stream.true_background.channels() == 1 { "truth_background.pgm" } else { "truth_background.ppm" };
    pnm::write_frame(&out.join(bg_name), &sim.stream.true_background)?;
    let lock = SceneLock { rng: RNG_VERSION, config: cfg };
    fs::write(out.join("scene.lock.json"), serde_json::to_string_pretty(&lock)?)?;
    Ok(())
}
