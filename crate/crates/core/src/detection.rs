//! Detections, ground truth and their JSON Lines encoding.
//!
//! One object per line:
//! `{"frame_id":int,"box":[x1,y1,x2,y2],"score":float,"label":int?}`.
//! Rescored output additionally carries `"score_raw"` and `"similarity"`
//! (`null` for frames scored before a background prototype existed).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::num::Scalar;

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(BemError::invalid(format!("invalid box {:?}", self.as_array())));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// A scored proposal emitted by a detector for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub frame_id: u64,
    pub bbox: BBox,
    pub score: T,
    pub label: Option<u32>,
}

impl<T: Scalar> Detection<T> {
    pub fn new(frame_id: u64, bbox: BBox, score: T) -> Self {
        Detection { frame_id, bbox, score, label: None }
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_score(mut self, score: T) -> Self {
        self.score = score;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub frame_id: u64,
    pub bbox: BBox,
    pub label: Option<u32>,
}

/// On-disk detection row. Also reads rescored rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection<f64>) -> Self {
        DetectionRecord {
            frame_id: d.frame_id,
            bbox: d.bbox.as_array(),
            score: d.score,
            label: d.label,
            score_raw: None,
            similarity: None,
        }
    }

    pub fn to_detection(&self) -> Result<Detection<f64>> {
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(BemError::data(format!("score {} outside [0,1]", self.score)));
        }
        let bbox = BBox::from_array(self.bbox)?;
        Ok(Detection { frame_id: self.frame_id, bbox, score: self.score, label: self.label })
    }
}

/// Rescored output row: `similarity` is always written, as `null` on passthrough.
#[derive(Debug, Clone, Serialize)]
pub struct RescoredRecord {
    pub frame_id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    pub score_raw: f64,
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub frame_id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

impl GroundTruthRecord {
    pub fn from_gt(g: &GroundTruthBox) -> Self {
        GroundTruthRecord { frame_id: g.frame_id, bbox: g.bbox.as_array(), label: g.label }
    }

    pub fn to_gt(&self) -> Result<GroundTruthBox> {
        let bbox = BBox::from_array(self.bbox)?;
        Ok(GroundTruthBox { frame_id: self.frame_id, bbox, label: self.label })
    }
}

/// Parses one row per non-blank line; `check` failures are reported with the
/// line number.
fn read_jsonl<R, V>(path: &Path, check: impl Fn(&R) -> Result<V>) -> Result<Vec<V>>
where
    R: for<'de> Deserialize<'de>,
{
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| BemError::data(format!("{} line {}: {msg}", path.display(), lineno + 1));
        let rec: R = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let v = check(&rec).map_err(|e| match e {
            BemError::Data(m) | BemError::InvalidArgument(m) => at(m),
            other => at(other.to_string()),
        })?;
        out.push(v);
    }
    Ok(out)
}

fn write_jsonl<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads raw or rescored detection rows; every row is validated.
pub fn read_detection_records(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_jsonl(path, |r: &DetectionRecord| r.to_detection().map(|_| r.clone()))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection<f64>>> {
    read_detection_records(path)?.iter().map(DetectionRecord::to_detection).collect()
}

pub fn write_detections(path: &Path, dets: &[Detection<f64>]) -> Result<()> {
    write_jsonl(path, dets.iter().map(DetectionRecord::from_detection))
}

pub fn write_rescored(path: &Path, rows: &[RescoredRecord]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthBox>> {
    read_jsonl(path, GroundTruthRecord::to_gt)
}

pub fn write_ground_truth(path: &Path, gts: &[GroundTruthBox]) -> Result<()> {
    write_jsonl(path, gts.iter().map(GroundTruthRecord::from_gt))
}
