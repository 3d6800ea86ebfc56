//! Frame and background embeddings, the background prototype memory, and
//! frame–background cosine similarity.
//!
//! An embedding is `norm(pool(f(image)))`: a feature map from a
//! [`FeatureExtractor`], averaged over spatial positions and scaled to unit
//! ℓ2 norm.

use std::collections::VecDeque;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::image::Frame;
use crate::num::Scalar;

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// ℓ2-normalizes `raw`. Fails on non-finite entries or a zero vector.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
            return Err(BemError::DegenerateFeature);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(BemError::DegenerateFeature);
        }
        Ok(Embedding { values: raw.iter().map(|v| T::of(v / norm)).collect() })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> Embedding<U> {
        Embedding { values: self.values.iter().map(|v| U::of(v.f64())).collect() }
    }
}

/// Spatial feature map: `positions` rows of `dim` features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub positions: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    /// Global average pool over positions.
    pub fn pool(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.values.chunks_exact(self.dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = self.positions as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Deterministic image-to-feature-map function.
pub trait FeatureExtractor<T: Scalar> {
    fn name(&self) -> String;

    /// Embedding dimensionality for images with `channels` channels.
    fn dim(&self, channels: usize) -> usize;

    fn feature_map(&self, image: &Frame<T>) -> Result<FeatureMap>;
}

/// Grid statistics extractor: the image is split into `grid × grid` cells and
/// each cell contributes its per-channel mean followed by its per-channel
/// standard deviation. The map has a single position, so pooling is the
/// identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridStats {
    pub grid: usize,
}

impl Default for GridStats {
    fn default() -> Self {
        GridStats { grid: 8 }
    }
}

impl<T: Scalar> FeatureExtractor<T> for GridStats {
    fn name(&self) -> String {
        format!("grid:G={}", self.grid)
    }

    fn dim(&self, channels: usize) -> usize {
        2 * channels * self.grid * self.grid
    }

    fn feature_map(&self, image: &Frame<T>) -> Result<FeatureMap> {
        let g = self.grid;
        let (w, h, ch) = image.dims();
        if g == 0 || w < g || h < g {
            return Err(BemError::invalid(format!("image {w}x{h} smaller than {g}x{g} grid")));
        }
        let px = image.pixels();
        let mut values = Vec::with_capacity(<Self as FeatureExtractor<T>>::dim(self, ch));
        let mut mean = vec![0.0f64; ch];
        let mut var = vec![0.0f64; ch];
        for gy in 0..g {
            let (ys, ye) = (gy * h / g, (gy + 1) * h / g);
            for gx in 0..g {
                let (xs, xe) = (gx * w / g, (gx + 1) * w / g);
                let n = ((ye - ys) * (xe - xs)) as f64;
                mean.fill(0.0);
                var.fill(0.0);
                for y in ys..ye {
                    for x in xs..xe {
                        let base = (y * w + x) * ch;
                        for c in 0..ch {
                            mean[c] += px[base + c].f64();
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for y in ys..ye {
                    for x in xs..xe {
                        let base = (y * w + x) * ch;
                        for c in 0..ch {
                            let d = px[base + c].f64() - mean[c];
                            var[c] += d * d;
                        }
                    }
                }
                values.extend_from_slice(&mean);
                values.extend(var.iter().map(|v| (v / n).sqrt()));
            }
        }
        let dim = values.len();
        Ok(FeatureMap { positions: 1, dim, values })
    }
}

/// `norm(pool(f(image)))`.
pub fn extract_embedding<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    image: &Frame<T>,
    extractor: &E,
) -> Result<Embedding<T>> {
    let map = extractor.feature_map(image)?;
    Embedding::normalize(&map.pool())
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(BemError::invalid(format!("embedding dims {} vs {}", a.dim(), b.dim())));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x.f64() * y.f64()).sum();
    Ok(T::of(dot.clamp(-1.0, 1.0)))
}

/// Ring of the `K` most recent background embeddings and their renormalized
/// mean, the background prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMemory<T> {
    capacity: usize,
    entries: VecDeque<Embedding<T>>,
    prototype: Option<Embedding<T>>,
}

impl<T: Scalar> PrototypeMemory<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(BemError::config("memory capacity K must be >= 1"));
        }
        Ok(PrototypeMemory { capacity, entries: VecDeque::with_capacity(capacity), prototype: None })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prototype(&self) -> Option<&Embedding<T>> {
        self.prototype.as_ref()
    }

    /// Pushes a background embedding, evicting the oldest past capacity, and
    /// recomputes the prototype. On error the memory is left unchanged.
    pub fn update(&mut self, background: Embedding<T>) -> Result<()> {
        if let Some(first) = self.entries.front() {
            if first.dim() != background.dim() {
                return Err(BemError::invalid(format!(
                    "embedding dim {} does not match memory dim {}",
                    background.dim(),
                    first.dim()
                )));
            }
        }
        let mut entries = self.entries.clone();
        entries.push_back(background);
        while entries.len() > self.capacity {
            entries.pop_front();
        }
        let dim = entries[0].dim();
        let mut mean = vec![0.0f64; dim];
        for e in &entries {
            for (m, v) in mean.iter_mut().zip(e.values()) {
                *m += v.f64();
            }
        }
        let n = entries.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let prototype = Embedding::normalize(&mean).map_err(|_| BemError::DegeneratePrototype)?;
        self.entries = entries;
        self.prototype = Some(prototype);
        Ok(())
    }

    /// Similarity of a frame embedding to the prototype, or `None` before the
    /// first update.
    pub fn query(&self, frame: &Embedding<T>) -> Result<Option<T>> {
        self.prototype.as_ref().map(|p| cosine_similarity(frame, p)).transpose()
    }
}

/// Which extractor a pipeline run uses: `grid:G=<n>` or `file:<path>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ExtractorSpec {
    Grid { grid: usize },
    File(PathBuf),
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::Grid { grid: 8 }
    }
}

impl FromStr for ExtractorSpec {
    type Err = BemError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("grid") {
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            if rest.is_empty() {
                return Ok(ExtractorSpec::default());
            }
            let g = rest
                .strip_prefix("G=")
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&g| g > 0)
                .ok_or_else(|| BemError::config(format!("bad grid extractor spec {s:?}")))?;
            return Ok(ExtractorSpec::Grid { grid: g });
        }
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(BemError::config("file extractor needs a path"));
            }
            return Ok(ExtractorSpec::File(PathBuf::from(path)));
        }
        Err(BemError::config(format!("unknown extractor {s:?}; expected grid:G=<n> or file:<path>")))
    }
}

impl TryFrom<String> for ExtractorSpec {
    type Error = BemError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ExtractorSpec> for String {
    fn from(s: ExtractorSpec) -> String {
        s.to_string()
    }
}

impl fmt::Display for ExtractorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractorSpec::Grid { grid } => write!(f, "grid:G={grid}"),
            ExtractorSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding<f64> {
        Embedding::normalize(v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = emb(&[0.6, 0.8]);
        let b = emb(&[1.0, 0.0]);
        assert!((cosine_similarity(&a, &b).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&b, &emb(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(cosine_similarity(&a, &emb(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn prototype_examples() {
        let mut mem = PrototypeMemory::<f64>::new(2).unwrap();
        assert_eq!(mem.query(&emb(&[1.0, 0.0])).unwrap(), None);
        mem.update(emb(&[1.0, 0.0])).unwrap();
        assert_eq!(mem.prototype().unwrap().values(), &[1.0, 0.0]);
        mem.update(emb(&[0.0, 1.0])).unwrap();
        let p = mem.prototype().unwrap().values();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p[0] - r).abs() < 1e-15 && (p[1] - r).abs() < 1e-15);
        let c = mem.query(&emb(&[1.0, 0.0])).unwrap().unwrap();
        assert!((c - 0.7071067811865475).abs() < 1e-12);
    }

    #[test]
    fn ring_of_one_tracks_latest() {
        let mut mem = PrototypeMemory::<f32>::new(1).unwrap();
        for v in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]] {
            let e = Embedding::normalize(&v).unwrap();
            mem.update(e.clone()).unwrap();
            assert_eq!(mem.prototype(), Some(&e));
            assert_eq!(mem.len(), 1);
        }
    }

    #[test]
    fn antipodal_mean_is_degenerate_and_state_kept() {
        let mut mem = PrototypeMemory::<f64>::new(2).unwrap();
        mem.update(emb(&[1.0, 0.0])).unwrap();
        let before = mem.clone();
        assert!(matches!(mem.update(emb(&[-1.0, 0.0])), Err(BemError::DegeneratePrototype)));
        assert_eq!(mem, before);
        assert!(PrototypeMemory::<f64>::new(0).is_err());
    }

    #[test]
    fn zero_feature_is_degenerate() {
        assert!(matches!(Embedding::<f64>::normalize(&[0.0, 0.0]), Err(BemError::DegenerateFeature)));
        assert!(Embedding::<f64>::normalize(&[f64::NAN, 1.0]).is_err());
        let black = Frame::filled(0, 8, 8, 1, 0.0f64).unwrap();
        assert!(matches!(extract_embedding(&black, &GridStats::default()), Err(BemError::DegenerateFeature)));
    }

    #[test]
    fn grid_stats_on_constant_image() {
        let img = Frame::filled(0, 16, 16, 3, 0.5f32).unwrap();
        let g = GridStats::default();
        let e = extract_embedding(&img, &g).unwrap();
        assert_eq!(e.dim(), 2 * 3 * 64);
        // means equal, stds zero: normalized constant pattern over the mean slots
        let expect = 1.0 / (3.0f64 * 64.0).sqrt();
        for cell in e.values().chunks(6) {
            assert!(cell[..3].iter().all(|v| (v.f64() - expect).abs() < 1e-7));
            assert!(cell[3..].iter().all(|v| *v == 0.0));
        }
        assert_eq!(extract_embedding(&img, &g).unwrap(), e);
        assert!(extract_embedding(&Frame::filled(0, 4, 4, 1, 0.5f32).unwrap(), &g).is_err());
    }

    #[test]
    fn extractor_spec_parsing() {
        assert_eq!("grid:G=4".parse::<ExtractorSpec>().unwrap(), ExtractorSpec::Grid { grid: 4 });
        assert_eq!("grid".parse::<ExtractorSpec>().unwrap(), ExtractorSpec::Grid { grid: 8 });
        assert_eq!(
            "file:/tmp/e.bin".parse::<ExtractorSpec>().unwrap(),
            ExtractorSpec::File("/tmp/e.bin".into())
        );
        assert!("grid:G=0".parse::<ExtractorSpec>().is_err());
        assert!("clip".parse::<ExtractorSpec>().is_err());
        let s: ExtractorSpec = serde_json::from_str("\"grid:G=2\"").unwrap();
        assert_eq!(s.to_string(), "grid:G=2");
    }
}
