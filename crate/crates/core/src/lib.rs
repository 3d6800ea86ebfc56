//! Background embedding memory (BEM): training-free suppression of false
//! positives for fixed-camera object detection.
//!
//! The pipeline estimates a clean background from recent frames, keeps a
//! prototype embedding of it, and lowers detection scores in logit space by a
//! penalty that grows as the frame drifts away from the background and as a
//! proposal's confidence rank drops. The crate also ships the evaluation
//! metrics (AP@0.50, precision–confidence AUC) and a seeded scene simulator.
//!
//! Core types are generic over the storage scalar ([`Scalar`]: `f32` or
//! `f64`); the aliases below name the concrete instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod background;
pub mod bememb;
pub mod detection;
pub mod embedding;
pub mod error;
pub mod image;
pub mod metrics;
pub mod num;
pub mod pipeline;
pub mod pnm;
pub mod rescore;
pub mod sim;

pub use background::{
    background_quality, mask_from_boxes, mask_from_detections, masked_temporal_average, residual,
    sweep_window_size, BackgroundEstimate, MaskedSequence, QualityConfig, QualityScore, SweepResult,
    WindowConfig,
};
pub use detection::{BBox, Detection, GroundTruthBox};
pub use embedding::{
    cosine_similarity, extract_embedding, Embedding, ExtractorSpec, FeatureExtractor, GridStats,
    PrototypeMemory,
};
pub use error::{BemError, Result};
pub use image::{ForegroundMask, Frame, ResidualImage};
pub use num::Scalar;
pub use pipeline::{run_pipeline, run_stream, BemPipeline, EmbeddingSource, PipelineConfig, PipelineSettings};
pub use rescore::{calibrate, rank_weights, rescore, CalibrationConfig, CalibrationMode, RankMode, RescoreConfig};

pub type Frame32 = Frame<f32>;
pub type Frame64 = Frame<f64>;
pub type BackgroundEstimate32 = BackgroundEstimate<f32>;
pub type BackgroundEstimate64 = BackgroundEstimate<f64>;
pub type Embedding32 = Embedding<f32>;
pub type Embedding64 = Embedding<f64>;
pub type PrototypeMemory32 = PrototypeMemory<f32>;
pub type PrototypeMemory64 = PrototypeMemory<f64>;
pub type Detection32 = Detection<f32>;
pub type Detection64 = Detection<f64>;
