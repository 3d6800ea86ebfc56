//! Raster types: frames, binary foreground masks and residual images.

use crate::error::{BemError, Result};
use crate::num::Scalar;

/// A frame of a fixed-camera stream. Pixels are interleaved (`y`, `x`, channel)
/// and normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub frame_id: u64,
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(
        frame_id: u64,
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<T>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(BemError::invalid(format!("degenerate frame {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(BemError::invalid(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(BemError::invalid(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                width * height * channels
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(BemError::invalid(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Frame { frame_id, width, height, channels, pixels })
    }

    /// A frame filled with a single value on every channel.
    pub fn filled(frame_id: u64, width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(frame_id, width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Mean over channels at pixel index `p` (row-major), in `f64`.
    #[inline]
    pub fn channel_mean(&self, p: usize) -> f64 {
        let base = p * self.channels;
        let sum: f64 = self.pixels[base..base + self.channels].iter().map(|v| v.f64()).sum();
        sum / self.channels as f64
    }

    /// Converts the storage precision.
    pub fn cast<U: Scalar>(&self) -> Frame<U> {
        Frame {
            frame_id: self.frame_id,
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self.pixels.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Binary mask: 0 marks object (foreground) pixels, 1 marks background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub frame_id: u64,
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl ForegroundMask {
    pub fn new(frame_id: u64, width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(BemError::invalid(format!("degenerate mask {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(BemError::invalid("mask buffer length does not match dimensions"));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(BemError::invalid("mask values must be 0 or 1"));
        }
        Ok(ForegroundMask { frame_id, width, height, values })
    }

    /// Mask with every pixel marked as background.
    pub fn all_background(frame_id: u64, width: usize, height: usize) -> Result<Self> {
        Self::new(frame_id, width, height, vec![1; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn is_background(&self, p: usize) -> bool {
        self.values[p] == 1
    }

    pub fn background_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_count(&self) -> usize {
        self.values.len() - self.background_count()
    }
}

/// Single-channel absolute difference image `|mean_c I − mean_c B|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}
