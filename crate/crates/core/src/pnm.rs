//! Binary PGM (P5) / PPM (P6) with maxval 255, and frame directories named
//! `frame_%06d.ppm` or `frame_%06d.pgm`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{BemError, Result};
use crate::image::Frame;
use crate::num::Scalar;

pub fn frame_file_name(frame_id: u64, channels: usize) -> String {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    format!("frame_{frame_id:06}.{ext}")
}

pub fn encode<T: Scalar>(frame: &Frame<T>) -> Vec<u8> {
    let magic = if frame.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.pixels().iter().map(|v| quantize(v.f64())));
    out
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode<T: Scalar>(bytes: &[u8], frame_id: u64) -> Result<Frame<T>> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(BemError::data("truncated PNM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(BemError::data(format!("unsupported PNM magic {other:?}"))),
    };
    let parse = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| BemError::data(format!("bad PNM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(BemError::data(format!("only maxval 255 is supported, got {maxval}")));
    }
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(BemError::data(format!("PNM raster truncated: need {n} bytes")));
    }
    let pixels = bytes[pos..pos + n].iter().map(|&b| T::of(b as f64 / 255.0)).collect();
    Frame::new(frame_id, width, height, channels, pixels).map_err(|e| BemError::data(e.to_string()))
}

pub fn write_frame<T: Scalar>(path: &Path, frame: &Frame<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(frame))?;
    Ok(())
}

pub fn read_frame<T: Scalar>(path: &Path, frame_id: u64) -> Result<Frame<T>> {
    let bytes = fs::read(path)?;
    decode(&bytes, frame_id).map_err(|e| BemError::data(format!("{}: {e}", path.display())))
}

/// Lists `frame_%06d.{ppm,pgm}` files in `dir`, sorted by frame id.
pub fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(rest) = name.strip_prefix("frame_") else { continue };
        let Some(id) = rest.strip_suffix(".ppm").or_else(|| rest.strip_suffix(".pgm")) else {
            continue;
        };
        if let Ok(id) = id.parse::<u64>() {
            out.push((id, path));
        }
    }
    out.sort_by_key(|(id, _)| *id);
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(BemError::data(format!("frame {} present twice in {}", w[0].0, dir.display())));
    }
    Ok(out)
}

/// Reads a whole frame directory, failing on gaps in the id sequence or on
/// dimension drift.
pub fn read_frame_dir<T: Scalar>(dir: &Path) -> Result<Vec<Frame<T>>> {
    let listing = list_frames(dir)?;
    let mut frames: Vec<Frame<T>> = Vec::with_capacity(listing.len());
    for (id, path) in listing {
        if let Some(prev) = frames.last() {
            if id != prev.frame_id + 1 {
                return Err(BemError::data(format!("missing frame id {}", prev.frame_id + 1)));
            }
        }
        let frame = read_frame(&path, id)?;
        if let Some(first) = frames.first() {
            if frame.dims() != first.dims() {
                return Err(BemError::data(format!(
                    "frame {id} has dims {:?}, stream has {:?}",
                    frame.dims(),
                    first.dims()
                )));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}
