//! Grayscale dumps of a stream: one column per frame, one row per feature.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::FrameStream;

/// Gray level used when every value in the stream is the same.
pub const FLAT_GRAY: u8 = 128;

/// Binary PGM (`P5`) bytes, min-max scaled to `0..=255`.
pub fn render_pgm(stream: &FrameStream) -> Result<Vec<u8>> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let width = stream.frame_count();
    let height = stream.shape.len();
    let (lo, hi) = stream
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, range) = (f64::from(lo), f64::from(hi) - f64::from(lo));
    let scale = |v: f32| -> u8 {
        if range > 0.0 {
            ((f64::from(v) - lo) / range * 255.0).round() as u8
        } else {
            FLAT_GRAY
        }
    };

    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height);
    for feature in 0..height {
        out.extend((0..width).map(|frame| scale(stream.frame(frame)[feature])));
    }
    Ok(out)
}

pub fn emit_pgm(stream: &FrameStream, path: impl AsRef<Path>) -> Result<()> {
    let bytes = render_pgm(stream)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
