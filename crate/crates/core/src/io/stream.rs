//! IAFS frame streams.
//!
//! Layout, all little-endian: `"IAFS"`, `u32` version (1), `u32` channels,
//! `u32` bins, `u64` frame count, then `f32` values frame by frame, each frame
//! channel-major. The count is 0 until the writer finishes; readers then infer
//! it from the payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use ndarray::Array2;

use crate::denoise::FrameShape;
use crate::error::{Error, Result};
use crate::fifo::FrameSink;

pub const STREAM_MAGIC: [u8; 4] = *b"IAFS";
pub const STREAM_VERSION: u32 = 1;
pub const STREAM_HEADER_LEN: usize = 24;
const COUNT_OFFSET: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub shape: FrameShape,
    /// `frame_count * shape.len()` values.
    pub data: Vec<f32>,
}

impl FrameStream {
    pub fn new(shape: FrameShape, data: Vec<f32>) -> Result<Self> {
        if !data.len().is_multiple_of(shape.len()) {
            return Err(Error::ShapeMismatch {
                expected: data.len().div_ceil(shape.len()) * shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Rounds `frames` (flat, frame after frame) to `f32`.
    pub fn from_f64(shape: FrameShape, frames: &[f64]) -> Result<Self> {
        Self::new(shape, frames.iter().map(|&v| v as f32).collect())
    }

    pub fn frame_count(&self) -> usize {
        self.data.len() / self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let d = self.shape.len();
        &self.data[i * d..(i + 1) * d]
    }

    /// One row per frame.
    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.frame_count(), self.shape.len()), |(i, d)| {
            f64::from(self.data[i * self.shape.len() + d])
        })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < STREAM_HEADER_LEN {
            return Err(Error::Truncated(format!(
                "stream header needs {STREAM_HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
        if magic != STREAM_MAGIC {
            return Err(Error::BadMagic {
                expected: STREAM_MAGIC,
                found: magic,
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"));
        let version = word(4);
        if version != STREAM_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let shape = FrameShape::new(word(8) as usize, word(12) as usize)
            .map_err(|_| Error::Truncated("header declares an empty frame shape".into()))?;
        let declared = u64::from_le_bytes(bytes[16..24].try_into().expect("eight bytes"));

        let payload = &bytes[STREAM_HEADER_LEN..];
        let frame_bytes = shape.len() * 4;
        if !payload.len().is_multiple_of(frame_bytes) {
            return Err(Error::Truncated(format!(
                "payload of {} bytes is not a whole number of {frame_bytes}-byte frames",
                payload.len()
            )));
        }
        let actual = (payload.len() / frame_bytes) as u64;
        if declared != 0 && declared != actual {
            return Err(Error::CountMismatch { declared, actual });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn write_to<W: Write + Seek>(&self, w: W) -> Result<W> {
        let mut writer = StreamWriter::new(w, self.shape)?;
        for chunk in self.data.chunks_exact(self.shape.len()) {
            writer.push_f32(chunk)?;
        }
        writer.finish()
    }
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<FrameStream> {
    FrameStream::read_from(BufReader::new(File::open(path)?))
}

pub fn write_stream(stream: &FrameStream, path: impl AsRef<Path>) -> Result<()> {
    stream.write_to(BufWriter::new(File::create(path)?))?;
    Ok(())
}

/// Appends frames to an IAFS stream; [`StreamWriter::finish`] patches the count.
pub struct StreamWriter<W: Write + Seek> {
    inner: W,
    shape: FrameShape,
    frames: u64,
    scratch: Vec<u8>,
}

impl StreamWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, shape: FrameShape) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), shape)
    }
}

impl<W: Write + Seek> StreamWriter<W> {
    pub fn new(mut inner: W, shape: FrameShape) -> Result<Self> {
        inner.write_all(&STREAM_MAGIC)?;
        inner.write_all(&STREAM_VERSION.to_le_bytes())?;
        inner.write_all(&(shape.channels as u32).to_le_bytes())?;
        inner.write_all(&(shape.bins as u32).to_le_bytes())?;
        inner.write_all(&0u64.to_le_bytes())?;
        Ok(Self {
            inner,
            shape,
            frames: 0,
            scratch: Vec::with_capacity(shape.len() * 4),
        })
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        self.check_len(frame.len())?;
        self.scratch.clear();
        for &v in frame {
            self.scratch.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.inner.write_all(&self.scratch)?;
        self.frames += 1;
        Ok(())
    }

    pub fn push_f32(&mut self, frame: &[f32]) -> Result<()> {
        self.check_len(frame.len())?;
        self.scratch.clear();
        for &v in frame {
            self.scratch.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&self.scratch)?;
        self.frames += 1;
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.shape.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.len(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Writes the frame count into the header and flushes.
    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(COUNT_OFFSET))?;
        self.inner.write_all(&self.frames.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl<W: Write + Seek> FrameSink for StreamWriter<W> {
    fn push_frame(&mut self, frame: &[f64]) -> std::io::Result<()> {
        self.push(frame).map_err(|e| match e {
            Error::Io(io) => io,
            other => std::io::Error::new(std::io::ErrorKind::InvalidInput, other.to_string()),
        })
    }
}
