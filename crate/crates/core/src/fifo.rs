//! Diagonal queue sampling.
//!
//! The window holds `b` clean buffer frames followed by `n` diagonal frames,
//! where `n` is the schedule length. Diagonal position `j` (1-based) sits at
//! timestep `t_{n+1-j}`: position 1 is one step from clean, position `n` is
//! pure noise at `t_1 = M`. One step denoises the whole window with a single
//! call, emits the head frame once it is clean and appends fresh noise at the
//! tail, so the level layout of the window never changes.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};

use crate::denoise::{ddim_update, FrameShape, FrameWindow};
use crate::error::{Error, Result};
use crate::noise::Level;
use crate::rng::{NoiseSource, Purpose};
use crate::sampler::{batch_sample_from, seeded_latents, SamplerContext};

const F64_BYTES: usize = std::mem::size_of::<f64>();

/// What happens to the buffer zone as frames complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BufferMode {
    /// The buffer holds the `b` most recently completed frames.
    #[default]
    Sliding,
    /// The buffer keeps the initial primer frames for the whole run.
    Static,
}

impl FromStr for BufferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sliding" => Ok(Self::Sliding),
            "static" => Ok(Self::Static),
            other => Err(Error::InvalidRange(format!("unknown buffer mode {other:?}"))),
        }
    }
}

/// `ceil(n / 4)`.
pub fn default_buffer_len(diagonal_len: usize) -> usize {
    diagonal_len.div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueConfig {
    pub buffer_len: usize,
    pub buffer_mode: BufferMode,
    pub shape: FrameShape,
    pub seed: u64,
}

impl QueueConfig {
    /// Default buffer length for a plan of `diagonal_len` steps.
    pub fn for_plan(diagonal_len: usize, shape: FrameShape, seed: u64) -> Self {
        Self {
            buffer_len: default_buffer_len(diagonal_len),
            buffer_mode: BufferMode::Sliding,
            shape,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalQueue {
    buffer_len: usize,
    mode: BufferMode,
    window: Array2<f64>,
    levels: Vec<Level>,
    eps: Array2<f64>,
    completed: Vec<f64>,
    scratch: Vec<f64>,
    noise: NoiseSource,
    enqueued: u64,
    produced: u64,
    warmup: WarmupStats,
}

#[derive(Debug, Clone, Copy, Default)]
struct WarmupStats {
    calls: u64,
    peak_bytes: usize,
}

impl DiagonalQueue {
    /// Builds the first queue from `b + n` primer frames sampled with the
    /// uniform-timestep sampler. The first `b` primers become the buffer; the
    /// rest are re-noised onto the diagonal with fresh seeded noise.
    pub fn init(ctx: &SamplerContext<'_>, cfg: &QueueConfig) -> Result<Self> {
        let steps = ctx.plan.steps();
        let n = steps.len();
        let b = cfg.buffer_len;
        let dims = cfg.shape.len();
        let noise = NoiseSource::new(cfg.seed);

        let primer = batch_sample_from(ctx, seeded_latents(&noise, Purpose::Primer, 0, b + n, dims))?;
        let mut window = primer.frames;
        let mut levels = vec![Level::Clean; b + n];
        let mut fresh = vec![0.0; dims];
        let mut noisy = vec![0.0; dims];
        for j in 1..=n {
            let tau = steps[n - j];
            let row = b + j - 1;
            noise.fill_normal(Purpose::Renoise, (j - 1) as u64, &mut fresh);
            let clean = window.row(row);
            ctx.noise
                .perturb_into(clean.as_slice().expect("standard layout"), tau, &fresh, &mut noisy)?;
            window
                .row_mut(row)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&noisy);
            levels[row] = Level::Noisy(tau);
        }

        Ok(Self {
            buffer_len: b,
            mode: cfg.buffer_mode,
            eps: Array2::zeros(window.dim()),
            window,
            levels,
            completed: vec![0.0; dims],
            scratch: vec![0.0; dims],
            noise,
            enqueued: 0,
            produced: 0,
            warmup: WarmupStats {
                calls: primer.denoiser_calls,
                peak_bytes: primer.peak_bytes,
            },
        })
    }

    /// One diagonal step; returns the frame that just became clean.
    pub fn step(&mut self, ctx: &SamplerContext<'_>) -> Result<&[f64]> {
        let steps = ctx.plan.steps();
        let n = steps.len();
        let b = self.buffer_len;
        let dims = self.window.ncols();
        let len = self.window.nrows();
        if n + b != len {
            return Err(Error::ShapeMismatch {
                expected: len,
                actual: n + b,
            });
        }

        let window = FrameWindow {
            values: self.window.view(),
            levels: &self.levels,
            condition: ctx.condition,
        };
        ctx.denoiser.predict_eps(&window, ctx.noise, self.eps.view_mut())?;

        for j in 1..=n {
            let row = b + j - 1;
            let k = n - j;
            let from = ctx.noise.alpha_bar(steps[k]);
            let to = ctx.plan.next_after(k).map_or(1.0, |t| ctx.noise.alpha_bar(t));
            let z = self.window.row(row);
            let e = self.eps.row(row);
            ddim_update(
                z.as_slice().expect("standard layout"),
                e.as_slice().expect("standard layout"),
                from,
                to,
                &mut self.scratch,
            );
            self.window
                .row_mut(row)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&self.scratch);
        }

        let flat = self.window.as_slice_mut().expect("standard layout");
        self.completed.copy_from_slice(&flat[b * dims..(b + 1) * dims]);
        let shift_from = match self.mode {
            BufferMode::Sliding => 0,
            BufferMode::Static => b,
        };
        flat.copy_within((shift_from + 1) * dims.., shift_from * dims);
        self.noise
            .fill_normal(Purpose::Enqueue, self.enqueued, &mut flat[(len - 1) * dims..]);
        self.enqueued += 1;
        self.produced += 1;
        Ok(&self.completed)
    }

    pub fn window(&self) -> ArrayView2<'_, f64> {
        self.window.view()
    }

    pub fn buffer(&self) -> ArrayView2<'_, f64> {
        self.window.slice(s![..self.buffer_len, ..])
    }

    pub fn diagonal(&self) -> ArrayView2<'_, f64> {
        self.window.slice(s![self.buffer_len.., ..])
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer_len
    }

    /// Frames dequeued so far.
    pub fn produced(&self) -> u64 {
        self.produced
    }

    /// Fresh frames enqueued so far; the next one uses `Purpose::Enqueue` at
    /// this index.
    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    /// Bytes held by the queue's own buffers. Depends only on the window
    /// length and frame size.
    pub fn live_bytes(&self) -> usize {
        (self.window.len() + self.eps.len() + self.completed.len() + self.scratch.len()) * F64_BYTES
            + self.levels.len() * std::mem::size_of::<Level>()
    }

    /// Largest allocation seen so far, including the primer batch.
    pub fn peak_bytes(&self) -> usize {
        self.live_bytes().max(self.warmup.peak_bytes)
    }

    pub fn warmup_calls(&self) -> u64 {
        self.warmup.calls
    }
}

/// Destination for completed frames.
pub trait FrameSink {
    fn push_frame(&mut self, frame: &[f64]) -> io::Result<()>;
}

/// Collects frames into one flat vector, frame after frame.
impl FrameSink for Vec<f64> {
    fn push_frame(&mut self, frame: &[f64]) -> io::Result<()> {
        self.extend_from_slice(frame);
        Ok(())
    }
}

impl<S: FrameSink + ?Sized> FrameSink for &mut S {
    fn push_frame(&mut self, frame: &[f64]) -> io::Result<()> {
        (**self).push_frame(frame)
    }
}

/// Discards frames.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl FrameSink for NullSink {
    fn push_frame(&mut self, _frame: &[f64]) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunStats {
    pub frames: u64,
    /// Denoiser calls made while streaming (primer calls excluded).
    pub denoiser_calls: u64,
    pub peak_bytes: usize,
    pub wall_ms: u64,
    /// Indices of frames that start a new independently sampled window.
    pub boundaries: Vec<u64>,
}

impl RunStats {
    pub const CSV_HEADER: &'static str = "frames,calls,peak_bytes,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.frames, self.denoiser_calls, self.peak_bytes, self.wall_ms
        )
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())
    }
}

fn push(sink: &mut dyn FrameSink, frame: &[f64], written: u64) -> Result<()> {
    sink.push_frame(frame)
        .map_err(|source| Error::SinkFailure { written, source })
}

/// Streams `frames` frames through a diagonal queue in exactly `frames` steps.
pub fn generate_stream(
    frames: u64,
    ctx: &SamplerContext<'_>,
    cfg: &QueueConfig,
    sink: &mut dyn FrameSink,
) -> Result<RunStats> {
    if frames == 0 {
        return Err(Error::InvalidCount("need at least one frame".into()));
    }
    let start = Instant::now();
    let mut queue = DiagonalQueue::init(ctx, cfg)?;
    let mut peak = queue.peak_bytes();
    for written in 0..frames {
        let frame = queue.step(ctx)?;
        push(sink, frame, written)?;
        peak = peak.max(queue.peak_bytes());
    }
    Ok(RunStats {
        frames,
        denoiser_calls: frames,
        peak_bytes: peak,
        wall_ms: start.elapsed().as_millis() as u64,
        boundaries: Vec::new(),
    })
}

/// Samples all frames at once with uniform timesteps.
pub fn generate_batch(
    frames: u64,
    ctx: &SamplerContext<'_>,
    shape: FrameShape,
    seed: u64,
    sink: &mut dyn FrameSink,
) -> Result<RunStats> {
    generate_concat(frames, frames, ctx, shape, seed, sink)
}

/// Baseline: independent uniform-timestep windows of `window` frames stitched
/// back to back. Window `w` draws its latents from `Purpose::BatchInit`
/// indices `w * window ..`, so a single window equals a plain batch run.
pub fn generate_concat(
    frames: u64,
    window: u64,
    ctx: &SamplerContext<'_>,
    shape: FrameShape,
    seed: u64,
    sink: &mut dyn FrameSink,
) -> Result<RunStats> {
    if frames == 0 || window == 0 {
        return Err(Error::InvalidCount(format!(
            "need frames >= 1 and window >= 1, got {frames} and {window}"
        )));
    }
    let start = Instant::now();
    let noise = NoiseSource::new(seed);
    let mut stats = RunStats::default();
    let mut first = 0;
    while first < frames {
        let count = window.min(frames - first);
        let latents = seeded_latents(&noise, Purpose::BatchInit, first, count as usize, shape.len());
        let out = batch_sample_from(ctx, latents)?;
        for row in out.frames.rows() {
            push(sink, row.as_slice().expect("standard layout"), stats.frames)?;
            stats.frames += 1;
        }
        stats.denoiser_calls += out.denoiser_calls;
        stats.peak_bytes = stats.peak_bytes.max(out.peak_bytes);
        if first > 0 {
            stats.boundaries.push(first);
        }
        first += count;
    }
    stats.wall_ms = start.elapsed().as_millis() as u64;
    Ok(stats)
}

/// How a run produces its frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    /// Diagonal queue, one denoiser call per frame.
    #[default]
    Fifo,
    /// Every frame sampled together with uniform timesteps.
    Batch,
    /// Independent batch windows stitched end to end.
    Concat,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fifo => "fifo",
            Self::Batch => "batch",
            Self::Concat => "concat",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fifo" => Ok(Self::Fifo),
            "batch" => Ok(Self::Batch),
            "concat" => Ok(Self::Concat),
            other => Err(Error::InvalidRange(format!("unknown run mode {other:?}"))),
        }
    }
}

/// Dispatches to [`generate_stream`], [`generate_batch`] or [`generate_concat`].
/// `window` only matters for [`RunMode::Concat`].
pub fn generate(
    mode: RunMode,
    frames: u64,
    window: u64,
    ctx: &SamplerContext<'_>,
    cfg: &QueueConfig,
    sink: &mut dyn FrameSink,
) -> Result<RunStats> {
    match mode {
        RunMode::Fifo => generate_stream(frames, ctx, cfg, sink),
        RunMode::Batch => generate_batch(frames, ctx, cfg.shape, cfg.seed, sink),
        RunMode::Concat => generate_concat(frames, window, ctx, cfg.shape, cfg.seed, sink),
    }
}
