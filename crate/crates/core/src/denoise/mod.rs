//! The ε-predictor interface and the deterministic DDIM update.

mod gp;

use std::cell::Cell;

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::noise::{Level, NoiseSchedule};

pub use gp::{GaussianProcessDenoiser, GaussianProcessSpec, GpMode, GpSolver};

/// Layout of one latent frame: `channels` x `bins` values, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameShape {
    pub channels: usize,
    pub bins: usize,
}

impl FrameShape {
    pub fn new(channels: usize, bins: usize) -> Result<Self> {
        if channels == 0 || bins == 0 {
            return Err(Error::InvalidCount(format!(
                "frame shape must be nonempty, got {channels}x{bins}"
            )));
        }
        Ok(Self { channels, bins })
    }

    /// Values per frame.
    pub fn len(&self) -> usize {
        self.channels * self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_bytes(&self) -> usize {
        self.len() * std::mem::size_of::<f64>()
    }
}

impl Default for FrameShape {
    fn default() -> Self {
        Self { channels: 2, bins: 8 }
    }
}

/// A window of frames in time order, one row per frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameWindow<'a> {
    pub values: ArrayView2<'a, f64>,
    pub levels: &'a [Level],
    /// Conditioning vector. Carried for real backbones; the oracles ignore it.
    pub condition: &'a [f64],
}

impl FrameWindow<'_> {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.levels.len() != self.values.nrows() {
            return Err(Error::ShapeMismatch {
                expected: self.values.nrows(),
                actual: self.levels.len(),
            });
        }
        for level in self.levels {
            if let Level::Noisy(t) = level {
                sched.check(*t)?;
            }
        }
        Ok(())
    }
}

pub trait Denoiser {
    /// Writes the predicted noise for every frame of `window` into `eps`
    /// (same shape as `window.values`). Rows of clean frames are unspecified.
    fn predict_eps(&self, window: &FrameWindow<'_>, sched: &NoiseSchedule, eps: ArrayViewMut2<'_, f64>) -> Result<()>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_eps(&self, window: &FrameWindow<'_>, sched: &NoiseSchedule, eps: ArrayViewMut2<'_, f64>) -> Result<()> {
        (**self).predict_eps(window, sched, eps)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_eps(&self, window: &FrameWindow<'_>, sched: &NoiseSchedule, eps: ArrayViewMut2<'_, f64>) -> Result<()> {
        (**self).predict_eps(window, sched, eps)
    }
}

/// Counts `predict_eps` calls on the wrapped denoiser.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    calls: Cell<u64>,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn predict_eps(&self, window: &FrameWindow<'_>, sched: &NoiseSchedule, eps: ArrayViewMut2<'_, f64>) -> Result<()> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict_eps(window, sched, eps)
    }
}

/// DDIM update between two `alpha_bar` levels. `alpha_bar_to = 1` yields the
/// clean estimate `x0_hat` itself.
pub fn ddim_update(z: &[f64], eps: &[f64], alpha_bar_from: f64, alpha_bar_to: f64, out: &mut [f64]) {
    let (sa, sn) = (alpha_bar_from.sqrt(), (1.0 - alpha_bar_from).sqrt());
    let (ta, tn) = (alpha_bar_to.sqrt(), (1.0 - alpha_bar_to).sqrt());
    for ((o, &z), &e) in out.iter_mut().zip(z).zip(eps) {
        let x0 = (z - sn * e) / sa;
        *o = ta * x0 + tn * e;
    }
}

/// Deterministic step from `tau` to `next` (a lower timestep or clean).
pub fn ddim_step_into(
    z: &[f64],
    eps: &[f64],
    tau: usize,
    next: Level,
    sched: &NoiseSchedule,
    out: &mut [f64],
) -> Result<()> {
    sched.check(tau)?;
    if let Level::Noisy(t) = next {
        sched.check(t)?;
        if t >= tau {
            return Err(Error::NonDecreasingStep { from: tau, to: t });
        }
    }
    for len in [eps.len(), out.len()] {
        if len != z.len() {
            return Err(Error::ShapeMismatch {
                expected: z.len(),
                actual: len,
            });
        }
    }
    ddim_update(z, eps, sched.alpha_bar(tau), sched.alpha_bar_at(next), out);
    Ok(())
}

pub fn ddim_step(z: &[f64], eps: &[f64], tau: usize, next: Level, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let mut out = vec![0.0; z.len()];
    ddim_step_into(z, eps, tau, next, sched, &mut out)?;
    Ok(out)
}
