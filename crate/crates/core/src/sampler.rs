//! Uniform-timestep sampling: every frame shares the same level at each step.

use ndarray::Array2;

use crate::denoise::{ddim_update, Denoiser, FrameWindow};
use crate::error::{Error, Result};
use crate::noise::{Level, NoiseSchedule};
use crate::plan::TimestepSchedule;
use crate::rng::{NoiseSource, Purpose};

/// Everything a sampling run needs besides its latents.
#[derive(Clone, Copy)]
pub struct SamplerContext<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub noise: &'a NoiseSchedule,
    pub plan: &'a TimestepSchedule,
    pub condition: &'a [f64],
}

impl<'a> SamplerContext<'a> {
    pub fn new(denoiser: &'a dyn Denoiser, noise: &'a NoiseSchedule, plan: &'a TimestepSchedule) -> Result<Self> {
        if plan.timesteps() > noise.len() {
            return Err(Error::TimestepOutOfRange {
                tau: plan.timesteps(),
                max: noise.len(),
            });
        }
        Ok(Self {
            denoiser,
            noise,
            plan,
            condition: &[],
        })
    }

    pub fn with_condition(mut self, condition: &'a [f64]) -> Self {
        self.condition = condition;
        self
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// One clean frame per row.
    pub frames: Array2<f64>,
    /// Bytes held by the latent and prediction buffers.
    pub peak_bytes: usize,
    pub denoiser_calls: u64,
}

/// Runs `latents` (one frame per row, all at `t_1`) through the whole plan.
pub fn batch_sample_from(ctx: &SamplerContext<'_>, mut latents: Array2<f64>) -> Result<BatchOutput> {
    let steps = ctx.plan.steps();
    let frames = latents.nrows();
    let mut eps = Array2::<f64>::zeros(latents.dim());
    let mut levels = vec![Level::Noisy(steps[0]); frames];
    let mut next_row = vec![0.0; latents.ncols()];
    let peak_bytes = (latents.len() + eps.len()) * std::mem::size_of::<f64>();
    let mut calls = 0;

    for (k, &tau) in steps.iter().enumerate() {
        levels.fill(Level::Noisy(tau));
        let window = FrameWindow {
            values: latents.view(),
            levels: &levels,
            condition: ctx.condition,
        };
        ctx.denoiser.predict_eps(&window, ctx.noise, eps.view_mut())?;
        calls += 1;
        let from = ctx.noise.alpha_bar(tau);
        let to = ctx.plan.next_after(k).map_or(1.0, |t| ctx.noise.alpha_bar(t));
        for (mut z, e) in latents.rows_mut().into_iter().zip(eps.rows()) {
            let z_slice = z.as_slice().expect("standard layout");
            let e_slice = e.as_slice().expect("standard layout");
            ddim_update(z_slice, e_slice, from, to, &mut next_row);
            z.as_slice_mut().expect("standard layout").copy_from_slice(&next_row);
        }
    }
    Ok(BatchOutput {
        frames: latents,
        peak_bytes,
        denoiser_calls: calls,
    })
}

/// Seeded standard-normal latents for frames `first .. first + count`.
pub fn seeded_latents(noise: &NoiseSource, purpose: Purpose, first: u64, count: usize, dims: usize) -> Array2<f64> {
    let mut latents = Array2::<f64>::zeros((count, dims));
    for (k, mut row) in latents.rows_mut().into_iter().enumerate() {
        noise.fill_normal(purpose, first + k as u64, row.as_slice_mut().expect("standard layout"));
    }
    latents
}

/// Samples `frames` frames of `dims` values from seeded noise
/// (`Purpose::BatchInit`, indices `0..frames`).
pub fn batch_sample(ctx: &SamplerContext<'_>, frames: usize, dims: usize, noise: &NoiseSource) -> Result<BatchOutput> {
    if frames == 0 {
        return Err(Error::InvalidCount("batch needs at least one frame".into()));
    }
    batch_sample_from(ctx, seeded_latents(noise, Purpose::BatchInit, 0, frames, dims))
}
