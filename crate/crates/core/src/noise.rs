//! Forward-process coefficients.
//!
//! Timesteps are 1-based: `tau` runs over `1..=M`, and `alpha_bar(1)` is the
//! least noisy level. A fully denoised frame is not a timestep at all; see
//! [`Level::Clean`].

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

/// Noise level carried by a latent frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Clean,
    Noisy(usize),
}

impl Level {
    pub fn is_clean(self) -> bool {
        matches!(self, Level::Clean)
    }

    pub fn timestep(self) -> Option<usize> {
        match self {
            Level::Clean => None,
            Level::Noisy(t) => Some(t),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Clean => f.write_str("clean"),
            Level::Noisy(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_start` at `tau = 1` to `beta_end` at `tau = M`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidRange("schedule needs at least one timestep".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let denom = timesteps.saturating_sub(1).max(1) as f64;
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / denom)
            .collect();
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alpha_bar = betas
            .iter()
            .scan(1.0, |prod, beta| {
                *prod *= 1.0 - beta;
                Some(*prod)
            })
            .collect();
        Self { betas, alpha_bar }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn check(&self, tau: usize) -> Result<()> {
        if tau == 0 || tau > self.len() {
            Err(Error::TimestepOutOfRange { tau, max: self.len() })
        } else {
            Ok(())
        }
    }

    /// Panics when `tau` is outside `1..=M`; use [`check`](Self::check) first
    /// for untrusted input.
    pub fn beta(&self, tau: usize) -> f64 {
        self.betas[tau - 1]
    }

    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bar[tau - 1]
    }

    /// `alpha_bar` for a frame level; a clean frame has no noise at all.
    pub fn alpha_bar_at(&self, level: Level) -> f64 {
        match level {
            Level::Clean => 1.0,
            Level::Noisy(t) => self.alpha_bar(t),
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `z = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`, written into `out`.
    pub fn perturb_into(&self, x0: &[f64], tau: usize, eps: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(tau)?;
        if x0.len() != eps.len() {
            return Err(Error::ShapeMismatch {
                expected: x0.len(),
                actual: eps.len(),
            });
        }
        if out.len() != x0.len() {
            return Err(Error::ShapeMismatch {
                expected: x0.len(),
                actual: out.len(),
            });
        }
        let ab = self.alpha_bar(tau);
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        for ((o, &x), &e) in out.iter_mut().zip(x0).zip(eps) {
            *o = signal * x + noise * e;
        }
        Ok(())
    }

    pub fn forward_perturb(&self, x0: &[f64], tau: usize, eps: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x0.len()];
        self.perturb_into(x0, tau, eps, &mut out)?;
        Ok(out)
    }

    /// CSV dump with header `tau,beta,alpha_bar`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau,beta,alpha_bar")?;
        for (i, (b, ab)) in self.betas.iter().zip(&self.alpha_bar).enumerate() {
            writeln!(w, "{},{:e},{:e}", i + 1, b, ab)?;
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}
