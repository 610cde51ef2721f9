//! Exact ε-predictors for Gaussian-process data.
//!
//! Each feature column of a window is an independent stationary process over
//! frames with covariance `sigma^2 rho^|i-j|`. A noisy frame observes
//! `z_i = sqrt(a_i) x_i + sqrt(1 - a_i) eps_i`; a clean frame observes `x_i`
//! exactly. The predictor returns `(z_i - sqrt(a_i) E[x_i | z]) / sqrt(1 - a_i)`.

use std::sync::Mutex;

use ndarray::{Array1, Array2, ArrayViewMut2};

use super::{Denoiser, FrameWindow};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Tridiagonal};
use crate::noise::{Level, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpMode {
    /// Independent frames; `rho` is ignored.
    FrameLocal,
    Ar1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProcessSpec {
    /// Mean per frequency bin. Feature `d` of a frame uses `mean[d % mean.len()]`.
    pub mean: Vec<f64>,
    pub variance: f64,
    pub rho: f64,
    pub mode: GpMode,
}

impl GaussianProcessSpec {
    pub fn frame_local(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let spec = Self {
            mean,
            variance,
            rho: 0.0,
            mode: GpMode::FrameLocal,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ar1(mean: Vec<f64>, variance: f64, rho: f64) -> Result<Self> {
        let spec = Self {
            mean,
            variance,
            rho,
            mode: GpMode::Ar1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidSpec("mean must be a nonempty finite vector".into()));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "variance must be > 0, got {}",
                self.variance
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidSpec(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// Lag correlation actually in force (zero for frame-local specs).
    pub fn effective_rho(&self) -> f64 {
        match self.mode {
            GpMode::FrameLocal => 0.0,
            GpMode::Ar1 => self.rho,
        }
    }

    pub fn mean_of(&self, feature: usize) -> f64 {
        self.mean[feature % self.mean.len()]
    }

    pub fn covariance(&self, lag: usize) -> f64 {
        self.variance * self.effective_rho().powi(lag as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GpSolver {
    /// O(L) solve in the precision (information) form; exact for AR(1).
    #[default]
    Banded,
    /// Dense Cholesky of the observation covariance, cached per level layout.
    Dense,
}

#[derive(Debug)]
pub struct GaussianProcessDenoiser {
    spec: GaussianProcessSpec,
    solver: GpSolver,
    gain_cache: Mutex<Option<(Vec<Level>, Array2<f64>)>>,
}

impl Clone for GaussianProcessDenoiser {
    fn clone(&self) -> Self {
        Self::with_solver(self.spec.clone(), self.solver)
    }
}

impl GaussianProcessDenoiser {
    pub fn new(spec: GaussianProcessSpec) -> Self {
        Self::with_solver(spec, GpSolver::default())
    }

    pub fn with_solver(spec: GaussianProcessSpec, solver: GpSolver) -> Self {
        Self {
            spec,
            solver,
            gain_cache: Mutex::new(None),
        }
    }

    pub fn spec(&self) -> &GaussianProcessSpec {
        &self.spec
    }

    pub fn solver(&self) -> GpSolver {
        self.solver
    }

    /// Writes `E[x | z]` for every frame into `out`.
    pub fn posterior_mean(
        &self,
        window: &FrameWindow<'_>,
        sched: &NoiseSchedule,
        mut out: ArrayViewMut2<'_, f64>,
    ) -> Result<()> {
        window.validate(sched)?;
        let dims = window.values.ncols();
        if !dims.is_multiple_of(self.spec.mean.len()) {
            return Err(Error::ShapeMismatch {
                expected: self.spec.mean.len(),
                actual: dims,
            });
        }
        if out.dim() != window.values.dim() {
            return Err(Error::ShapeMismatch {
                expected: window.values.len(),
                actual: out.len(),
            });
        }
        let alpha: Vec<f64> = window.levels.iter().map(|l| sched.alpha_bar_at(*l)).collect();
        match (self.spec.mode, self.solver) {
            (GpMode::FrameLocal, _) => self.frame_local_mean(window, &alpha, out.view_mut()),
            (GpMode::Ar1, GpSolver::Banded) => self.banded_mean(window, &alpha, out.view_mut())?,
            (GpMode::Ar1, GpSolver::Dense) => self.dense_mean(window, &alpha, out.view_mut())?,
        }
        Ok(())
    }

    fn frame_local_mean(&self, window: &FrameWindow<'_>, alpha: &[f64], mut out: ArrayViewMut2<'_, f64>) {
        let var = self.spec.variance;
        for (i, (&a, level)) in alpha.iter().zip(window.levels).enumerate() {
            let z = window.values.row(i);
            let mut row = out.row_mut(i);
            if level.is_clean() {
                row.assign(&z);
                continue;
            }
            let gain = var * a.sqrt() / (a * var + 1.0 - a);
            for (d, (o, &zv)) in row.iter_mut().zip(z.iter()).enumerate() {
                let mu = self.spec.mean_of(d);
                *o = mu + gain * (zv - a.sqrt() * mu);
            }
        }
    }

    fn banded_mean(&self, window: &FrameWindow<'_>, alpha: &[f64], mut out: ArrayViewMut2<'_, f64>) -> Result<()> {
        let len = alpha.len();
        let rho = self.spec.rho;
        let scale = 1.0 / (self.spec.variance * (1.0 - rho * rho));
        // prior precision of the AR(1) chain: tridiagonal
        let q_diag = |i: usize| -> f64 {
            if len == 1 {
                1.0 / self.spec.variance
            } else if i == 0 || i == len - 1 {
                scale
            } else {
                scale * (1.0 + rho * rho)
            }
        };
        let q_off = -rho * scale;

        let free: Vec<usize> = (0..len).filter(|&i| !window.levels[i].is_clean()).collect();
        for i in (0..len).filter(|&i| window.levels[i].is_clean()) {
            out.row_mut(i).assign(&window.values.row(i));
        }
        if free.is_empty() {
            return Ok(());
        }
        let diag: Vec<f64> = free.iter().map(|&i| q_diag(i) + alpha[i] / (1.0 - alpha[i])).collect();
        let off: Vec<f64> = free
            .windows(2)
            .map(|w| if w[1] == w[0] + 1 { q_off } else { 0.0 })
            .collect();
        let factor = Tridiagonal::factor(&diag, &off)?;

        let mut rhs = vec![0.0; free.len()];
        for d in 0..window.values.ncols() {
            let mu = self.spec.mean_of(d);
            let col = window.values.column(d);
            for (k, &i) in free.iter().enumerate() {
                let (a, s) = (alpha[i], 1.0 - alpha[i]);
                let mut r = a.sqrt() / s * (col[i] - a.sqrt() * mu);
                for j in [i.wrapping_sub(1), i + 1] {
                    if j < len && window.levels[j].is_clean() {
                        r -= q_off * (col[j] - mu);
                    }
                }
                rhs[k] = r;
            }
            factor.solve_in_place(&mut rhs);
            for (k, &i) in free.iter().enumerate() {
                out[[i, d]] = mu + rhs[k];
            }
        }
        Ok(())
    }

    /// `G = Sigma A (A Sigma A + S)^-1`, so `E[x|z] = mu + G (z - A mu)`.
    fn dense_gain(&self, alpha: &[f64]) -> Result<Array2<f64>> {
        let len = alpha.len();
        let root: Vec<f64> = alpha.iter().map(|a| a.sqrt()).collect();
        let cov = Array2::from_shape_fn((len, len), |(i, j)| self.spec.covariance(i.abs_diff(j)));
        let k = Array2::from_shape_fn((len, len), |(i, j)| {
            let noise = if i == j { 1.0 - alpha[i] } else { 0.0 };
            root[i] * cov[[i, j]] * root[j] + noise
        });
        let chol = Cholesky::factor(&k)?;
        // column j of K^-1 (A Sigma) is row j of the gain
        let mut gain = Array2::<f64>::zeros((len, len));
        for j in 0..len {
            let mut col: Array1<f64> = (0..len).map(|i| root[i] * cov[[i, j]]).collect();
            chol.solve_in_place(col.view_mut());
            gain.row_mut(j).assign(&col);
        }
        Ok(gain)
    }

    fn dense_mean(&self, window: &FrameWindow<'_>, alpha: &[f64], mut out: ArrayViewMut2<'_, f64>) -> Result<()> {
        let mut cache = self.gain_cache.lock().unwrap_or_else(|e| e.into_inner());
        let hit = matches!(&*cache, Some((levels, _)) if levels.as_slice() == window.levels);
        if !hit {
            *cache = Some((window.levels.to_vec(), self.dense_gain(alpha)?));
        }
        let gain = &cache.as_ref().expect("populated above").1;
        let len = alpha.len();
        let mut centered = Array1::<f64>::zeros(len);
        for d in 0..window.values.ncols() {
            let mu = self.spec.mean_of(d);
            for i in 0..len {
                centered[i] = window.values[[i, d]] - alpha[i].sqrt() * mu;
            }
            let post = gain.dot(&centered);
            for i in 0..len {
                out[[i, d]] = mu + post[i];
            }
        }
        Ok(())
    }
}

impl Denoiser for GaussianProcessDenoiser {
    fn predict_eps(
        &self,
        window: &FrameWindow<'_>,
        sched: &NoiseSchedule,
        mut eps: ArrayViewMut2<'_, f64>,
    ) -> Result<()> {
        self.posterior_mean(window, sched, eps.view_mut())?;
        for (i, level) in window.levels.iter().enumerate() {
            let mut row = eps.row_mut(i);
            match *level {
                Level::Clean => row.fill(0.0),
                Level::Noisy(t) => {
                    let a = sched.alpha_bar(t);
                    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
                    for (e, &z) in row.iter_mut().zip(window.values.row(i)) {
                        *e = (z - sa * *e) / sn;
                    }
                }
            }
        }
        Ok(())
    }
}
