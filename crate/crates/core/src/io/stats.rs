//! Moment and seam statistics of a generated stream, next to the values the
//! Gaussian-process prior predicts.

use std::io::Write;

use ndarray::ArrayView2;

use crate::denoise::{FrameShape, GaussianProcessSpec};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LAG: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub variance: f64,
    /// Lags `1..=max_lag`.
    pub autocorr: Vec<f64>,
    pub target_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub frames: usize,
    pub channels: Vec<ChannelStats>,
    /// Every feature pooled; `target_mean` is the mean of the prior means.
    pub pooled: ChannelStats,
    /// Mean squared step between consecutive frames away from any boundary.
    pub msd_interior: f64,
    /// Same, over the pairs `(i - 1, i)` for each boundary index `i`.
    pub msd_boundary: Option<f64>,
    pub target_variance: f64,
    /// `rho^k` for `k = 1..=max_lag`.
    pub target_autocorr: Vec<f64>,
    /// `2 sigma^2 (1 - rho)`.
    pub target_msd: f64,
}

impl StatsReport {
    pub const CSV_HEADER: &'static str = "metric,channel,lag,estimate,target";

    pub fn boundary_ratio(&self) -> Option<f64> {
        self.msd_boundary.map(|b| b / self.msd_interior)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let channels = self
            .channels
            .iter()
            .enumerate()
            .map(|(c, s)| (c.to_string(), s))
            .chain(std::iter::once(("all".to_string(), &self.pooled)));
        for (name, s) in channels {
            writeln!(w, "mean,{name},,{},{}", s.mean, s.target_mean)?;
            writeln!(w, "variance,{name},,{},{}", s.variance, self.target_variance)?;
            for (k, (r, t)) in s.autocorr.iter().zip(&self.target_autocorr).enumerate() {
                writeln!(w, "autocorr,{name},{},{r},{t}", k + 1)?;
            }
        }
        writeln!(w, "msd_interior,all,1,{},{}", self.msd_interior, self.target_msd)?;
        if let (Some(b), Some(ratio)) = (self.msd_boundary, self.boundary_ratio()) {
            writeln!(w, "msd_boundary,all,1,{b},{}", self.target_msd)?;
            writeln!(w, "boundary_ratio,all,1,{ratio},1")?;
        }
        Ok(())
    }
}

struct FeatureMoments {
    mean: f64,
    variance: f64,
    autocorr: Vec<f64>,
}

fn feature_moments(x: &[f64], max_lag: usize) -> FeatureMoments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss: f64 = centered.iter().map(|v| v * v).sum();
    let autocorr = (1..=max_lag)
        .map(|k| {
            if k >= x.len() || ss == 0.0 {
                return 0.0;
            }
            let cross: f64 = centered.iter().zip(&centered[k..]).map(|(a, b)| a * b).sum();
            cross / ss
        })
        .collect();
    FeatureMoments {
        mean,
        variance: ss / (n - 1.0),
        autocorr,
    }
}

fn average(parts: &[FeatureMoments], target_mean: f64, max_lag: usize) -> ChannelStats {
    let n = parts.len() as f64;
    ChannelStats {
        mean: parts.iter().map(|p| p.mean).sum::<f64>() / n,
        variance: parts.iter().map(|p| p.variance).sum::<f64>() / n,
        autocorr: (0..max_lag)
            .map(|k| parts.iter().map(|p| p.autocorr[k]).sum::<f64>() / n)
            .collect(),
        target_mean,
    }
}

/// Statistics of `frames` (one row per frame, `shape.len()` columns).
///
/// Per-channel figures average the per-feature estimates over that channel's
/// bins. `boundaries` lists frame indices `i` where frame `i` starts a new
/// independently sampled segment; the pair `(i - 1, i)` then counts as a seam.
pub fn stream_stats(
    frames: ArrayView2<'_, f64>,
    shape: FrameShape,
    spec: &GaussianProcessSpec,
    boundaries: Option<&[u64]>,
    max_lag: usize,
) -> Result<StatsReport> {
    let (n, dims) = frames.dim();
    if n < 2 {
        return Err(Error::InvalidCount(format!("need at least 2 frames, got {n}")));
    }
    if dims != shape.len() {
        return Err(Error::ShapeMismatch {
            expected: shape.len(),
            actual: dims,
        });
    }

    let features: Vec<FeatureMoments> = frames
        .columns()
        .into_iter()
        .map(|col| feature_moments(&col.to_vec(), max_lag))
        .collect();
    let prior_mean = |range: std::ops::Range<usize>| {
        let len = range.len() as f64;
        range.map(|d| spec.mean_of(d)).sum::<f64>() / len
    };
    let channels = features
        .chunks(shape.bins)
        .enumerate()
        .map(|(c, part)| average(part, prior_mean(c * shape.bins..(c + 1) * shape.bins), max_lag))
        .collect();
    let pooled = average(&features, prior_mean(0..dims), max_lag);

    let mut seam = vec![false; n];
    if let Some(bounds) = boundaries {
        for &b in bounds {
            let i = usize::try_from(b)
                .ok()
                .filter(|&i| i >= 1 && i < n)
                .ok_or_else(|| Error::InvalidRange(format!("boundary {b} outside 1..{n}")))?;
            seam[i] = true;
        }
    }
    let (mut interior, mut interior_pairs, mut boundary, mut boundary_pairs) = (0.0, 0usize, 0.0, 0usize);
    for (i, &at_seam) in seam.iter().enumerate().skip(1) {
        let step: f64 = frames
            .row(i)
            .iter()
            .zip(frames.row(i - 1))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / dims as f64;
        if at_seam {
            boundary += step;
            boundary_pairs += 1;
        } else {
            interior += step;
            interior_pairs += 1;
        }
    }
    if interior_pairs == 0 {
        return Err(Error::InvalidRange("every adjacent pair is a boundary".into()));
    }

    let rho = spec.effective_rho();
    Ok(StatsReport {
        frames: n,
        channels,
        pooled,
        msd_interior: interior / interior_pairs as f64,
        msd_boundary: (boundary_pairs > 0).then(|| boundary / boundary_pairs as f64),
        target_variance: spec.variance,
        target_autocorr: (1..=max_lag).map(|k| rho.powi(k as i32)).collect(),
        target_msd: 2.0 * spec.variance * (1.0 - rho),
    })
}

/// Boundary indices of back-to-back windows: `window, 2 window, ...` below `frames`.
pub fn window_grid(frames: u64, window: u64) -> Vec<u64> {
    (1..).map(|k| k * window).take_while(|&i| i < frames).collect()
}
