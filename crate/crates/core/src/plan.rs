//! Sampling trajectories: equally spaced baselines and region-focused
//! ("curved") schedules.
//!
//! A trajectory is a strictly decreasing list of timesteps from `M` down to
//! `1`. It is split into three contiguous regions by rank: `Initial` holds the
//! noisiest steps, `Final` the steps closest to clean. A curved schedule keeps
//! every step of one focused region and every `P`-th step of the others,
//! counting from each region's noisy end.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_BASE_STEPS: usize = 250;
pub const DEFAULT_SKIP: usize = 3;

/// Guards the floor in [`region_bounds`] against `0.1 + 0.2`-style noise.
const FRACTION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingRegion {
    /// Early sampling, timesteps near `M`.
    Initial,
    Middle,
    /// Late sampling, timesteps near `1`.
    Final,
}

impl SamplingRegion {
    pub const ALL: [SamplingRegion; 3] = [Self::Initial, Self::Middle, Self::Final];

    pub fn index(self) -> usize {
        match self {
            Self::Initial => 0,
            Self::Middle => 1,
            Self::Final => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Initial => "initial",
            Self::Middle => "middle",
            Self::Final => "final",
        }
    }
}

impl fmt::Display for SamplingRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "initial" => Ok(Self::Initial),
            "middle" => Ok(Self::Middle),
            "final" | "last" => Ok(Self::Final),
            other => Err(Error::InvalidRange(format!("unknown region {other:?}"))),
        }
    }
}

/// Share of the trajectory given to each region, ordered Initial, Middle, Final.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionFractions([f64; 3]);

impl RegionFractions {
    pub fn new(initial: f64, middle: f64, last: f64) -> Result<Self> {
        let f = [initial, middle, last];
        if f.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidFractions(format!("each fraction must be > 0, got {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFractions(format!("fractions sum to {sum}, not 1")));
        }
        Ok(Self(f))
    }

    pub fn thirds() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn get(&self, region: SamplingRegion) -> f64 {
        self.0[region.index()]
    }
}

impl Default for RegionFractions {
    fn default() -> Self {
        Self::thirds()
    }
}

impl FromStr for RegionFractions {
    type Err = Error;

    /// `"0.5,0.3,0.2"` in Initial, Middle, Final order.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidFractions(format!("{s:?}: {e}")))?;
        match parts[..] {
            [a, b, c] => Self::new(a, b, c),
            _ => Err(Error::InvalidFractions(format!("expected three values, got {s:?}"))),
        }
    }
}

/// Half-open timestep ranges partitioning `1..=M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionBounds {
    ranges: [Range<usize>; 3],
}

impl RegionBounds {
    pub fn get(&self, region: SamplingRegion) -> Range<usize> {
        self.ranges[region.index()].clone()
    }

    pub fn region_of(&self, tau: usize) -> Option<SamplingRegion> {
        SamplingRegion::ALL
            .into_iter()
            .find(|r| self.ranges[r.index()].contains(&tau))
    }
}

/// Region sizes for `count` ranked items, Initial first.
///
/// Initial gets `floor(count * f_initial)`, Middle brings the running total to
/// `floor(count * (f_initial + f_middle))`, and Final takes the remainder.
pub(crate) fn region_sizes(count: usize, fractions: &RegionFractions) -> Result<[usize; 3]> {
    let n = count as f64;
    let initial = (n * fractions.get(SamplingRegion::Initial) + FRACTION_SLACK).floor() as usize;
    let upper = (n * (fractions.get(SamplingRegion::Initial) + fractions.get(SamplingRegion::Middle)) + FRACTION_SLACK)
        .floor() as usize;
    let upper = upper.min(count);
    let sizes = [initial, upper.saturating_sub(initial), count - upper];
    if let Some(r) = SamplingRegion::ALL.into_iter().find(|r| sizes[r.index()] == 0) {
        return Err(Error::InvalidFractions(format!(
            "{r} region is empty for {count} steps with {fractions:?}"
        )));
    }
    Ok(sizes)
}

pub fn region_bounds(timesteps: usize, fractions: &RegionFractions) -> Result<RegionBounds> {
    let [initial, middle, _] = region_sizes(timesteps, fractions)?;
    let top = timesteps + 1;
    let mid_start = top - initial;
    let final_end = mid_start - middle;
    Ok(RegionBounds {
        ranges: [mid_start..top, final_end..mid_start, 1..final_end],
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepSchedule {
    timesteps: usize,
    steps: Vec<usize>,
    regions: Vec<SamplingRegion>,
    skip: usize,
    focus: Option<SamplingRegion>,
}

impl TimestepSchedule {
    /// Validates an externally supplied trajectory (e.g. an imported CSV).
    pub fn new(timesteps: usize, steps: Vec<usize>, regions: Vec<SamplingRegion>) -> Result<Self> {
        if steps.len() != regions.len() {
            return Err(Error::ShapeMismatch {
                expected: steps.len(),
                actual: regions.len(),
            });
        }
        if steps.first() != Some(&timesteps) || steps.last() != Some(&1) {
            return Err(Error::InvalidRange(format!(
                "schedule must run from {timesteps} down to 1"
            )));
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidRange("schedule must be strictly decreasing".into()));
        }
        Ok(Self {
            timesteps,
            steps,
            regions,
            skip: 1,
            focus: None,
        })
    }

    /// The full trajectory `M, M-1, ..., 1`.
    pub fn full(timesteps: usize) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::InvalidCount(format!("need M >= 2, got {timesteps}")));
        }
        equally_spaced(timesteps, timesteps)
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn regions(&self) -> &[SamplingRegion] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn skip(&self) -> usize {
        self.skip
    }

    pub fn focus(&self) -> Option<SamplingRegion> {
        self.focus
    }

    /// Next level after step `k` (0-based): the following timestep, or `None`
    /// when step `k` is the last one and the frame becomes clean.
    pub fn next_after(&self, k: usize) -> Option<usize> {
        self.steps.get(k + 1).copied()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,tau,region")?;
        for (k, (tau, region)) in self.steps.iter().zip(&self.regions).enumerate() {
            writeln!(w, "{},{},{}", k + 1, tau, region)?;
        }
        Ok(())
    }

    /// Reads the `index,tau,region` format; `M` is taken from the first row.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut steps = Vec::new();
        let mut regions = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("index")) {
                continue;
            }
            let bad = |msg: &str| Error::Csv {
                line: i + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split(',').collect();
            let [index, tau, region] = fields[..] else {
                return Err(bad("expected index,tau,region"));
            };
            let index: usize = index.trim().parse().map_err(|_| bad("bad index"))?;
            if index != steps.len() + 1 {
                return Err(bad("indices must count up from 1"));
            }
            steps.push(tau.trim().parse().map_err(|_| bad("bad tau"))?);
            regions.push(region.parse().map_err(|_| bad("bad region"))?);
        }
        let m = *steps.first().ok_or(Error::Csv {
            line: 1,
            msg: "no rows".into(),
        })?;
        Self::new(m, steps, regions)
    }
}

/// `t_k = M - round((M - 1) k / (n - 1))` for `k = 0..n`, halves rounding up.
pub fn equally_spaced(timesteps: usize, n: usize) -> Result<TimestepSchedule> {
    if n < 2 || n > timesteps {
        return Err(Error::InvalidCount(format!(
            "need 2 <= n <= M, got n={n}, M={timesteps}"
        )));
    }
    let span = (timesteps - 1) as u128;
    let d = (n - 1) as u128;
    let steps: Vec<usize> = (0..n as u128)
        .map(|k| timesteps - ((2 * span * k + d) / (2 * d)) as usize)
        .collect();
    let regions = ranked_regions(n, &RegionFractions::thirds())?;
    Ok(TimestepSchedule {
        timesteps,
        steps,
        regions,
        skip: 1,
        focus: None,
    })
}

fn ranked_regions(count: usize, fractions: &RegionFractions) -> Result<Vec<SamplingRegion>> {
    // thirds of a two-step schedule leave a region empty; label by position only
    if count < 3 {
        return Ok((0..count)
            .map(|k| {
                if k == 0 {
                    SamplingRegion::Initial
                } else {
                    SamplingRegion::Final
                }
            })
            .collect());
    }
    let sizes = region_sizes(count, fractions)?;
    Ok(SamplingRegion::ALL
        .into_iter()
        .flat_map(|r| std::iter::repeat_n(r, sizes[r.index()]))
        .collect())
}

/// Decimates `base` (strictly decreasing) around a focused region.
pub fn focus_on_base(
    base: &TimestepSchedule,
    focus: SamplingRegion,
    skip: usize,
    fractions: &RegionFractions,
) -> Result<TimestepSchedule> {
    if skip < 1 {
        return Err(Error::InvalidSkip(skip));
    }
    let n = base.len();
    if n < 3 {
        return Err(Error::InvalidCount(format!("need at least 3 base steps, got {n}")));
    }
    let sizes = region_sizes(n, fractions)?;
    let mut steps = Vec::new();
    let mut regions = Vec::new();
    let mut start = 0;
    for region in SamplingRegion::ALL {
        let size = sizes[region.index()];
        for offset in 0..size {
            let pos = start + offset;
            let keep = region == focus || offset % skip == 0 || pos == 0 || pos == n - 1;
            if keep {
                steps.push(base.steps[pos]);
                regions.push(region);
            }
        }
        start += size;
    }
    Ok(TimestepSchedule {
        timesteps: base.timesteps,
        steps,
        regions,
        skip,
        focus: Some(focus),
    })
}

/// Curved schedule over the raw trajectory `M..=1`.
pub fn region_focused(
    timesteps: usize,
    focus: SamplingRegion,
    skip: usize,
    fractions: &RegionFractions,
) -> Result<TimestepSchedule> {
    if skip < 1 {
        return Err(Error::InvalidSkip(skip));
    }
    if timesteps < 3 {
        return Err(Error::InvalidCount(format!("need M >= 3, got {timesteps}")));
    }
    focus_on_base(&TimestepSchedule::full(timesteps)?, focus, skip, fractions)
}

/// Parameters of a curved schedule: an equally spaced base of `base_steps`
/// over `1..=timesteps`, decimated by `skip` outside the focused region.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveConfig {
    pub timesteps: usize,
    pub base_steps: usize,
    pub skip: usize,
    pub fractions: RegionFractions,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            timesteps: crate::noise::DEFAULT_TIMESTEPS,
            base_steps: DEFAULT_BASE_STEPS,
            skip: DEFAULT_SKIP,
            fractions: RegionFractions::thirds(),
        }
    }
}

impl CurveConfig {
    pub fn base(&self) -> Result<TimestepSchedule> {
        equally_spaced(self.timesteps, self.base_steps.min(self.timesteps))
    }

    pub fn focused(&self, focus: SamplingRegion) -> Result<TimestepSchedule> {
        focus_on_base(&self.base()?, focus, self.skip, &self.fractions)
    }
}
