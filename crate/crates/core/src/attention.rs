//! Self-attention maps over a frame window and the schedule focus they suggest.
//!
//! Keys are laid out like the queue: `buffer_len` buffer positions, then the
//! diagonal from most denoised (nearest the buffer) to noisiest (the tail).
//! Post-buffer keys are split into Final, Middle and Initial ranges in that
//! order, using the same fractions as the timestep plan.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::plan::{equally_spaced, region_sizes, CurveConfig, RegionFractions, SamplingRegion, TimestepSchedule};

pub const MAP_MAGIC: [u8; 4] = *b"IAAM";
pub const MAP_VERSION: u32 = 1;
const MAP_HEADER_LEN: usize = 16;

/// Query-by-key attention scores, one row per query position.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    scores: Array2<f32>,
}

impl AttentionMap {
    pub fn new(scores: Array2<f32>) -> Result<Self> {
        let (q, k) = scores.dim();
        if q != k || q == 0 {
            return Err(Error::BadShape { q, k });
        }
        for (i, &v) in scores.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(i));
            }
            if v < 0.0 {
                return Err(Error::NegativeValue(i));
            }
        }
        Ok(Self { scores })
    }

    pub fn window_len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn scores(&self) -> &Array2<f32> {
        &self.scores
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAP_HEADER_LEN {
            return Err(Error::Truncated(format!(
                "attention header needs {MAP_HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
        if magic != MAP_MAGIC {
            return Err(Error::BadMagic {
                expected: MAP_MAGIC,
                found: magic,
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"));
        let version = word(4);
        if version != MAP_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (q, k) = (word(8) as usize, word(12) as usize);
        if q != k || q == 0 {
            return Err(Error::BadShape { q, k });
        }
        let payload = &bytes[MAP_HEADER_LEN..];
        let want = q * k * 4;
        if payload.len() != want {
            return Err(Error::Truncated(format!(
                "{q}x{k} map needs {want} payload bytes, got {}",
                payload.len()
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        Self::new(Array2::from_shape_vec((q, k), values).expect("length checked"))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (q, k) = self.scores.dim();
        w.write_all(&MAP_MAGIC)?;
        w.write_all(&MAP_VERSION.to_le_bytes())?;
        w.write_all(&(q as u32).to_le_bytes())?;
        w.write_all(&(k as u32).to_le_bytes())?;
        for v in self.scores.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_attention_map(path: impl AsRef<Path>) -> Result<AttentionMap> {
    AttentionMap::read_from(BufReader::new(File::open(path)?))
}

pub fn write_attention_map(map: &AttentionMap, path: impl AsRef<Path>) -> Result<()> {
    map.write_to(BufWriter::new(File::create(path)?))
}

/// Key-position ranges for each sampling region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRegions {
    ranges: [Range<usize>; 3],
}

impl KeyRegions {
    pub fn new(initial: Range<usize>, middle: Range<usize>, last: Range<usize>) -> Self {
        Self {
            ranges: [initial, middle, last],
        }
    }

    /// Splits keys `buffer_len..window_len`: Final nearest the buffer, Initial at the tail.
    pub fn from_fractions(window_len: usize, buffer_len: usize, fractions: &RegionFractions) -> Result<Self> {
        if buffer_len >= window_len {
            return Err(Error::InvalidRange(format!(
                "buffer of {buffer_len} leaves no keys in a window of {window_len}"
            )));
        }
        let sizes = region_sizes(window_len - buffer_len, fractions).map_err(|e| Error::EmptyRegion(e.to_string()))?;
        let final_end = buffer_len + sizes[SamplingRegion::Final.index()];
        let middle_end = final_end + sizes[SamplingRegion::Middle.index()];
        Ok(Self::new(
            middle_end..window_len,
            final_end..middle_end,
            buffer_len..final_end,
        ))
    }

    pub fn get(&self, region: SamplingRegion) -> Range<usize> {
        self.ranges[region.index()].clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionProfile {
    scores: [f64; 3],
}

impl AttentionProfile {
    pub fn new(initial: f64, middle: f64, last: f64) -> Result<Self> {
        let scores = [initial, middle, last];
        for (i, &v) in scores.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(i));
            }
            if v < 0.0 {
                return Err(Error::NegativeValue(i));
            }
        }
        Ok(Self { scores })
    }

    /// Scores listed by key position: nearest the buffer first, tail last.
    pub fn by_key_position(near_buffer: f64, middle: f64, tail: f64) -> Result<Self> {
        Self::new(tail, middle, near_buffer)
    }

    pub fn get(&self, region: SamplingRegion) -> f64 {
        self.scores[region.index()]
    }

    pub fn is_degenerate(&self) -> bool {
        self.scores.iter().all(|&s| s == 0.0)
    }

    pub fn write_csv<W: Write>(&self, focus: SamplingRegion, mut w: W) -> std::io::Result<()> {
        writeln!(w, "region,score")?;
        for region in SamplingRegion::ALL {
            writeln!(w, "{region},{}", self.get(region))?;
        }
        writeln!(w, "focus,{focus}")
    }
}

/// Mean score over every post-buffer query and the keys of each region.
pub fn region_scores(map: &AttentionMap, buffer_len: usize, keys: &KeyRegions) -> Result<AttentionProfile> {
    let len = map.window_len();
    if buffer_len >= len {
        return Err(Error::InvalidRange(format!(
            "buffer of {buffer_len} leaves no queries in a window of {len}"
        )));
    }
    let queries = map.scores.slice(s![buffer_len.., ..]);
    let mut out = [0.0; 3];
    for region in SamplingRegion::ALL {
        let range = keys.get(region);
        if range.is_empty() {
            return Err(Error::EmptyRegion(format!("{region} key range {range:?}")));
        }
        if range.start < buffer_len || range.end > len {
            return Err(Error::InvalidRange(format!(
                "{region} key range {range:?} outside {buffer_len}..{len}"
            )));
        }
        let block = queries.slice(s![.., range]);
        let sum: f64 = block.iter().map(|&v| f64::from(v)).sum();
        out[region.index()] = sum / block.len() as f64;
    }
    AttentionProfile::new(out[0], out[1], out[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FocusChoice {
    pub region: SamplingRegion,
    /// More than one region shared the top score.
    pub tied: bool,
}

const TIE_PRIORITY: [SamplingRegion; 3] = [SamplingRegion::Middle, SamplingRegion::Final, SamplingRegion::Initial];

/// Region with the highest score; exact ties go Middle, then Final, then Initial.
pub fn recommend_focus(profile: &AttentionProfile) -> FocusChoice {
    let best = profile.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut top = TIE_PRIORITY.into_iter().filter(|&r| profile.get(r) == best);
    let region = top.next().expect("some region holds the maximum");
    FocusChoice {
        region,
        tied: top.next().is_some(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvedPlan {
    pub schedule: TimestepSchedule,
    pub choice: FocusChoice,
    /// All scores were zero; `schedule` is equally spaced instead of curved.
    pub degenerate: bool,
}

/// The curved schedule focused where the profile points.
pub fn curved_from_profile(profile: &AttentionProfile, cfg: &CurveConfig) -> Result<CurvedPlan> {
    let choice = recommend_focus(profile);
    let curved = cfg.focused(choice.region)?;
    if profile.is_degenerate() {
        return Ok(CurvedPlan {
            schedule: equally_spaced(cfg.timesteps, curved.len())?,
            choice,
            degenerate: true,
        });
    }
    Ok(CurvedPlan {
        schedule: curved,
        choice,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::region_focused;

    fn map_with(len: usize, f: impl Fn(usize, usize) -> f32) -> AttentionMap {
        AttentionMap::new(Array2::from_shape_fn((len, len), |(q, k)| f(q, k))).unwrap()
    }

    #[test]
    fn key_regions_follow_queue_order() {
        let keys = KeyRegions::from_fractions(12, 3, &RegionFractions::thirds()).unwrap();
        assert_eq!(keys.get(SamplingRegion::Final), 3..6);
        assert_eq!(keys.get(SamplingRegion::Middle), 6..9);
        assert_eq!(keys.get(SamplingRegion::Initial), 9..12);
        assert!(KeyRegions::from_fractions(4, 4, &RegionFractions::thirds()).is_err());
        assert!(matches!(
            KeyRegions::from_fractions(5, 3, &RegionFractions::thirds()),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn uniform_map_scores_equal() {
        let map = map_with(10, |_, _| 0.25);
        let keys = KeyRegions::from_fractions(10, 1, &RegionFractions::thirds()).unwrap();
        let p = region_scores(&map, 1, &keys).unwrap();
        assert_eq!(p.get(SamplingRegion::Initial), 0.25);
        assert_eq!(p.get(SamplingRegion::Middle), 0.25);
        assert_eq!(p.get(SamplingRegion::Final), 0.25);
        let choice = recommend_focus(&p);
        assert_eq!(choice.region, SamplingRegion::Middle);
        assert!(choice.tied);
    }

    #[test]
    fn mass_near_buffer_points_to_final() {
        let map = map_with(13, |_, k| if (4..7).contains(&k) { 1.0 } else { 0.01 });
        let keys = KeyRegions::from_fractions(13, 4, &RegionFractions::thirds()).unwrap();
        let p = region_scores(&map, 4, &keys).unwrap();
        assert!(p.get(SamplingRegion::Final) > 10.0 * p.get(SamplingRegion::Initial));
        assert_eq!(recommend_focus(&p).region, SamplingRegion::Final);
    }

    #[test]
    fn mass_on_tail_points_to_initial() {
        let map = map_with(13, |_, k| if k >= 10 { 1.0 } else { 0.01 });
        let keys = KeyRegions::from_fractions(13, 4, &RegionFractions::thirds()).unwrap();
        let p = region_scores(&map, 4, &keys).unwrap();
        assert!(p.get(SamplingRegion::Initial) > 10.0 * p.get(SamplingRegion::Final));
        assert_eq!(recommend_focus(&p).region, SamplingRegion::Initial);
    }

    #[test]
    fn empty_range_is_rejected() {
        let map = map_with(6, |_, _| 1.0);
        let keys = KeyRegions::new(4..6, 3..3, 1..3);
        assert!(matches!(region_scores(&map, 1, &keys), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn focus_examples() {
        let p = AttentionProfile::by_key_position(0.9, 0.05, 0.05).unwrap();
        assert_eq!(
            recommend_focus(&p),
            FocusChoice {
                region: SamplingRegion::Final,
                tied: false
            }
        );
        let p = AttentionProfile::by_key_position(0.05, 0.05, 0.9).unwrap();
        assert_eq!(recommend_focus(&p).region, SamplingRegion::Initial);
        let third = 1.0 / 3.0;
        let p = AttentionProfile::new(third, third, third).unwrap();
        assert_eq!(
            recommend_focus(&p),
            FocusChoice {
                region: SamplingRegion::Middle,
                tied: true
            }
        );
        // two-way ties follow the same order
        let p = AttentionProfile::new(0.4, 0.2, 0.4).unwrap();
        assert_eq!(recommend_focus(&p).region, SamplingRegion::Final);
        let p = AttentionProfile::new(0.4, 0.4, 0.2).unwrap();
        assert_eq!(recommend_focus(&p).region, SamplingRegion::Middle);
    }

    #[test]
    fn curved_plan_matches_region_focused() {
        let cfg = CurveConfig {
            timesteps: 12,
            base_steps: 12,
            skip: 2,
            fractions: RegionFractions::thirds(),
        };
        let p = AttentionProfile::by_key_position(0.9, 0.05, 0.05).unwrap();
        let plan = curved_from_profile(&p, &cfg).unwrap();
        assert_eq!(plan.schedule.steps(), &[12, 10, 8, 6, 4, 3, 2, 1]);
        assert_eq!(
            plan.schedule,
            region_focused(12, SamplingRegion::Final, 2, &RegionFractions::thirds()).unwrap()
        );
        assert!(!plan.degenerate);
    }

    #[test]
    fn zero_profile_falls_back_to_equal_spacing() {
        let cfg = CurveConfig::default();
        let plan = curved_from_profile(&AttentionProfile::new(0.0, 0.0, 0.0).unwrap(), &cfg).unwrap();
        assert!(plan.degenerate && plan.choice.tied);
        assert_eq!(plan.schedule.len(), 140);
        assert_eq!(plan.schedule, equally_spaced(1000, 140).unwrap());
    }

    #[test]
    fn profile_rejects_bad_scores() {
        assert!(matches!(
            AttentionProfile::new(-0.1, 0.0, 0.0),
            Err(Error::NegativeValue(0))
        ));
        assert!(matches!(
            AttentionProfile::new(0.0, f64::NAN, 0.0),
            Err(Error::NonFiniteValue(1))
        ));
    }

    #[test]
    fn bytes_round_trip() {
        let map = map_with(4, |q, k| (q * 4 + k) as f32 * 0.1);
        let mut buf = Vec::new();
        map.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 16 * 4);
        assert_eq!(&buf[..4], b"IAAM");
        assert_eq!(AttentionMap::from_bytes(&buf).unwrap(), map);
    }

    #[test]
    fn rejects_malformed_bytes() {
        let mut buf = Vec::new();
        map_with(2, |_, _| 1.0).write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(AttentionMap::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(
            AttentionMap::from_bytes(&bad),
            Err(Error::UnsupportedVersion(2))
        ));
        assert!(matches!(
            AttentionMap::from_bytes(&buf[..buf.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(AttentionMap::from_bytes(&buf[..10]), Err(Error::Truncated(_))));
        let mut bad = buf.clone();
        bad[12..16].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(
            AttentionMap::from_bytes(&bad),
            Err(Error::BadShape { q: 2, k: 3 })
        ));
        let mut bad = buf.clone();
        bad[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(AttentionMap::from_bytes(&bad), Err(Error::NonFiniteValue(0))));
        let mut bad = buf;
        bad[20..24].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(AttentionMap::from_bytes(&bad), Err(Error::NegativeValue(1))));
    }

    #[test]
    fn report_csv() {
        let p = AttentionProfile::new(0.5, 0.25, 0.125).unwrap();
        let mut out = Vec::new();
        p.write_csv(recommend_focus(&p).region, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "region,score\ninitial,0.5\nmiddle,0.25\nfinal,0.125\nfocus,initial\n"
        );
    }
}
