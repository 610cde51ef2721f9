//! Independent reference computations and property checks shared by the
//! integration suites. Nothing here calls into the library's numerics: the
//! oracles rebuild noise levels, Gaussian conditioning and DDIM contraction
//! from scratch.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Cursor;

use diagstream::attention::{curved_from_profile, AttentionMap, AttentionProfile};
use diagstream::denoise::{
    ddim_step, Denoiser, FrameShape, FrameWindow, GaussianProcessDenoiser, GaussianProcessSpec, GpSolver,
};
use diagstream::fifo::{BufferMode, DiagonalQueue, QueueConfig};
use diagstream::io::FrameStream;
use diagstream::noise::{Level, NoiseSchedule};
use diagstream::plan::{region_bounds, region_focused, CurveConfig, RegionFractions, SamplingRegion};
use diagstream::sampler::SamplerContext;
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// ---------------------------------------------------------------- oracles

/// `alpha_bar` for `tau = 1..=m` of a linear beta ramp, index `tau - 1`.
pub fn alpha_bars(m: usize, beta_start: f64, beta_end: f64) -> Vec<f64> {
    let mut prod = 1.0;
    (0..m)
        .map(|i| {
            let beta = if m == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (m - 1) as f64
            };
            prod *= 1.0 - beta;
            prod
        })
        .collect()
}

pub fn default_alpha_bars() -> Vec<f64> {
    alpha_bars(1000, 1e-4, 2e-2)
}

/// Solves `a x = b` for every column of `b` by Gauss-Jordan elimination with
/// partial pivoting.
pub fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular system");
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for v in b[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col];
            if f == 0.0 {
                continue;
            }
            let pivot_row = a[col].clone();
            for (v, p) in a[row].iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            for k in 0..b[row].len() {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    b
}

/// Exact `eps` prediction by conditioning the joint Gaussian of each feature
/// column on every observation in the window.
///
/// Prior `x ~ N(mu, sigma2 rho^|i-j|)`; a noisy frame observes
/// `z = sqrt(a) x + sqrt(1-a) n`, a clean frame observes `x` itself.
pub fn gp_eps_bruteforce(
    z: &Array2<f64>,
    levels: &[Level],
    ab: &[f64],
    mean: &[f64],
    sigma2: f64,
    rho: f64,
) -> Array2<f64> {
    let (len, dims) = z.dim();
    let a: Vec<f64> = levels
        .iter()
        .map(|l| match l {
            Level::Clean => 1.0,
            Level::Noisy(t) => ab[t - 1],
        })
        .collect();
    let cov = |i: usize, j: usize| sigma2 * rho.powi((i as i64 - j as i64).unsigned_abs() as i32);
    // K = A Sigma A + S
    let k: Vec<Vec<f64>> = (0..len)
        .map(|i| {
            (0..len)
                .map(|j| {
                    let s = if i == j { 1.0 - a[i] } else { 0.0 };
                    a[i].sqrt() * cov(i, j) * a[j].sqrt() + s
                })
                .collect()
        })
        .collect();
    // right-hand sides: residual z - sqrt(a) mu for every feature
    let rhs: Vec<Vec<f64>> = (0..len)
        .map(|i| {
            (0..dims)
                .map(|d| z[[i, d]] - a[i].sqrt() * mean[d % mean.len()])
                .collect()
        })
        .collect();
    let w = gauss_jordan(k, rhs);
    let mut eps = Array2::zeros((len, dims));
    for i in 0..len {
        if levels[i] == Level::Clean {
            continue;
        }
        for d in 0..dims {
            let post: f64 = mean[d % mean.len()] + (0..len).map(|j| cov(i, j) * a[j].sqrt() * w[j][d]).sum::<f64>();
            eps[[i, d]] = (z[[i, d]] - a[i].sqrt() * post) / (1.0 - a[i]).sqrt();
        }
    }
    eps
}

/// Variance left after deterministic DDIM with the exact `eps` of a
/// standard-normal prior, starting from unit-variance noise at `steps[0]`.
///
/// Writing `sqrt(a) = cos(theta)`, each step maps `z` to `cos(theta' - theta) z`.
pub fn ddim_variance(steps: &[usize], ab: &[f64]) -> f64 {
    let theta = |a: f64| a.sqrt().acos();
    let mut levels: Vec<f64> = steps.iter().map(|&t| theta(ab[t - 1])).collect();
    levels.push(0.0);
    levels.windows(2).map(|w| (w[0] - w[1]).cos().powi(2)).product()
}

/// Stationary AR(1) sample path.
pub fn ar1_path(n: usize, mean: f64, sigma2: f64, rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = (sigma2 * (1.0 - rho * rho)).sqrt();
    let start: f64 = StandardNormal.sample(rng);
    let mut x = sigma2.sqrt() * start;
    (0..n)
        .map(|i| {
            if i > 0 {
                let e: f64 = StandardNormal.sample(rng);
                x = rho * x + innov * e;
            }
            mean + x
        })
        .collect()
}

pub fn lag1(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    let cross: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cross / ss
}

// ------------------------------------------------------- property checks

pub type PropResult = Result<(), String>;

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> PropResult {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn fractions_strategy() -> impl Strategy<Value = RegionFractions> {
    (1u32..100, 1u32..100, 1u32..100).prop_map(|(a, b, c)| {
        let s = f64::from(a + b + c);
        let (fa, fb) = (f64::from(a) / s, f64::from(b) / s);
        RegionFractions::new(fa, fb, 1.0 - fa - fb).unwrap()
    })
}

fn region_strategy() -> impl Strategy<Value = SamplingRegion> {
    prop_oneof![
        Just(SamplingRegion::Initial),
        Just(SamplingRegion::Middle),
        Just(SamplingRegion::Final)
    ]
}

/// Ordering, endpoints, the length formula and the skip budget of curved
/// schedules over random `M`, `P`, fractions and focus.
pub fn schedule_properties(cases: u32) -> PropResult {
    let strategy = (3usize..1500, 1usize..12, fractions_strategy(), region_strategy());
    run(cases, strategy, |(m, p, fractions, focus)| {
        let Ok(bounds) = region_bounds(m, &fractions) else {
            // a region rounds to zero steps; rejected consistently
            prop_assert!(region_focused(m, focus, p, &fractions).is_err());
            return Ok(());
        };
        let s = region_focused(m, focus, p, &fractions).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let steps = s.steps();
        prop_assert_eq!(steps[0], m);
        prop_assert_eq!(*steps.last().unwrap(), 1);
        prop_assert!(steps.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(steps.iter().all(|&t| (1..=m).contains(&t)));

        // direct count: focused region whole, others ceil(size / P), plus the
        // forced final endpoint when decimation would drop it
        let size = |r: SamplingRegion| bounds.get(r).len();
        let mut expected = 0;
        for r in SamplingRegion::ALL {
            expected += if r == focus { size(r) } else { size(r).div_ceil(p) };
        }
        let forced = focus != SamplingRegion::Final && (size(SamplingRegion::Final) - 1) % p != 0;
        prop_assert_eq!(steps.len(), expected + usize::from(forced));
        prop_assert!(steps.len() - expected <= 1);
        let focused: Vec<usize> = bounds.get(focus).rev().collect();
        let kept: Vec<usize> = steps
            .iter()
            .copied()
            .filter(|t| bounds.get(focus).contains(t))
            .collect();
        prop_assert_eq!(kept, focused);

        let coarser = region_focused(m, focus, p + 1, &fractions).unwrap();
        prop_assert!(coarser.len() <= steps.len());
        Ok(())
    })
}

/// A non-tied profile yields exactly the schedule of its argmax region.
pub fn profile_schedule_properties(cases: u32) -> PropResult {
    let strategy = (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 3usize..400, 1usize..6);
    run(cases, strategy, |(i, mid, f, m, p)| {
        let profile = AttentionProfile::new(i, mid, f).unwrap();
        let scores = [i, mid, f];
        let best = scores.iter().copied().fold(f64::MIN, f64::max);
        prop_assume!(scores.iter().filter(|&&s| s == best).count() == 1);
        let argmax = SamplingRegion::ALL[scores.iter().position(|&s| s == best).unwrap()];
        let cfg = CurveConfig {
            timesteps: m,
            base_steps: m,
            skip: p,
            fractions: RegionFractions::thirds(),
        };
        let plan = curved_from_profile(&profile, &cfg).unwrap();
        prop_assert_eq!(plan.choice.region, argmax);
        prop_assert!(!plan.choice.tied && !plan.degenerate);
        prop_assert_eq!(
            plan.schedule,
            region_focused(m, argmax, p, &RegionFractions::thirds()).unwrap()
        );
        Ok(())
    })
}

/// Counts per timestep, clean frames under 0.
fn level_multiset(levels: &[Level]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &l in levels {
        *m.entry(l.timestep().unwrap_or(0)).or_insert(0) += 1;
    }
    m
}

/// Steps random queues and checks after every step that the level multiset is
/// `b` clean slots plus one slot per schedule step, and that buffer rows are
/// never rewritten: static buffers keep their primer frames bit for bit,
/// sliding buffers hold exactly the last `b` emitted frames. Returns the
/// number of steps taken.
pub fn queue_properties(cases: u32) -> Result<u64, String> {
    let total = std::sync::atomic::AtomicU64::new(0);
    let strategy = (
        2usize..12,
        0usize..6,
        any::<bool>(),
        any::<u64>(),
        30usize..60,
        any::<bool>(),
    );
    run(cases, strategy, |(n, b, sliding, seed, steps, ar1)| {
        let sched = NoiseSchedule::default();
        let plan = diagstream::plan::equally_spaced(1000, n).unwrap();
        let spec = if ar1 {
            GaussianProcessSpec::ar1(vec![0.3], 1.2, 0.8).unwrap()
        } else {
            GaussianProcessSpec::frame_local(vec![0.3], 1.2).unwrap()
        };
        let den = GaussianProcessDenoiser::new(spec);
        let ctx = SamplerContext::new(&den, &sched, &plan).unwrap();
        let cfg = QueueConfig {
            buffer_len: b,
            buffer_mode: if sliding {
                BufferMode::Sliding
            } else {
                BufferMode::Static
            },
            shape: FrameShape::new(1, 3).unwrap(),
            seed,
        };
        let mut q = DiagonalQueue::init(&ctx, &cfg).unwrap();
        let mut expected: Vec<Level> = vec![Level::Clean; b];
        expected.extend(plan.steps().iter().map(|&t| Level::Noisy(t)));
        let expected = level_multiset(&expected);
        let primer_buffer = q.buffer().to_owned();
        let mut emitted: Vec<Vec<f64>> = Vec::new();

        for _ in 0..steps {
            let frame = q.step(&ctx).unwrap().to_vec();
            emitted.push(frame);
            prop_assert_eq!(level_multiset(q.levels()), expected.clone());
            let buffer = q.buffer();
            if sliding {
                let held = emitted.len().min(b);
                for (r, row) in buffer.rows().into_iter().skip(b - held).enumerate() {
                    let src = &emitted[emitted.len() - held + r];
                    prop_assert!(row.iter().zip(src).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            } else {
                prop_assert!(buffer
                    .iter()
                    .zip(primer_buffer.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        total.fetch_add(steps as u64, std::sync::atomic::Ordering::Relaxed);
        Ok(())
    })?;
    Ok(total.into_inner())
}

/// Stepping with the true noise recovers the clean frame, directly or via an
/// intermediate level.
pub fn ddim_inversion_properties(cases: u32) -> PropResult {
    let sched = NoiseSchedule::default();
    let strategy = (
        2usize..=1000,
        prop::collection::vec(-5.0f64..5.0, 1..16),
        any::<u64>(),
        0.0f64..1.0,
    );
    run(cases, strategy, |(tau, x0, seed, frac)| {
        let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
        let eps: Vec<f64> = x0.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = sched.forward_perturb(&x0, tau, &eps).unwrap();
        let close = |got: &[f64]| {
            got.iter()
                .zip(&x0)
                .all(|(g, x)| (g - x).abs() <= 1e-6 * x.abs().max(1.0))
        };
        let direct = ddim_step(&z, &eps, tau, Level::Clean, &sched).unwrap();
        prop_assert!(close(&direct), "direct {direct:?} vs {x0:?}");
        let mid = 1 + ((tau - 1) as f64 * frac) as usize;
        if mid < tau {
            let zm = ddim_step(&z, &eps, tau, Level::Noisy(mid), &sched).unwrap();
            let back = ddim_step(&zm, &eps, mid, Level::Clean, &sched).unwrap();
            prop_assert!(close(&back));
        }
        Ok(())
    })
}

/// Both solvers against [`gp_eps_bruteforce`] on random windows of up to
/// eight frames, with random clean frames mixed in.
pub fn gp_oracle_properties(cases: u32) -> PropResult {
    let ab = default_alpha_bars();
    let sched = NoiseSchedule::default();
    let strategy = (
        1usize..=8,
        1usize..4,
        prop::collection::vec(0usize..=1000, 8),
        any::<u64>(),
        0.2f64..3.0,
        0.0f64..0.95,
        prop::collection::vec(-2.0f64..2.0, 1..3),
        any::<bool>(),
    );
    run(
        cases,
        strategy,
        |(len, dims, raw_levels, seed, sigma2, rho, mean, ar1)| {
            let levels: Vec<Level> = raw_levels[..len]
                .iter()
                .map(|&t| if t == 0 { Level::Clean } else { Level::Noisy(t) })
                .collect();
            let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
            let z = Array2::from_shape_fn((len, dims), |_| 2.0 * rng.random::<f64>() - 1.0);
            let dims_ok = dims % mean.len() == 0;
            prop_assume!(dims_ok);
            let (spec, r) = if ar1 {
                (GaussianProcessSpec::ar1(mean.clone(), sigma2, rho).unwrap(), rho)
            } else {
                (GaussianProcessSpec::frame_local(mean.clone(), sigma2).unwrap(), 0.0)
            };
            let want = gp_eps_bruteforce(&z, &levels, &ab, &mean, sigma2, r);
            for solver in [GpSolver::Banded, GpSolver::Dense] {
                let den = GaussianProcessDenoiser::with_solver(spec.clone(), solver);
                let mut got = Array2::zeros((len, dims));
                let window = FrameWindow {
                    values: z.view(),
                    levels: &levels,
                    condition: &[],
                };
                den.predict_eps(&window, &sched, got.view_mut()).unwrap();
                for (g, w) in got.iter().zip(want.iter()) {
                    prop_assert!((g - w).abs() <= 1e-8 * w.abs().max(1.0), "{solver:?}: {g} vs {w}");
                }
            }
            Ok(())
        },
    )
}

/// IAFS and IAAM files reproduce their contents bit for bit.
pub fn file_round_trip_properties(cases: u32) -> PropResult {
    let strategy = (
        1usize..4,
        1usize..5,
        prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..64),
        1usize..9,
        prop::collection::vec(0.0f32..1e6, 64),
    );
    run(cases, strategy, |(channels, bins, raw, q, scores)| {
        let shape = FrameShape::new(channels, bins).unwrap();
        let whole = raw.len() / shape.len() * shape.len();
        let stream = FrameStream::new(shape, raw[..whole].to_vec()).unwrap();
        let bytes = stream.write_to(Cursor::new(Vec::new())).unwrap().into_inner();
        let back = FrameStream::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.shape, shape);
        let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.data), bits(&stream.data));

        let map = AttentionMap::new(Array2::from_shape_vec((q, q), scores[..q * q].to_vec()).unwrap()).unwrap();
        let mut buf = Vec::new();
        map.write_to(&mut buf).unwrap();
        let back = AttentionMap::from_bytes(&buf).unwrap();
        prop_assert_eq!(
            bits(back.scores().as_slice().unwrap()),
            bits(map.scores().as_slice().unwrap())
        );
        Ok(())
    })
}
