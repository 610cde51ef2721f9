//! `diagstream`: generate streams, build schedules, analyze attention maps and
//! report memory use from the command line.

mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use diagstream::attention::{
    curved_from_profile, load_attention_map, recommend_focus, region_scores, AttentionProfile, KeyRegions,
};
use diagstream::denoise::{FrameShape, GaussianProcessDenoiser, GaussianProcessSpec, GpSolver};
use diagstream::fifo::{default_buffer_len, generate, BufferMode, FrameSink, QueueConfig, RunMode, RunStats};
use diagstream::io::{
    emit_pgm, memory_report, read_stream, stream_stats, window_grid, FrameStream, StreamWriter, DEFAULT_MAX_LAG,
};
use diagstream::noise::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TIMESTEPS};
use diagstream::plan::{
    equally_spaced, CurveConfig, RegionFractions, SamplingRegion, TimestepSchedule, DEFAULT_BASE_STEPS, DEFAULT_SKIP,
};
use diagstream::sampler::SamplerContext;

const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "diagstream", version, about = "Constant-memory diagonal diffusion sampling")]
#[command(args_override_self = true)]
struct Cli {
    /// key = value file of flags for the subcommand; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a frame stream.
    Generate(GenerateArgs),
    /// Print or export a timestep schedule as CSV.
    Schedule(ScheduleArgs),
    /// Score an IAAM attention map by sampling region.
    AnalyzeAttn(AnalyzeArgs),
    /// Compare accounted peak memory across run lengths.
    ProfileMem(ProfileArgs),
    /// Moments and seam statistics of an IAFS stream.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserKind {
    Framelocal,
    Ar1,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverKind {
    Banded,
    Dense,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Equal,
    Initial,
    Middle,
    Final,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fifo,
    Batch,
    Concat,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fifo => RunMode::Fifo,
            ModeArg::Batch => RunMode::Batch,
            ModeArg::Concat => RunMode::Concat,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BufferModeArg {
    Sliding,
    Static,
}

#[derive(Args)]
struct DenoiserArgs {
    #[arg(long, value_enum, default_value = "ar1")]
    denoiser: DenoiserKind,
    /// Prior mean, one value or a comma list repeated over each frame.
    #[arg(long, default_value = "0", value_delimiter = ',', action = ArgAction::Set)]
    mu: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, value_enum, default_value = "banded")]
    solver: SolverKind,
}

impl DenoiserArgs {
    fn spec(&self) -> Result<GaussianProcessSpec> {
        Ok(match self.denoiser {
            DenoiserKind::Framelocal => GaussianProcessSpec::frame_local(self.mu.clone(), self.sigma2)?,
            DenoiserKind::Ar1 => GaussianProcessSpec::ar1(self.mu.clone(), self.sigma2, self.rho)?,
        })
    }

    fn build(&self) -> Result<GaussianProcessDenoiser> {
        let solver = match self.solver {
            SolverKind::Banded => GpSolver::Banded,
            SolverKind::Dense => GpSolver::Dense,
        };
        Ok(GaussianProcessDenoiser::with_solver(self.spec()?, solver))
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, visible_alias = "preset", value_enum, default_value = "final")]
    schedule: Preset,
    /// Diffusion timesteps.
    #[arg(long = "M", default_value_t = DEFAULT_TIMESTEPS)]
    timesteps: usize,
    /// Equally spaced steps the curved schedules decimate.
    #[arg(long, default_value_t = DEFAULT_BASE_STEPS)]
    base_steps: usize,
    /// Length of the `equal` schedule [default: base steps].
    #[arg(long)]
    steps: Option<usize>,
    /// Skip factor outside the focused region.
    #[arg(long = "P", default_value_t = DEFAULT_SKIP)]
    skip: usize,
    /// Region fractions, initial,middle,final [default: thirds].
    #[arg(long)]
    fractions: Option<RegionFractions>,
    /// IAAM map for `--schedule auto`.
    #[arg(long, value_name = "PATH")]
    attn: Option<PathBuf>,
    /// Buffer length the attention map was captured with.
    #[arg(long, default_value_t = 0)]
    attn_buffer: usize,
    /// Read the schedule from an `index,tau,region` CSV instead.
    #[arg(long, value_name = "PATH")]
    schedule_file: Option<PathBuf>,
}

struct BuiltPlan {
    schedule: TimestepSchedule,
    focus: Option<SamplingRegion>,
    tied: bool,
    degenerate: bool,
}

impl PlanArgs {
    fn fractions(&self) -> RegionFractions {
        self.fractions.unwrap_or_default()
    }

    fn curve(&self) -> CurveConfig {
        CurveConfig {
            timesteps: self.timesteps,
            base_steps: self.base_steps,
            skip: self.skip,
            fractions: self.fractions(),
        }
    }

    fn build(&self) -> Result<BuiltPlan> {
        let fixed = |schedule: TimestepSchedule, focus| BuiltPlan {
            schedule,
            focus,
            tied: false,
            degenerate: false,
        };
        if let Some(path) = &self.schedule_file {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            return Ok(fixed(TimestepSchedule::read_csv(BufReader::new(file))?, None));
        }
        let region = match self.schedule {
            Preset::Equal => {
                let n = self.steps.unwrap_or(self.base_steps).min(self.timesteps);
                return Ok(fixed(equally_spaced(self.timesteps, n)?, None));
            }
            Preset::Auto => {
                let path = self.attn.as_ref().context("--schedule auto needs --attn")?;
                let profile = analyze(path, self.attn_buffer, &self.fractions())?;
                let plan = curved_from_profile(&profile, &self.curve())?;
                return Ok(BuiltPlan {
                    schedule: plan.schedule,
                    focus: Some(plan.choice.region),
                    tied: plan.choice.tied,
                    degenerate: plan.degenerate,
                });
            }
            Preset::Initial => SamplingRegion::Initial,
            Preset::Middle => SamplingRegion::Middle,
            Preset::Final => SamplingRegion::Final,
        };
        Ok(fixed(self.curve().focused(region)?, Some(region)))
    }

    fn noise(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(
            self.timesteps,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
        )?)
    }
}

#[derive(Args)]
struct QueueArgs {
    /// Clean buffer frames ahead of the diagonal [default: ceil(steps / 4)].
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long, value_enum, default_value = "sliding")]
    buffer_mode: BufferModeArg,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long, default_value_t = 8)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl QueueArgs {
    fn config(&self, diagonal_len: usize) -> Result<QueueConfig> {
        Ok(QueueConfig {
            buffer_len: self.buffer.unwrap_or_else(|| default_buffer_len(diagonal_len)),
            buffer_mode: match self.buffer_mode {
                BufferModeArg::Sliding => BufferMode::Sliding,
                BufferModeArg::Static => BufferMode::Static,
            },
            shape: FrameShape::new(self.channels, self.bins)?,
            seed: self.seed,
        })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "fifo")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1024)]
    frames: u64,
    /// Frames per independent window in concat mode.
    #[arg(long, default_value_t = 64)]
    window: u64,
    #[command(flatten)]
    denoiser: DenoiserArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    queue: QueueArgs,
    /// IAFS output stream.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Run statistics CSV [default: stdout].
    #[arg(long, value_name = "PATH")]
    stats_out: Option<PathBuf>,
    /// Grayscale image of the stream.
    #[arg(long, value_name = "PATH")]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// CSV destination [default: stdout].
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// IAAM attention map.
    #[arg(long, value_name = "PATH")]
    attn: PathBuf,
    /// Buffer frames at the start of the window, excluded from scoring.
    #[arg(long)]
    buffer: usize,
    #[arg(long)]
    fractions: Option<RegionFractions>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    /// FIFO run lengths.
    #[arg(long, default_value = "128,1024,16384", value_delimiter = ',', action = ArgAction::Set)]
    fifo_frames: Vec<u64>,
    /// Batch run lengths.
    #[arg(long, default_value = "128,256", value_delimiter = ',', action = ArgAction::Set)]
    batch_frames: Vec<u64>,
    /// Also record the process peak RSS after each run.
    #[arg(long)]
    probe_rss: bool,
    #[command(flatten)]
    denoiser: DenoiserArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    queue: QueueArgs,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// IAFS stream to analyze.
    #[arg(long, value_name = "PATH")]
    stream: PathBuf,
    #[command(flatten)]
    denoiser: DenoiserArgs,
    /// Treat multiples of this as window boundaries.
    #[arg(long, conflicts_with = "boundaries")]
    window: Option<u64>,
    /// Explicit boundary frame indices.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    boundaries: Option<Vec<u64>>,
    #[arg(long, default_value_t = DEFAULT_MAX_LAG)]
    max_lag: usize,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn analyze(path: &Path, buffer: usize, fractions: &RegionFractions) -> Result<AttentionProfile> {
    let map = load_attention_map(path).with_context(|| format!("loading {}", path.display()))?;
    let keys = KeyRegions::from_fractions(map.window_len(), buffer, fractions)?;
    Ok(region_scores(&map, buffer, &keys)?)
}

/// Tees frames into an optional stream file and an optional in-memory copy.
struct Outputs {
    file: Option<StreamWriter<BufWriter<File>>>,
    kept: Option<Vec<f64>>,
}

impl FrameSink for Outputs {
    fn push_frame(&mut self, frame: &[f64]) -> io::Result<()> {
        if let Some(f) = &mut self.file {
            f.push_frame(frame)?;
        }
        if let Some(k) = &mut self.kept {
            k.extend_from_slice(frame);
        }
        Ok(())
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let built = args.plan.build()?;
    let noise = args.plan.noise()?;
    let denoiser = args.denoiser.build()?;
    let ctx = SamplerContext::new(&denoiser, &noise, &built.schedule)?;
    let cfg = args.queue.config(built.schedule.len())?;

    let mut sink = Outputs {
        file: args
            .out
            .as_ref()
            .map(|p| StreamWriter::create(p, cfg.shape).with_context(|| format!("creating {}", p.display())))
            .transpose()?,
        kept: (args.pgm.is_some() && args.out.is_none()).then(Vec::new),
    };
    let stats: RunStats = generate(args.mode.into(), args.frames, args.window, &ctx, &cfg, &mut sink)?;
    if let Some(writer) = sink.file.take() {
        writer.finish()?;
    }
    if let Some(pgm) = &args.pgm {
        let stream = match (&args.out, sink.kept) {
            (Some(out), _) => read_stream(out)?,
            (None, Some(kept)) => FrameStream::from_f64(cfg.shape, &kept)?,
            (None, None) => unreachable!("frames are kept whenever a pgm is requested"),
        };
        emit_pgm(&stream, pgm).with_context(|| format!("writing {}", pgm.display()))?;
    }
    let mut w = output(args.stats_out.as_deref())?;
    stats.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_schedule(args: &ScheduleArgs) -> Result<()> {
    let built = args.plan.build()?;
    let mut w = output(args.out.as_deref())?;
    built.schedule.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("steps,{}", built.schedule.len());
    if let Some(focus) = built.focus {
        eprintln!("focus,{focus}");
    }
    if built.tied {
        eprintln!("note: attention scores tied, focus chosen by priority");
    }
    if built.degenerate {
        eprintln!("note: attention profile is all zero, using equally spaced steps");
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let profile = analyze(&args.attn, args.buffer, &args.fractions.unwrap_or_default())?;
    let choice = recommend_focus(&profile);
    let mut w = output(args.out.as_deref())?;
    profile.write_csv(choice.region, &mut w)?;
    w.flush()?;
    if choice.tied {
        eprintln!("note: attention scores tied, focus chosen by priority");
    }
    Ok(())
}

fn cmd_profile_mem(args: &ProfileArgs) -> Result<()> {
    let built = args.plan.build()?;
    let noise = args.plan.noise()?;
    let denoiser = args.denoiser.build()?;
    let ctx = SamplerContext::new(&denoiser, &noise, &built.schedule)?;
    let cfg = args.queue.config(built.schedule.len())?;
    let runs: Vec<(RunMode, u64)> = args
        .fifo_frames
        .iter()
        .map(|&n| (RunMode::Fifo, n))
        .chain(args.batch_frames.iter().map(|&n| (RunMode::Batch, n)))
        .collect();
    if runs.is_empty() {
        bail!("no runs requested");
    }
    let report = memory_report(&ctx, &cfg, 0, &runs, args.probe_rss)?;
    let mut w = output(args.out.as_deref())?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let stream = read_stream(&args.stream).with_context(|| format!("reading {}", args.stream.display()))?;
    let frames = stream.to_array();
    let boundaries = match (&args.boundaries, args.window) {
        (Some(list), _) => Some(list.clone()),
        (None, Some(window)) => Some(window_grid(frames.nrows() as u64, window.max(1))),
        (None, None) => None,
    };
    let report = stream_stats(
        frames.view(),
        stream.shape,
        &args.denoiser.spec()?,
        boundaries.as_deref(),
        args.max_lag,
    )?;
    let mut w = output(args.out.as_deref())?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Schedule(a) => cmd_schedule(a),
        Command::AnalyzeAttn(a) => cmd_analyze(a),
        Command::ProfileMem(a) => cmd_profile_mem(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    // clap exits with 0 for --help/--version and 2 for usage errors
    let cli = Cli::parse_from(args);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
