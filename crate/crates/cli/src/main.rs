//! `rnoise`: train, fine-tune, sample, evaluate, diagnose and plot.
//!
//! Exit codes: 0 success, 2 config or parse error, 3 numeric abort,
//! 4 missing or corrupt artifact, 5 contract violation.

mod commands;
mod config;
mod csvio;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnoise::model::NoiseFamily;
use rnoise::sampling::{SamplerKind, ScheduleKind};
use rnoise::training::TrainMode;

use commands::{MetricArgs, SampleArgs, SamplerOverrides, TrainOverrides};
use error::{CliError, CliResult};

/// Environment variable selecting the worker-thread count (default 1).
const WORKERS_ENV: &str = "RNOISE_WORKERS";

#[derive(Parser)]
#[command(name = "rnoise", version, about = "Rectified-flow models with learned π-noise on toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a velocity model (rf) or a velocity model with a generator (joint).
    Train(TrainCmd),
    /// Train a noise generator on top of a frozen rf checkpoint.
    Finetune(FinetuneCmd),
    /// Draw samples from a checkpoint.
    Sample(SampleCmd),
    /// Compare generated points with reference data.
    Eval(EvalCmd),
    /// Report task entropy, conditional entropy and their difference as JSON.
    Entropy(EntropyCmd),
    /// Render SVG charts of samples and noise ledgers.
    Plot(PlotCmd),
}

#[derive(Args)]
struct CommonTrain {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Dataset spec string (`gaussian_ring:n=5000,seed=1`), JSON spec or points CSV.
    #[arg(long)]
    data: Option<String>,
    /// Noise family for newly created generators.
    #[arg(long)]
    family: Option<NoiseFamily>,
    /// Residual blocks in newly created generators.
    #[arg(long)]
    extra_blocks: Option<usize>,
    /// Continue from a checkpoint of the same mode.
    #[arg(long)]
    resume: Option<PathBuf>,
}

impl CommonTrain {
    fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            steps: self.steps,
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            data: self.data.clone(),
            family: self.family,
            extra_blocks: self.extra_blocks,
        }
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    common: CommonTrain,
    /// `rf` or `joint`.
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Condition on dataset labels.
    #[arg(long)]
    conditional: bool,
}

#[derive(Args)]
struct FinetuneCmd {
    #[command(flatten)]
    common: CommonTrain,
    /// Pre-trained rf checkpoint.
    #[arg(long)]
    from: Option<PathBuf>,
}

#[derive(Args)]
struct SamplerFlags {
    /// Config whose `sampler` section provides defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ode, sde, delta_rn_ode or delta_rn_sde.
    #[arg(long)]
    kind: Option<SamplerKind>,
    /// Integration steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Classifier-free guidance scale.
    #[arg(long)]
    cfg: Option<f64>,
    /// Diffusion schedule: constant, linear or bridge.
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    /// Diffusion coefficient scale.
    #[arg(long)]
    diffusion_c: Option<f64>,
}

impl SamplerFlags {
    fn overrides(&self) -> SamplerOverrides {
        SamplerOverrides {
            kind: self.kind,
            steps: self.steps,
            seed: self.seed,
            cfg: self.cfg,
            schedule: self.schedule,
            diffusion_c: self.diffusion_c,
        }
    }
}

#[derive(Args)]
struct SampleCmd {
    #[arg(long)]
    from: PathBuf,
    #[command(flatten)]
    sampler: SamplerFlags,
    #[arg(short = 'n', long, default_value_t = 5000)]
    n: usize,
    /// Class label for every sample (conditional checkpoints).
    #[arg(long)]
    label: Option<usize>,
    #[arg(long, default_value = "samples.csv")]
    out: PathBuf,
    /// Also write every intermediate state.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Include per-step and cumulative π-noise in the trajectory file.
    #[arg(long)]
    ledger: bool,
}

#[derive(Args)]
struct EvalCmd {
    /// Generated points CSV.
    #[arg(long, required_unless_present = "compare")]
    gen: Option<PathBuf>,
    /// Reference: dataset spec string, JSON spec, or points CSV.
    #[arg(long = "ref")]
    reference: String,
    /// Metrics CSV to append to (compare mode: table to write).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PROJECTIONS_ARG)]
    projections: usize,
    #[arg(long, default_value_t = 0)]
    metric_seed: u64,
    /// Sample the checkpoint with ode, sde and delta_rn_sde and tabulate all three.
    #[arg(long, requires = "from")]
    compare: bool,
    #[arg(long)]
    from: Option<PathBuf>,
    /// Samples per sampler in compare mode.
    #[arg(short = 'n', long, default_value_t = 5000)]
    n: usize,
    #[command(flatten)]
    sampler: SamplerFlags,
}

const DEFAULT_PROJECTIONS_ARG: usize = rnoise::metrics::DEFAULT_PROJECTIONS;

#[derive(Args)]
struct EntropyCmd {
    #[arg(long)]
    from: PathBuf,
    /// Dataset spec string, JSON spec, or points CSV.
    #[arg(long, default_value = "gaussian_ring")]
    data: String,
    /// Path samples.
    #[arg(short = 'n', default_value_t = 10_000)]
    n: usize,
    /// Generator draws per path sample.
    #[arg(short = 'm', default_value_t = 8)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Divide losses by the data dimension.
    #[arg(long)]
    per_dim: bool,
}

#[derive(Args)]
struct PlotCmd {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Trajectory CSV with noise ledger columns.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Scatter plot path; the ledger chart goes next to it as `<stem>-ledger.svg`.
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
}

fn configure_workers() -> CliResult<()> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_workers()?;
    match cli.command {
        Command::Train(c) => commands::train(
            c.common.config.as_deref(),
            c.mode,
            c.conditional,
            c.common.resume.as_deref(),
            &c.common.overrides(),
        ),
        Command::Finetune(c) => commands::finetune(
            c.common.config.as_deref(),
            c.from.as_deref(),
            c.common.resume.as_deref(),
            &c.common.overrides(),
        ),
        Command::Sample(c) => {
            let sampler = c.sampler.overrides().resolve(c.sampler.config.as_deref())?;
            commands::sample(
                &SampleArgs {
                    from: &c.from,
                    n: c.n,
                    label: c.label,
                    out: &c.out,
                    trajectories: c.trajectories.as_deref(),
                    ledger: c.ledger,
                },
                &sampler,
            )
        }
        Command::Eval(c) => {
            let m = MetricArgs {
                projections: c.projections,
                metric_seed: c.metric_seed,
            };
            if c.compare {
                let sampler = c.sampler.overrides().resolve(c.sampler.config.as_deref())?;
                let from = c.from.as_deref().expect("clap enforces --from");
                commands::compare(from, &c.reference, c.n, &sampler, c.out.as_deref(), &m)
            } else {
                let gen = c.gen.as_deref().expect("clap enforces --gen");
                commands::eval(gen, &c.reference, c.out.as_deref(), &m)
            }
        }
        Command::Entropy(c) => commands::entropy(&c.from, &c.data, c.n, c.m, c.seed, c.per_dim),
        Command::Plot(c) => commands::plot(&c.samples, c.reference.as_deref(), c.ledger.as_deref(), &c.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
