pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;
pub mod tables;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use lltk_core::numkit::{resolve_threads, Metric};
use lltk_core::sampler::SampleMethod;
use lltk_core::topo::EssentialPolicy;

use crate::commands::Context;
use crate::config::{Config, ConfigError};
use crate::svg::{ColorBy, PlotKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] lltk_core::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn parse_with<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lltk", version, about = "Loss-landscape sampling, embedding and topology")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (`key = value` lines under `[section]` headers).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replaces every run seed except the dataset's.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core. LLTK_THREADS takes precedence.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, value_parser = parse_with::<EssentialPolicy>)]
    policy: Option<EssentialPolicy>,
    #[arg(long, value_parser = parse_with::<Metric>)]
    metric: Option<Metric>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network and store its trajectory and optimum.
    Train(Common),
    /// Sample the landscape around a trained optimum.
    Sample {
        #[command(flatten)]
        common: Common,
        /// jr, grid or naive; defaults to the config's sample.method.
        #[arg(long, value_parser = parse_with::<SampleMethod>)]
        method: Option<SampleMethod>,
        /// Defaults to <out>/optimum.traj.
        #[arg(long)]
        optimum: Option<PathBuf>,
    },
    /// Embed a sample set and store its potential distances.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_with::<SampleMethod>)]
        method: Option<SampleMethod>,
        /// Sample directory; defaults to <out>/samples/<method>.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        optimum: Option<PathBuf>,
    },
    /// Loss-level persistence of an embedded sample set.
    Persist {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_with::<SampleMethod>)]
        method: Option<SampleMethod>,
        /// Embedding directory; defaults to <out>/embed/<method>.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the sweep, sample every network and run the study.
    Study(Common),
    /// Render an SVG from a data file.
    Plot {
        #[arg(long, value_parser = parse_with::<PlotKind>)]
        kind: PlotKind,
        /// embedding.csv, diagrams.csv or the study's persistence.csv.
        #[arg(long)]
        input: PathBuf,
        /// epoch, seed, loss or log_loss (embedding scatter only).
        #[arg(long, value_parser = parse_with::<ColorBy>, default_value = "epoch")]
        color: ColorBy,
        /// Defaults to <out>/plots/<kind>.svg.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Directory for the manifest (and the default output).
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// All stages with one config.
    Pipeline(Common),
}

fn context(common: &Common) -> Result<(Context, usize), CliError> {
    let mut cfg = Config::read(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
    }
    if let Some(metric) = common.metric {
        cfg.apply_metric(metric);
    }
    if let Some(policy) = common.policy {
        cfg.apply_policy(policy);
    }
    let threads = resolve_threads(common.threads);
    cfg.set_threads(threads);
    Ok((Context::new(cfg, common.out.clone())?, threads))
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(c) => {
            let (ctx, _) = context(&c)?;
            report(&commands::train(&ctx)?);
        }
        Command::Sample { common, method, optimum } => {
            let (ctx, _) = context(&common)?;
            let method = method.unwrap_or(ctx.cfg.sample_method);
            let optimum = optimum.unwrap_or_else(|| ctx.optimum_path());
            report(&commands::sample(&ctx, method, &optimum)?);
        }
        Command::Embed { common, method, input, optimum } => {
            let (ctx, _) = context(&common)?;
            let method = method.unwrap_or(ctx.cfg.sample_method);
            let input = input.unwrap_or_else(|| ctx.samples_dir(method));
            let optimum = optimum.unwrap_or_else(|| ctx.optimum_path());
            report(&commands::embed(&ctx, method, &input, &optimum)?);
        }
        Command::Persist { common, method, input } => {
            let (ctx, _) = context(&common)?;
            let method = method.unwrap_or(ctx.cfg.sample_method);
            let input = input.unwrap_or_else(|| ctx.embed_dir(method));
            let outcome = commands::persist(&ctx, method, &input)?;
            report(&outcome.files);
            println!("total persistence H0 = {:e}, H1 = {:e}", outcome.total_h0, outcome.total_h1);
        }
        Command::Study(c) => {
            let (ctx, threads) = context(&c)?;
            let files = commands::study(&ctx, threads)?;
            report(&files);
            if let Ok(text) = std::fs::read_to_string(ctx.study_dir().join("summary.txt")) {
                print!("{text}");
            }
        }
        Command::Plot { kind, input, color, output, out } => {
            let output = output.unwrap_or_else(|| out.join("plots").join(format!("{}.svg", kind.name())));
            report(&[commands::plot(kind, &input, color, &output, &out)?]);
        }
        Command::Pipeline(c) => {
            let (ctx, threads) = context(&c)?;
            report(&commands::pipeline(&ctx, threads)?);
        }
    }
    Ok(())
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("lltk: {e}");
            e.exit_code()
        }
    }
}
