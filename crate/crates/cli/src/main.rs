mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nucseg_core::ModelKind;

/// Nuclei segmentation with U-Net and DenseUNet.
#[derive(Parser, Debug)]
#[command(name = "nucseg", version, about)]
struct Cli {
    /// JSON run configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stage
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only warnings and errors on stderr
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset in the DSB-2018 layout
    Synth(SynthArgs),
    /// Write augmented copies of a dataset
    Augment(AugmentArgs),
    /// Train a model and write checkpoint and history
    Train(TrainArgs),
    /// Score a checkpoint on a dataset
    Eval(EvalArgs),
    /// Print the layer table and shape trace of a model
    Trace(TraceArgs),
    /// Segment one image
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: Option<u64>,
    /// Image size as HxW
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(usize, usize)>,
    /// Replace a non-empty output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Augmented copies per source image
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    factor: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Channel and input-size divisor: 1, 2, 4 or 8
    #[arg(long)]
    scale: Option<usize>,
    /// DenseUNet growth rate (default 32/scale)
    #[arg(long)]
    growth_rate: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    #[arg(long)]
    freeze_batchnorm: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for per_image.csv and summary.json
    #[arg(long)]
    report: PathBuf,
    /// Only evaluate the ids listed in this file
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Reject checkpoints of another architecture
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModelChoice {
    Unet,
    Denseunet,
}

impl From<ModelChoice> for ModelKind {
    fn from(m: ModelChoice) -> Self {
        match m {
            ModelChoice::Unet => ModelKind::Unet,
            ModelChoice::Denseunet => ModelKind::Denseunet,
        }
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X', '×'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((h, w))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .format_target(false)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
