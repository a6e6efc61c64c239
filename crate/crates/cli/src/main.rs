//! `mat`: train, evaluate and inspect multi-range attention super-resolution
//! models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mat_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 1 for bad input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        use mat_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(
                E::Config(_)
                | E::Geometry { .. }
                | E::Dimension { .. }
                | E::Input(_)
                | E::ShapeMismatch { .. }
                | E::MissingParam(_)
                | E::UnexpectedParam(_),
            ) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mat", version, about = "Multi-range attention transformer for image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a config file and flags.
    Train(TrainArgs),
    /// Score a checkpoint on a directory of HR images (Y-channel PSNR/SSIM).
    Eval(EvalArgs),
    /// Super-resolve one PNG.
    Upscale(UpscaleArgs),
    /// Parameter and multiply-add table for a preset.
    Cost(CostArgs),
    /// Effective receptive field map of a checkpoint.
    Erf(ErfArgs),
    /// Attention kernel throughput.
    Bench(BenchArgs),
    /// Run the acceptance checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with [model], [train] and [data] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by `train`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model preset: light, classical or tiny.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// LR patch side.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_dir: Option<PathBuf>,
    /// Any other key, e.g. `--set train.milestones=[1000,1500]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the resolved configuration and stop.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of HR PNGs; LR inputs are synthesized by bicubic downscaling.
    #[arg(long)]
    pub data: PathBuf,
    /// Also report the 8-transform self-ensemble.
    #[arg(long)]
    pub ensemble: bool,
    /// Print JSON lines instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct UpscaleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Defaults to `<input stem>_x<scale>.png` next to the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Process overlapping tiles to bound memory.
    #[arg(long)]
    pub tile: bool,
    #[arg(long, default_value_t = 64)]
    pub tile_size: usize,
    #[arg(long, default_value_t = 16)]
    pub overlap: usize,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, default_value = "light")]
    pub preset: String,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Output resolution, WxH.
    #[arg(long, default_value = "1280x720", value_parser = parse_res)]
    pub res: (usize, usize),
}

#[derive(Debug, Args)]
pub struct ErfArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// LR probe image; repeat to average over several.
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Zero the sparse-attention branches before mapping.
    #[arg(long)]
    pub no_sma: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttnKind {
    Ra,
    Sga,
    Wsa,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "sga")]
    pub attn: AttnKind,
    /// Range size (window side for wsa).
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    /// One or more dilations, comma separated (sga only).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub dilation: Vec<usize>,
    #[arg(long, default_value = "64x64", value_parser = parse_res)]
    pub res: (usize, usize),
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Include the training-based checks (several minutes).
    #[arg(long)]
    pub all: bool,
    /// Run only these criteria, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<usize>,
    /// Print per-case tables under each line.
    #[arg(long, short)]
    pub verbose: bool,
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Upscale(a) => commands::upscale(a),
        Command::Cost(a) => commands::cost(a),
        Command::Erf(a) => commands::erf(a),
        Command::Bench(a) => commands::bench(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
