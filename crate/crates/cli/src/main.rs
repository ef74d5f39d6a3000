use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

use output::Failure;

#[derive(Parser)]
#[command(name = "cutlayer", version, about = "Differentiable graph-cut partitioning on image grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a grayscale PGM image from foreground/background seeds
    Cut(CutArgs),
    /// Partition masks from k CWF1 weight fields
    Kpartition(KpartitionArgs),
    /// Compare the backward pass with finite differences
    Gradcheck(GradcheckArgs),
    /// Time factorization and per-solve cost on square grids
    Bench(BenchArgs),
    /// Soft slot matching for a k×k cost matrix, checked against the Hungarian method
    Match(MatchArgs),
    /// Fit cut weights to a target segmentation by gradient descent
    Fit(FitArgs),
}

#[derive(Args)]
struct CutArgs {
    /// 8-bit binary PGM (P5) image
    #[arg(long)]
    image: PathBuf,
    /// JSON seed specification
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Output path prefix
    #[arg(long)]
    out: PathBuf,
    /// Allow images with a side longer than 256 pixels
    #[arg(long)]
    override_size_cap: bool,
}

#[derive(Args)]
struct KpartitionArgs {
    /// CWF1 weight field, one per partition, in order
    #[arg(long = "weights", required = true)]
    weights: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    override_size_cap: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the report to `<out>.json`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated grid sides, e.g. 16,32,64
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 11)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    /// JSON array of k rows of k costs
    #[arg(long)]
    cost: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// JSON fit configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    cutlayer::init_threads_from_env()?;
    match cli.command {
        Command::Cut(a) => commands::cut(&a.image, &a.seeds, a.gamma, a.tau, &a.out, a.override_size_cap),
        Command::Kpartition(a) => commands::kpartition(&a.weights, a.gamma, a.tau, &a.out, a.override_size_cap),
        Command::Gradcheck(a) => commands::gradcheck(a.height, a.width, a.gamma, a.trials, a.seed, a.out.as_deref()),
        Command::Bench(a) => commands::bench(&a.sizes, a.gamma, a.repeats, a.out.as_deref()),
        Command::Match(a) => commands::matching(&a.cost, a.gamma, a.tau, a.out.as_deref()),
        Command::Fit(a) => commands::fit(&a.config, a.seed, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cutlayer: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
