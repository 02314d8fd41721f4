//! `emgal`: command-line front end for the embedding gallery.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 dimension mismatch, 4 numeric failure.

mod commands;
mod input;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "emgal", version, about = "Open-set embedding gallery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty gallery file.
    Init(InitArgs),
    /// Add records from a JSON-lines file.
    Ingest(IngestArgs),
    /// Match each query line against the gallery.
    Query(QueryArgs),
    /// Remove MAD outliers and enforce the per-class cap.
    Prune(PruneArgs),
    /// Rewrite the store without tombstones.
    Compact(StoreArg),
    /// Fit conditioned centroids for an auxiliary variable.
    Cluster(ClusterArgs),
    /// Score how much an auxiliary variable spreads each class.
    Saliency(SaliencyArgs),
    /// Export a PCA projection of the gallery as CSV.
    Project(ProjectArgs),
    /// Train the linear toy embedder.
    Train(TrainArgs),
    /// Run the synthetic conditioned-vs-unconditioned benchmark.
    Bench(BenchArgs),
    /// Write a synthetic dataset as record lines.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricName {
    Euclidean,
    SquaredEuclidean,
    Manhattan,
    Chebyshev,
    Minkowski,
    Cosine,
    Correlation,
    Hamming,
    Mahalanobis,
}

#[derive(Debug, Args)]
struct StoreArg {
    #[arg(long)]
    store: PathBuf,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    dim: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricName,
    /// Minkowski order.
    #[arg(long)]
    p: Option<f64>,
    /// JSON file holding the Mahalanobis inverse covariance as a list of rows.
    #[arg(long)]
    inv_cov: Option<PathBuf>,
    /// Match threshold; `inf` disables rejection.
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    cap_n: usize,
    #[arg(long)]
    mad_cutoff: Option<f64>,
    #[arg(long)]
    adaptive_alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Declared auxiliary state, `variable=state`; repeatable. Values on a
    /// query line take precedence.
    #[arg(long, value_name = "VAR=STATE")]
    aux: Vec<String>,
    /// Match against conditioned centroids (needs a cluster model).
    #[arg(long)]
    conditioned: bool,
    /// Use per-class adaptive thresholds instead of the global one.
    #[arg(long, conflicts_with = "conditioned")]
    adaptive: bool,
    /// Cluster model file; defaults to `<store>.clusters`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output file; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    mad_cutoff: Option<f64>,
    /// Per-class cap for this run; defaults to the stored cap.
    #[arg(long)]
    cap: Option<usize>,
    /// Skip MAD pruning and only enforce the cap.
    #[arg(long)]
    no_mad: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeName {
    Supervised,
    Kmeans,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    var: String,
    #[arg(long, value_enum, default_value = "supervised")]
    mode: ModeName,
    /// Defaults to `<store>.clusters`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SaliencyArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    var: String,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    components: usize,
    #[arg(long)]
    out: PathBuf,
    /// `class` or the name of an auxiliary variable.
    #[arg(long, default_value = "class")]
    color_by: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MinerName {
    AllValid,
    SemiHard,
    GsTrs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossName {
    Contrastive,
    Triplet,
    Quadruplet,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON lines `{"features":[..],"class":..,"group"?:..}`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    /// Second margin, required for the quadruplet loss.
    #[arg(long)]
    margin2: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "all-valid")]
    miner: MinerName,
    #[arg(long, value_enum, default_value = "triplet")]
    loss: LossName,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricName,
    #[arg(long, default_value_t = 2)]
    embed_dim: usize,
    #[arg(long)]
    normalize: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON world description plus `tau` and optional evaluation settings.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emgal: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
