//! `relspray`: generate synthetic data, train toy classifiers, explain them
//! with LRP and cluster the explanations with SpRAy.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relspray::lrp::{BottomPreset, RulePreset};
use relspray::spray::{AffinityMode, EmbeddingSource, LaplacianKind, Normalization};

mod commands;

const SEED_ENV: &str = "RELSPRAY_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "relspray",
    version,
    about = "Relevance propagation and spectral relevance analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic watermark dataset.
    Generate(GenerateArgs),
    /// Train a multilayer perceptron on a dataset directory.
    Train(TrainArgs),
    /// Compute LRP heatmaps into a heatmap store.
    Explain(ExplainArgs),
    /// Cluster a heatmap store and write a report.
    Spray(SprayArgs),
    /// Per-sample region metrics as CSV.
    Metrics(MetricsArgs),
    /// Run the whole synthetic experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Image side length.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    /// Fraction of class-1 images carrying the watermark.
    #[arg(long, default_value_t = 0.2)]
    artifact_p: f64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Train without bias terms.
    #[arg(long)]
    no_bias: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ab1")]
    rule: RulePreset,
    /// Rule for the first weighted layer.
    #[arg(long)]
    bottom_rule: Option<BottomPreset>,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Only explain samples with this label.
    #[arg(long)]
    label: Option<usize>,
    /// Output neuron to explain; defaults to `--label`, else 0.
    #[arg(long)]
    output: Option<usize>,
    /// Also write a PGM render of every map.
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Args)]
struct SprayOptions {
    /// Downsized map grid, `HxW`.
    #[arg(long, default_value = "20x20", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value = "l1")]
    normalization: Normalization,
    /// Nearest neighbours; defaults to ceil(ln N).
    #[arg(short = 'k', long)]
    neighbors: Option<usize>,
    #[arg(long, default_value = "binary")]
    affinity: AffinityMode,
    #[arg(long, default_value = "symmetric")]
    laplacian: LaplacianKind,
    /// Eigenvalues inspected for the eigengap.
    #[arg(long, default_value_t = 20)]
    prefix: usize,
    /// Override the eigengap cluster count.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Skip the t-SNE embedding.
    #[arg(long, conflicts_with_all = ["perplexity", "embedding_source"])]
    no_embedding: bool,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long, value_parser = parse_source)]
    embedding_source: Option<EmbeddingSource>,
}

#[derive(Debug, Args)]
struct SprayArgs {
    #[arg(long)]
    heatmaps: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    spray: SprayOptions,
    /// Region file; global regions are summarized per cluster.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    heatmaps: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    regions: Option<PathBuf>,
    /// CSV of score vectors: sample id then scores.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// SpRAy report whose cluster labels are used for per-cluster means.
    #[arg(long, requires = "regions")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value = "ab1")]
    rule: RulePreset,
    #[arg(long, default_value = "20x20", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long)]
    no_embedding: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h
        .trim()
        .parse()
        .map_err(|_| format!("bad grid height `{h}`"))?;
    let w: usize = w
        .trim()
        .parse()
        .map_err(|_| format!("bad grid width `{w}`"))?;
    if h == 0 || w == 0 {
        return Err("grid dimensions must be >= 1".into());
    }
    Ok((h, w))
}

fn parse_source(s: &str) -> Result<EmbeddingSource, String> {
    match s {
        "affinity" => Ok(EmbeddingSource::Affinity),
        "euclidean" => Ok(EmbeddingSource::Euclidean),
        _ => Err(format!(
            "unknown embedding source `{s}` (affinity, euclidean)"
        )),
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<relspray::Error> for Failure {
    fn from(e: relspray::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Explain(a) => commands::explain(a),
        Command::Spray(a) => commands::spray(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(text) => {
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
