use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "favae",
    version,
    about = "Disentangled material-appearance latent space: data, training, evaluation, editing"
)]
pub struct Cli {
    /// TOML config file; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the procedural dataset and write its manifest.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Compute reconstruction and disentanglement metrics for trained weights.
    Eval(EvalArgs),
    /// Render a traversal grid (prior, posterior or pairwise) to PNG.
    Traverse(TraverseArgs),
    /// Print the latent mean of an image as a JSON array.
    Encode(EncodeArgs),
    /// Decode a latent vector onto a geometry and write a PNG.
    Decode(DecodeArgs),
    /// Compose a latent vector from several sources by dimension.
    Mix(MixArgs),
    /// Train one model per latent dimensionality and tabulate MIR/MIS.
    Sweep(SweepArgs),
    /// Run the loss and architecture ablations over several seeds.
    Ablate(AblateArgs),
    /// Serve encode/decode/mix over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory; receives manifest.json, images/ and normals/.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset preset: desk or full.
    #[arg(long)]
    pub preset: Option<String>,
    /// Seed of geometry variants and material sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image resolution override (power of two).
    #[arg(long)]
    pub resolution: Option<usize>,
}

/// Training hyperparameters shared by train, sweep and ablate.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// Seed of initialization, batching and sampling noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Images per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Latent dimensionality d.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Final β of the KL term.
    #[arg(long)]
    pub beta_max: Option<f64>,
    /// Epochs over which β rises linearly from 0; 0 disables annealing.
    #[arg(long)]
    pub anneal_epochs: Option<usize>,
    /// Weight of the total-correlation term.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Order of the norm applied to the per-dimension KL vector.
    #[arg(long)]
    pub kl_order: Option<u32>,
    /// Autoencoder learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Discriminator learning rate.
    #[arg(long)]
    pub lr_disc: Option<f64>,
    /// Decoder without normal-map conditioning.
    #[arg(long)]
    pub no_normals: bool,
    /// Checkpoint interval in epochs (0 = none).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest, or the directory that holds manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for weights.bin, train_log.ndjson and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained weights file (weights.bin).
    #[arg(long)]
    pub weights: PathBuf,
    /// Dataset manifest, or its directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for metrics.json and metrics.csv; stdout only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the Z-min sampling and label shuffles.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Z-min trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Label shuffles for the chance-level MIR baseline.
    #[arg(long)]
    pub shuffles: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TraverseArgs {
    /// Trained weights file (weights.bin).
    #[arg(long)]
    pub weights: PathBuf,
    /// Output PNG; a JSON sidecar with the same stem is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Reference geometry: sphere, blob or torus.
    #[arg(long)]
    pub geometry: Option<String>,
    /// Comma-separated dimensions to sweep (default: all).
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Sweep range as `lo,hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub range: Option<Vec<f64>>,
    /// Cells per swept dimension.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Center the sweep at this image's posterior mean.
    #[arg(long, conflicts_with = "pair")]
    pub image: Option<PathBuf>,
    /// Two dimensions `i,j` swept jointly into a square grid.
    #[arg(long, value_delimiter = ',')]
    pub pair: Option<Vec<usize>>,
    /// Accepted for uniformity; traversals are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Trained weights file (weights.bin).
    #[arg(long)]
    pub weights: PathBuf,
    /// Input PNG; center-cropped and resized to the model resolution.
    #[arg(long)]
    pub image: PathBuf,
    /// Accepted for uniformity; encoding is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Trained weights file (weights.bin).
    #[arg(long)]
    pub weights: PathBuf,
    /// Latent vector as a JSON array, e.g. "[0,0,0,0,0,0]".
    #[arg(long, allow_hyphen_values = true)]
    pub f: String,
    /// Reference geometry: sphere, blob or torus.
    #[arg(long)]
    pub geometry: Option<String>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity; decoding is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Trained weights file (weights.bin).
    #[arg(long)]
    pub weights: PathBuf,
    /// `SOURCE:DIMS`, repeated. SOURCE is a PNG path or a JSON array;
    /// DIMS is a comma-separated list, e.g. `a.png:0,1,2`.
    #[arg(long = "src", required = true, allow_hyphen_values = true)]
    pub sources: Vec<String>,
    /// Also decode the mixed vector to this PNG.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reference geometry: sphere, blob or torus.
    #[arg(long)]
    pub geometry: Option<String>,
    /// Accepted for uniformity; mixing is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset manifest, or the directory that holds manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for sweep.tsv, sweep.json and one run per d.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated latent dimensionalities (default 3..=10).
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset manifest, or the directory that holds manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for ablation.tsv, ablation.json and one run per variant and seed.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated seeds (default 0,1,2).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated subset of summation, maximum_beta_1, no_annealing,
    /// without_normals, full (default: all).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Trained weights file (weights.bin).
    #[arg(long)]
    pub weights: PathBuf,
    /// Listen address (default 127.0.0.1:8080).
    #[arg(long)]
    pub bind: Option<String>,
    /// Requests processed at once; further requests get 503.
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    /// Largest accepted request body in bytes.
    #[arg(long)]
    pub max_body_bytes: Option<usize>,
    /// Comma-separated geometries to expose (default: every shipped one).
    #[arg(long, value_delimiter = ',')]
    pub geometries: Option<Vec<String>>,
    /// Accepted for uniformity; the service is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}
