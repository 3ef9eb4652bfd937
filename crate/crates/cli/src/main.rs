//! `twoview`: synthetic data, preprocessing, training, reference sets,
//! classification and the evaluation protocols behind one binary.

mod commands;
mod config;
mod data;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "twoview", version, about = "Two-view coarse-to-fine leaf classification")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// key=value settings file; flags and TWOVIEW_* variables override it
    #[arg(long, global = true, env = "TWOVIEW_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory [default: twoview-out]
    #[arg(long, global = true, env = "TWOVIEW_OUT")]
    pub out: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long, global = true, env = "TWOVIEW_SEED")]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true, env = "TWOVIEW_WORKERS")]
    pub workers: Option<usize>,
    /// Print the report as JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic leaf dataset
    Synth(SynthArgs),
    /// Segment, crop and split a dataset into two-view inputs
    Preprocess(PreprocessArgs),
    /// Sample a positive/negative pair manifest
    MakePairs(MakePairsArgs),
    /// Train the genus (global view) or species (local view) model
    Train(TrainArgs),
    /// Select references and cache their embeddings
    BuildRefs(BuildRefsArgs),
    /// Extend a reference set with unseen species, without retraining
    AddSpecies(AddSpeciesArgs),
    /// Rank species for one image or a directory of images
    Classify(ClassifyArgs),
    /// Accuracy, reciprocal rank and confusion matrices on the test split
    Evaluate(EvaluateArgs),
    /// Grid over reference counts and stage-1 list lengths
    Sweep(SweepArgs),
    /// Repeat reference selection with several seeds
    Stability(StabilityArgs),
    /// Add species batches and track accuracy and query time
    Scalability(ScalabilityArgs),
    /// Retrain with capped samples per species
    Unbalanced(UnbalancedArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, env = "TWOVIEW_GENERA")]
    pub genera: Option<usize>,
    #[arg(long, env = "TWOVIEW_SPECIES_PER_GENUS")]
    pub species_per_genus: Option<usize>,
    /// Samples per species
    #[arg(long, env = "TWOVIEW_SAMPLES")]
    pub samples: Option<usize>,
    #[arg(long, env = "TWOVIEW_TRAIN_PER_SPECIES")]
    pub train_per_species: Option<usize>,
    #[arg(long, env = "TWOVIEW_IMAGE_SIZE")]
    pub image_size: Option<u32>,
    #[arg(long, env = "TWOVIEW_SHAPE_NOISE")]
    pub shape_noise: Option<f64>,
    #[arg(long, env = "TWOVIEW_TEXTURE_NOISE")]
    pub texture_noise: Option<f64>,
    /// First genus index, for batches that extend an existing dataset
    #[arg(long, env = "TWOVIEW_GENUS_OFFSET")]
    pub genus_offset: Option<usize>,
    /// First texture index, for batches that extend an existing dataset
    #[arg(long, env = "TWOVIEW_TEXTURE_OFFSET")]
    pub texture_offset: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ViewArgs {
    /// Local view side: 32, 64 or 128
    #[arg(long, env = "TWOVIEW_CROP_SIZE")]
    pub crop_size: Option<u32>,
    /// Disk radius of the stem-removing opening
    #[arg(long, env = "TWOVIEW_KERNEL_RADIUS")]
    pub kernel_radius: Option<u32>,
    /// Leaf polarity: dark (leaf darker than background) or bright
    #[arg(long, env = "TWOVIEW_POLARITY")]
    pub polarity: Option<String>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Dataset root (taxonomy.csv, corpus/, optional test_manifest.txt)
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub views: ViewArgs,
    /// Test samples per species when the dataset has no manifest
    #[arg(long, env = "TWOVIEW_TEST_PER_CLASS")]
    pub test_per_class: Option<usize>,
    /// Rotated copies added per training sample
    #[arg(long, env = "TWOVIEW_ROTATIONS")]
    pub rotations: Option<usize>,
    /// Largest rotation angle in degrees
    #[arg(long, env = "TWOVIEW_MAX_ROTATION")]
    pub max_rotation: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct StageArgs {
    /// Which model: genus (global view) or species (local view)
    #[arg(long, env = "TWOVIEW_STAGE")]
    pub stage: String,
    #[arg(long, env = "TWOVIEW_POSITIVE")]
    pub positive: Option<usize>,
    /// Negative pairs [default: 1.5 x positive]
    #[arg(long, env = "TWOVIEW_NEGATIVE")]
    pub negative: Option<usize>,
    /// Sample pairs with replacement when a pool is too small
    #[arg(long, env = "TWOVIEW_ALLOW_REPLACEMENT")]
    pub allow_replacement: Option<bool>,
    #[arg(long, env = "TWOVIEW_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "TWOVIEW_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "TWOVIEW_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long, env = "TWOVIEW_MOMENTUM")]
    pub momentum: Option<f64>,
    #[arg(long, env = "TWOVIEW_LR_DECAY")]
    pub lr_decay: Option<f64>,
    #[arg(long, env = "TWOVIEW_DECAY_EVERY")]
    pub decay_every: Option<usize>,
    /// Leading backbone layers kept fixed
    #[arg(long, env = "TWOVIEW_FROZEN_LAYERS")]
    pub frozen_layers: Option<usize>,
    /// conv4 or mlp2[-h<N>]
    #[arg(long, env = "TWOVIEW_BACKBONE")]
    pub backbone: Option<String>,
    #[arg(long, env = "TWOVIEW_EMBEDDING_DIM")]
    pub embedding_dim: Option<usize>,
    #[arg(long, env = "TWOVIEW_INIT_SEED")]
    pub init_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MakePairsArgs {
    /// Prepared directory written by `preprocess`
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub stage: StageArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pair manifest from `make-pairs`; sampled afresh when omitted
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[command(flatten)]
    pub stage: StageArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Genus model (global view)
    #[arg(long, env = "TWOVIEW_GLOBAL_MODEL")]
    pub global: PathBuf,
    /// Species model (local view)
    #[arg(long, env = "TWOVIEW_LOCAL_MODEL")]
    pub local: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ClassifierArgs {
    /// Stage-1 list length
    #[arg(long, env = "TWOVIEW_K")]
    pub k: Option<usize>,
    #[arg(long, env = "TWOVIEW_TOP_N")]
    pub top_n: Option<usize>,
    /// How a species' reference similarities combine: mean or max
    #[arg(long, env = "TWOVIEW_AGGREGATION")]
    pub aggregation: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RefArgs {
    /// References per species (or per genus with --budget per-genus)
    #[arg(long = "n-r", env = "TWOVIEW_N_R")]
    pub n_r: Option<usize>,
    /// per-species or per-genus
    #[arg(long, env = "TWOVIEW_BUDGET")]
    pub budget: Option<String>,
    /// Samples references are drawn from: original or all (with rotated copies)
    #[arg(long, env = "TWOVIEW_REF_POOL")]
    pub pool: Option<String>,
}

#[derive(Args, Debug)]
pub struct BuildRefsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub refs: RefArgs,
}

#[derive(Args, Debug)]
pub struct AddSpeciesArgs {
    /// Existing reference set directory (left unchanged)
    #[arg(long)]
    pub refs: PathBuf,
    /// Dataset root with the new species; its training split becomes references
    #[arg(long)]
    pub dataset: PathBuf,
    /// Prepared directory of the original data, to merge its taxonomy
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub views: ViewArgs,
    /// Test samples per species when the dataset has no manifest
    #[arg(long, env = "TWOVIEW_TEST_PER_CLASS")]
    pub test_per_class: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// An image file or a directory of images
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[command(flatten)]
    pub views: ViewArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    /// Accuracy cut-offs, comma separated
    #[arg(long = "top-k", env = "TWOVIEW_TOP_K", value_delimiter = ',')]
    pub top_k: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Reference counts per species
    #[arg(long = "n-r", env = "TWOVIEW_SWEEP_N_R", value_delimiter = ',')]
    pub n_r: Option<Vec<usize>>,
    /// Stage-1 list lengths
    #[arg(long = "k", env = "TWOVIEW_SWEEP_K", value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, env = "TWOVIEW_AGGREGATION")]
    pub aggregation: Option<String>,
    #[arg(long, env = "TWOVIEW_REF_POOL")]
    pub pool: Option<String>,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[arg(long = "n-r", env = "TWOVIEW_N_R")]
    pub n_r: Option<usize>,
    #[arg(long, env = "TWOVIEW_REPETITIONS")]
    pub repetitions: Option<usize>,
    /// Samples references are drawn from: original or all [default: all]
    #[arg(long, env = "TWOVIEW_REF_POOL")]
    pub pool: Option<String>,
}

#[derive(Args, Debug)]
pub struct ScalabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Base reference set
    #[arg(long)]
    pub refs: PathBuf,
    /// Dataset root of one batch of new species (repeatable, applied in order)
    #[arg(long = "batch", required = true)]
    pub batches: Vec<PathBuf>,
    #[command(flatten)]
    pub models: ModelArgs,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    /// Timing repetitions (the fastest is kept)
    #[arg(long, env = "TWOVIEW_REPEATS")]
    pub repeats: Option<usize>,
    #[arg(long, env = "TWOVIEW_TEST_PER_CLASS")]
    pub test_per_class: Option<usize>,
}

#[derive(Args, Debug)]
pub struct UnbalancedArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Per-species training caps
    #[arg(long, env = "TWOVIEW_CAPS", value_delimiter = ',')]
    pub caps: Option<Vec<usize>>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[arg(long = "n-r", env = "TWOVIEW_N_R")]
    pub n_r: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("twoview: {}", diagnostic(&e));
            ExitCode::from(exit::code_for(&e))
        }
    }
}

/// The error chain on one line, skipping causes their parent already quotes.
fn diagnostic(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.ends_with(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}
