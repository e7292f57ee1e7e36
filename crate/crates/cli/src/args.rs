use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use inkrestore::corpus::Split;
use inkrestore::Scenario;

#[derive(Parser, Debug)]
#[command(name = "inkrestore", version, about = "Degraded handwriting enhancement: corpora, training, inference, evaluation")]
pub struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Base directory for relative input paths.
    #[arg(long, global = true, env = "INKRESTORE_DATA_ROOT")]
    pub data_root: Option<PathBuf>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a small synthetic clean-line corpus and background set.
    Synth(SynthArgs),
    /// Degrade a clean manifest with background and distortion recipes.
    BuildCorpus(BuildCorpusArgs),
    /// Train the generator, discriminator and recognizer jointly.
    Train(TrainArgs),
    /// One epoch of generator/discriminator training on paired pages.
    FineTune(FineTuneArgs),
    /// Binarize page images with a trained generator.
    Enhance(EnhanceArgs),
    /// Score binarized pages against ground truth.
    EvaluateBinarization(EvaluateBinarizationArgs),
    /// Score transcriptions against ground truth.
    EvaluateHtr(EvaluateHtrArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub train: usize,
    #[arg(long, default_value_t = 8)]
    pub valid: usize,
    #[arg(long, default_value_t = 8)]
    pub test: usize,
    #[arg(long, default_value_t = 6)]
    pub backgrounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BuildCorpusArgs {
    /// Clean manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of background PNGs.
    #[arg(long)]
    pub backgrounds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus build settings (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_background_fraction: Option<f64>,
    /// Keep degraded images already present in the output.
    #[arg(long)]
    pub resume: bool,
    /// Validate inputs and print the effective configuration only.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainingOverrides {
    /// Training settings (TOML or JSON); flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainingOverrides,
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<Scenario>,
    /// Weight of the recognition term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of the pixel term.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from the state saved in --out.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct FineTuneArgs {
    /// Model to start from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Paired manifests; repeat for several datasets.
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainingOverrides,
    /// Not accepted: fine-tuning runs without the recognizer.
    #[arg(long, hide = true)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PatchArgs {
    #[arg(long, default_value_t = inkrestore::MODEL_HEIGHT)]
    pub patch_height: usize,
    #[arg(long, default_value_t = inkrestore::MODEL_WIDTH)]
    pub patch_width: usize,
    /// Patches per generator call.
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Skip the flipped pass and its vote.
    #[arg(long)]
    pub no_flip: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Overlap between neighbouring patches, in pixels.
    #[arg(long, default_value_t = 0)]
    pub overlap: usize,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Page image or directory of PNG pages.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub patches: PatchArgs,
    /// Also write `<id>.compare.png` with input and output side by side.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Otsu,
    Sauvola,
}

#[derive(Args, Debug)]
pub struct EvaluateBinarizationArgs {
    /// Directory of binarized predictions.
    #[arg(long, conflicts_with_all = ["input", "manifest"])]
    pub pred: Option<PathBuf>,
    /// Directory of grayscale inputs to binarize first.
    #[arg(long, conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// Directory of ground-truth binary images.
    #[arg(long, required_unless_present = "manifest")]
    pub gt: Option<PathBuf>,
    /// Paired manifest: degraded images are the inputs, clean images
    /// thresholded at 0.5 the ground truth.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = inkrestore::inference::SAUVOLA_DEFAULT_WINDOW)]
    pub sauvola_window: usize,
    #[arg(long, default_value_t = inkrestore::inference::SAUVOLA_DEFAULT_K)]
    pub sauvola_k: f64,
    #[command(flatten)]
    pub patches: PatchArgs,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print one row per item, not only the means.
    #[arg(long)]
    pub per_item: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HtrSource {
    /// Degraded lines as stored.
    Degraded,
    /// Degraded lines passed through the generator first.
    Enhanced,
    /// Clean ground-truth lines.
    Clean,
}

#[derive(Args, Debug)]
pub struct EvaluateHtrArgs {
    /// Directory of hypothesis `.txt` files.
    #[arg(long, requires = "gt", conflicts_with_all = ["manifest", "checkpoint"])]
    pub pred: Option<PathBuf>,
    /// Directory of ground-truth `.txt` files.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "checkpoint", required_unless_present = "pred")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    #[arg(long, value_enum, default_value_t = HtrSource::Enhanced)]
    pub source: HtrSource,
    #[arg(long, default_value_t = inkrestore::MODEL_HEIGHT)]
    pub height: usize,
    #[arg(long, default_value_t = inkrestore::MODEL_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub per_item: bool,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: inkrestore::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: inkrestore::Error| e.to_string())
}
