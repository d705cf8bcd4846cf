//! `lesionseg`: batch driver for augmentation, prediction, ensembling,
//! post-processing, evaluation and dataset utilities.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lesionseg::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "lesionseg", version, about = "Dermoscopy lesion and attribute segmentation pipeline")]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write augmented image/mask pairs and a replayable parameter log per case.
    Augment(AugmentArgs),
    /// Predict probability maps with TTA and fold ensembling.
    Predict(PredictArgs),
    /// Average probability maps from several model directories.
    Ensemble(EnsembleArgs),
    /// Threshold maps into masks, with fixed thresholds or a grid search.
    Postprocess(PostprocessArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Balance an attribute's negatives against its positives.
    Subsample(SubsampleArgs),
    /// Assign cross-validation folds.
    Folds(FoldsArgs),
    /// Check encoder/decoder graphs against the wiring rules.
    Archcheck(ArchcheckArgs),
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Augmented copies per case.
    #[arg(long, default_value_t = 1)]
    copies: u32,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `lesion` or `attribute:<kind>`.
    #[arg(long, default_value = "lesion")]
    task: String,
    /// `baseline`, `fixtures:<dir>` or `command:<program>`.
    #[arg(long, default_value = "baseline")]
    predictor: String,
    /// Argument for a command predictor; `{fold}` and `{case}` are substituted.
    #[arg(long = "predictor-arg", allow_hyphen_values = true)]
    predictor_args: Vec<String>,
    /// Overrides `ensemble.folds`.
    #[arg(long)]
    folds: Option<u32>,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    #[arg(long)]
    out: PathBuf,
    /// Directories of `<case>.png` probability maps, one per model.
    #[arg(required = true)]
    map_dirs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct PostprocessArgs {
    /// Directory of `<case>.png` probability maps.
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "lesion")]
    task: String,
    /// `T_H,T_L`; overrides the configured pair.
    #[arg(long, conflicts_with = "grid_search")]
    thresholds: Option<String>,
    /// Pick thresholds by exhaustive search against the manifest ground truth.
    #[arg(long, requires = "manifest")]
    grid_search: bool,
    /// Ground truth for `--grid-search`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Lesion masks restricting attribute maps.
    #[arg(long)]
    lesion_masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of `<case>.png` predicted masks; one subdirectory per attribute for `--task attributes`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth source.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `lesion`, `attribute:<kind>` or `attributes` (all five).
    #[arg(long, default_value = "lesion")]
    task: String,
    /// Overrides `metrics.jaccard_cutoff`.
    #[arg(long)]
    cutoff: Option<f64>,
    /// Also write ground-truth/prediction/overlap overlays.
    #[arg(long)]
    overlays: bool,
}

#[derive(Debug, Args)]
struct SubsampleArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest file.
    #[arg(long)]
    out: PathBuf,
    /// Attribute kind, e.g. `streaks`.
    #[arg(long)]
    attribute: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FoldsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest file.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `folds.k`.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    stratify: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ArchcheckArgs {
    /// JSON graph file; all builtin graphs are checked when neither this nor `--builtin` is given.
    #[arg(long, conflicts_with = "builtin")]
    graph: Option<PathBuf>,
    /// Builtin encoder name.
    #[arg(long)]
    builtin: Option<String>,
    /// Input shape `H,W,C`.
    #[arg(long, default_value = "192,256,3")]
    input: String,
    /// Write the report as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Data => 3,
        ErrorClass::Predictor => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
