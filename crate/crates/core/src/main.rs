//! Batch CLI over the ataxia-rater pipeline.
//!
//! Exit codes: 0 on success (for `process`/`evaluate`: at least one video
//! made it through), 1 when every video failed, 2 for unreadable or
//! schema-invalid inputs and bad invocations.

use ataxia_rater::config::{ConfigError, RunConfig};
use ataxia_rater::eval::ExclusionRecord;
use ataxia_rater::io::{self, IoError};
use ataxia_rater::pipeline::{
    self, EvaluateOptions, FullpointMode, PipelineError, ProcessOptions, ProcessOutcome,
};
use ataxia_rater::synth::{generate_dataset, CameraMotion, DatasetParams, SynthError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "ataxia-rater",
    version,
    about = "Rates finger-to-nose exam severity from body-keypoint trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract motion features from every video in a dataset manifest.
    Process(ProcessArgs),
    /// Train a rating model from a feature CSV.
    Train(TrainArgs),
    /// Predict ratings for feature rows with a trained model.
    Predict(PredictArgs),
    /// Leave-one-patient-out evaluation with optional rater comparison.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic labeled dataset in the formats `process` reads.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Key=value config file; falls back to $ATAXIA_RATER_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set window=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ProcessArgs {
    /// Dataset manifest CSV.
    manifest: PathBuf,
    /// Output feature CSV.
    #[arg(short, long)]
    output: PathBuf,
    /// Per-video failure sidecar (default: <output>.errors).
    #[arg(long)]
    errors: Option<PathBuf>,
    /// Directory for per-video stabilization/segmentation dumps.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(short, long)]
    jobs: Option<usize>,
    /// Leave camera motion in the tracks (diagnostic).
    #[arg(long)]
    no_stabilize: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature CSV from `process`.
    features: PathBuf,
    /// Output model JSON.
    #[arg(short, long)]
    output: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model JSON.
    model: PathBuf,
    /// Feature CSV to rate.
    features: PathBuf,
    /// Output predictions CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FullpointArg {
    /// Keep only integer-labeled videos.
    Discard,
    /// Randomly round half-point labels, repeated --repeats times.
    Round,
}

#[derive(Args)]
#[command(group(
    clap::ArgGroup::new("input").required(true).args(["features", "manifest"])
))]
struct EvaluateArgs {
    /// Feature CSV to evaluate directly.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Dataset manifest to process first, then evaluate.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output report JSON.
    #[arg(short, long)]
    output: PathBuf,
    /// Specialist ratings CSV for within-range agreement.
    #[arg(long)]
    raters: Option<PathBuf>,
    /// Full-point label experiment.
    #[arg(long, value_enum)]
    fullpoint: Option<FullpointArg>,
    /// Label-rounding repeats for --fullpoint round.
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the processing step (default: one per core).
    #[arg(short, long)]
    jobs: Option<usize>,
    /// Leave camera motion in the tracks (diagnostic).
    #[arg(long)]
    no_stabilize: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    patients: usize,
    #[arg(long, default_value_t = 2)]
    videos_per_patient: usize,
    /// Comma-separated weights for the nine severity bins 0,0.5,…,4.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    cycles: usize,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Mean cycle duration at severity 0, in seconds.
    #[arg(long, default_value_t = 1.0)]
    base_cycle_s: f64,
    /// Add camera pan/rotation/zoom wobble.
    #[arg(long)]
    camera: bool,
}

#[derive(Debug, Error)]
enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("all {0} videos failed; see the error sidecar")]
    AllFailed(usize),
    #[error("{0}")]
    Usage(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Config(_) | AppError::Io(_) | AppError::Synth(_) | AppError::Usage(_) => 2,
            AppError::Pipeline(PipelineError::Io(_)) => 2,
            AppError::Pipeline(_) | AppError::AllFailed(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Process(args) => cmd_process(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}

fn load_config(args: &ConfigArgs, seed: Option<u64>) -> Result<RunConfig, AppError> {
    let mut config = RunConfig::load(args.config.as_deref())?;
    for pair in &args.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| AppError::Usage(format!("--set {pair}: expected key=value")))?;
        config.set(key.trim(), value.trim()).map_err(AppError::Usage)?;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run_processing(
    manifest_path: &Path,
    config: &RunConfig,
    jobs: Option<usize>,
    skip_stabilization: bool,
) -> Result<ProcessOutcome, AppError> {
    let manifest = io::read_manifest(manifest_path)?;
    let options = ProcessOptions {
        jobs,
        skip_stabilization,
    };
    let outcome = pipeline::process_manifest(&manifest.entries, config, &options)?;
    for failure in &outcome.failures {
        eprintln!("skipped {}: {}", failure.video_id, failure.failure);
    }
    Ok(outcome)
}

fn cmd_process(args: ProcessArgs) -> Result<(), AppError> {
    let config = load_config(&args.config, None)?;
    let outcome = run_processing(&args.manifest, &config, args.jobs, args.no_stabilize)?;
    io::write_feature_rows(&args.output, &outcome.rows())?;
    let sidecar = args.errors.unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".errors");
        PathBuf::from(p)
    });
    pipeline::write_sidecar(&sidecar, &outcome.failures)?;
    if let Some(dir) = &args.dump_dir {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File {
            path: dir.display().to_string(),
            source,
        })?;
        for video in &outcome.videos {
            let id = &video.row.video_id;
            if let Some(transforms) = &video.transforms {
                io::write_json(&dir.join(format!("{id}_transforms.json")), transforms)?;
            }
            io::write_json(&dir.join(format!("{id}_segmentation.json")), &video.segmentation)?;
        }
    }
    println!(
        "processed {} videos, {} failed",
        outcome.videos.len(),
        outcome.failures.len()
    );
    if outcome.all_failed() {
        return Err(AppError::AllFailed(outcome.failures.len()));
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let config = load_config(&args.config, args.seed)?;
    let rows = io::read_feature_rows(&args.features)?;
    let model = pipeline::train_rows(&rows, &config).map_err(PipelineError::Model)?;
    io::write_model(&args.output, &model)?;
    let kept = model.weights.iter().filter(|w| **w != 0.0).count();
    println!(
        "trained on {} rows: lambda {}, {kept}/{} features kept",
        rows.len(),
        model.lambda,
        model.weights.len()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), AppError> {
    let model = io::read_model(&args.model)?;
    let rows = io::read_feature_rows(&args.features)?;
    let predictions = pipeline::predict_rows(&model, &rows).map_err(PipelineError::Model)?;
    io::write_predictions(&args.output, &predictions)?;
    println!("predicted {} videos", predictions.len());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), AppError> {
    let config = load_config(&args.config, args.seed)?;
    let (rows, processing_failures) = match (&args.features, &args.manifest) {
        (Some(path), None) => (io::read_feature_rows(path)?, Vec::new()),
        (None, Some(path)) => {
            let outcome = run_processing(path, &config, args.jobs, args.no_stabilize)?;
            if outcome.all_failed() {
                return Err(AppError::AllFailed(outcome.failures.len()));
            }
            (outcome.rows(), outcome.failures)
        }
        _ => unreachable!("clap enforces exactly one input"),
    };
    let raters = args.raters.as_deref().map(io::read_raters).transpose()?;
    let fullpoint = args.fullpoint.map(|mode| match mode {
        FullpointArg::Discard => FullpointMode::Discard,
        FullpointArg::Round => FullpointMode::Round {
            repeats: args.repeats,
        },
    });
    let mut document = pipeline::evaluate_rows(&rows, &config, &EvaluateOptions { raters, fullpoint })?;
    // Videos that never produced features are excluded with their stage
    // failure, so the report accounts for every manifest entry.
    document
        .report
        .excluded
        .extend(processing_failures.into_iter().map(|f| ExclusionRecord {
            video_id: f.video_id,
            reason: f.failure.to_string(),
        }));
    io::write_json(&args.output, &document)?;
    let report = &document.report;
    println!(
        "evaluated {} videos ({} excluded): mae {:.3}, pearson {}, err<1 {:.1}%",
        report.per_video.len(),
        report.excluded.len(),
        report.mae,
        report
            .pearson
            .map_or("n/a".to_string(), |r| format!("{r:.3}")),
        100.0 * report.frac_err_lt_1
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), AppError> {
    let weights = match &args.weights {
        Some(text) => text
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<f64>()
                    .map_err(|_| AppError::Usage(format!("--weights: `{w}` is not a number")))
            })
            .collect::<Result<Vec<f64>, _>>()?,
        None => DatasetParams::uniform_weights(),
    };
    let mut params = DatasetParams::new(args.patients, args.videos_per_patient, weights, args.seed);
    params.n_cycles = args.cycles;
    params.fps = args.fps;
    params.base_cycle_s = args.base_cycle_s;
    params.camera_motion = args.camera.then(CameraMotion::default);
    let exams = generate_dataset(&params)?;
    std::fs::create_dir_all(&args.output).map_err(|source| IoError::File {
        path: args.output.display().to_string(),
        source,
    })?;
    let manifest = pipeline::write_synthetic_dataset(&args.output, &exams)?;
    println!("{}", manifest.display());
    Ok(())
}
