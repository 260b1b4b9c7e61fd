//! Orchestration behind the CLI commands: per-video processing, training,
//! prediction, and the LOPO evaluation report.
//!
//! A video that fails any stage is recorded with the stage name and reason
//! and never takes the rest of the batch down with it.

use crate::config::RunConfig;
use crate::eval::{
    self, fullpoint_discard, fullpoint_random_round, run_lopo, EvalError, EvaluationReport,
    FeatureRow, FullpointRoundReport, LopoConfig, RaterMatrix, WithinRangeReport,
};
use crate::features::featurize;
use crate::io::{self, IoError, ManifestEntry, Prediction, SegmentationDump, TransformDump};
use crate::model::{self, ModelError, RatingModel, TrainSettings};
use crate::regularize::{
    constrain_to_region, fastest_region, flow_smooth, stabilize_flows, stabilize_trajectories,
};
use crate::segment::{build_cycles, estimate_endpoints, hysteresis_events};
use crate::signal::{normalize_units, relative_signal, BarsRating, JointLabel, KeypointTrack};
use crate::stabilize::{correspondences_from_background, try_stabilize};
use crate::synth::SyntheticExam;
use crate::FeatureVector;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Which stage rejected a video, and the error it raised.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageFailure {
    pub stage: &'static str,
    pub reason: String,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoFailure {
    pub video_id: String,
    #[serde(flatten)]
    pub failure: StageFailure,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("thread pool: {0}")]
    Jobs(String),
}

/// Everything `process` keeps for one successful video.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedVideo {
    pub row: FeatureRow,
    /// Per-gap stabilization transforms; `None` when stabilization was
    /// skipped or backed off.
    pub transforms: Option<Vec<TransformDump>>,
    pub segmentation: SegmentationDump,
}

#[derive(Debug, Default, Clone)]
pub struct ProcessOptions {
    /// Worker threads; `None` or `Some(0)` means one per core.
    pub jobs: Option<usize>,
    /// Diagnostic switch: leave camera motion in the tracks.
    pub skip_stabilization: bool,
}

#[derive(Debug)]
pub struct ProcessOutcome {
    pub videos: Vec<ProcessedVideo>,
    pub failures: Vec<VideoFailure>,
}

impl ProcessOutcome {
    /// True when not a single video made it through; callers decide whether
    /// that is fatal (the CLI exits 1).
    pub fn all_failed(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn rows(&self) -> Vec<FeatureRow> {
        self.videos.iter().map(|v| v.row.clone()).collect()
    }
}

fn stage<E: fmt::Debug>(name: &'static str) -> impl Fn(E) -> StageFailure {
    // Debug form of library errors names the variant ("DegenerateRange"),
    // which is exactly the greppable token the sidecar wants.
    move |e| StageFailure {
        stage: name,
        reason: format!("{e:?}"),
    }
}

fn find_joint(tracks: &[KeypointTrack], joint: JointLabel) -> Option<KeypointTrack> {
    tracks.iter().find(|t| t.joint == joint).cloned()
}

/// Runs the full per-video stage chain: load, stabilize, smooth, constrain,
/// signal, segment, featurize.
pub fn process_entry(
    entry: &ManifestEntry,
    config: &RunConfig,
    skip_stabilization: bool,
) -> Result<ProcessedVideo, StageFailure> {
    let load = |e: IoError| StageFailure {
        stage: "load",
        reason: e.to_string(),
    };
    let tracks = io::read_tracks(&entry.trajectory, entry.fps).map_err(load)?;
    let flows = entry.flow.as_deref().map(io::read_flows).transpose().map_err(load)?;
    let trajectories = entry
        .trajectories
        .as_deref()
        .map(io::read_trajectories)
        .transpose()
        .map_err(load)?;
    let raw_wrist = find_joint(&tracks, JointLabel::Wrist).ok_or(StageFailure {
        stage: "load",
        reason: "no wrist track".into(),
    })?;
    if find_joint(&tracks, JointLabel::HeadBottom).is_none() {
        return Err(StageFailure {
            stage: "load",
            reason: "no head track".into(),
        });
    }

    let (tracks, transforms, chain) = if skip_stabilization {
        (tracks, None, None)
    } else {
        let background: Vec<KeypointTrack> = tracks
            .iter()
            .filter(|t| matches!(t.joint, JointLabel::Background(_)))
            .cloned()
            .collect();
        let pairs = correspondences_from_background(&background, config.conf_floor);
        let outcome = try_stabilize(&tracks, &pairs, config.min_points);
        let dumps = outcome.gaps.as_deref().map(io::transform_dumps);
        (outcome.tracks, dumps, outcome.chain)
    };
    let (flows, trajectories) = match &chain {
        Some(chain) => {
            let flows = flows
                .map(|f| stabilize_flows(&f, &raw_wrist, chain))
                .transpose()
                .map_err(stage("stabilize"))?;
            let trajectories = trajectories
                .map(|t| stabilize_trajectories(&t, chain))
                .transpose()
                .map_err(stage("stabilize"))?;
            (flows, trajectories)
        }
        None => (flows, trajectories),
    };

    let wrist = find_joint(&tracks, JointLabel::Wrist).expect("checked above");
    let head = find_joint(&tracks, JointLabel::HeadBottom).expect("checked above");

    let wrist = match &flows {
        Some(f) => flow_smooth(&wrist, f, config.window).map_err(stage("smooth"))?,
        None => wrist,
    };

    let wrist = match &trajectories {
        Some(ts) => {
            let region = fastest_region(ts, config.top_fraction).map_err(stage("constrain"))?;
            constrain_to_region(&wrist, &region, 0.25 * wrist_x_extent(&wrist, config.conf_floor))
        }
        None => wrist,
    };

    let signal = relative_signal(&wrist, &head, config.conf_floor).map_err(stage("signal"))?;
    let signal = normalize_units(&signal).map_err(stage("segment"))?;
    let endpoints = estimate_endpoints(&signal).map_err(stage("segment"))?;
    let events = hysteresis_events(&signal, &endpoints, config.fwd_frac, config.bwd_frac)
        .map_err(stage("segment"))?;
    let cycles = build_cycles(&events, signal.x.len()).map_err(stage("segment"))?;
    let features = featurize(&signal, &cycles).map_err(stage("featurize"))?;

    Ok(ProcessedVideo {
        row: FeatureRow {
            video_id: entry.video_id.clone(),
            patient_id: entry.patient_id.clone(),
            hand: entry.hand,
            gold: entry.gold_rating,
            features,
        },
        transforms,
        segmentation: SegmentationDump::from(&cycles),
    })
}

/// Wrist x-extent over confident frames (all frames if none clear the
/// floor); the snap radius is a quarter of it.
fn wrist_x_extent(wrist: &KeypointTrack, conf_floor: f64) -> f64 {
    let extent = |xs: &mut dyn Iterator<Item = f64>| {
        xs.fold(None, |acc: Option<(f64, f64)>, x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
        .map_or(0.0, |(lo, hi)| hi - lo)
    };
    let confident = extent(
        &mut wrist
            .frames
            .iter()
            .filter(|p| p.confidence >= conf_floor)
            .map(|p| p.x),
    );
    if confident > 0.0 {
        confident
    } else {
        extent(&mut wrist.frames.iter().map(|p| p.x))
    }
}

/// Processes every manifest entry, in parallel, reporting results in
/// manifest order.
pub fn process_manifest(
    entries: &[ManifestEntry],
    config: &RunConfig,
    options: &ProcessOptions,
) -> Result<ProcessOutcome, PipelineError> {
    let run = || {
        entries
            .par_iter()
            .map(|e| (e.video_id.clone(), process_entry(e, config, options.skip_stabilization)))
            .collect::<Vec<_>>()
    };
    let results = match options.jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PipelineError::Jobs(e.to_string()))?
            .install(run),
        _ => run(),
    };
    let mut videos = Vec::new();
    let mut failures = Vec::new();
    for (video_id, result) in results {
        match result {
            Ok(v) => videos.push(v),
            Err(failure) => failures.push(VideoFailure { video_id, failure }),
        }
    }
    Ok(ProcessOutcome { videos, failures })
}

/// Writes the per-video failure sidecar; an empty file means a clean run.
pub fn write_sidecar(path: &Path, failures: &[VideoFailure]) -> Result<(), IoError> {
    let mut out = String::new();
    for f in failures {
        out.push_str(&format!("{}\t{}\n", f.video_id, f.failure));
    }
    std::fs::write(path, out).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn patient_groups(rows: &[FeatureRow]) -> Vec<usize> {
    let mut ids: Vec<&str> = rows.iter().map(|r| r.patient_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    rows.iter()
        .map(|r| ids.binary_search(&r.patient_id.as_str()).expect("id present"))
        .collect()
}

/// Trains one model on all rows, grouping the inner CV by patient.
pub fn train_rows(rows: &[FeatureRow], config: &RunConfig) -> Result<RatingModel, ModelError> {
    let features: Vec<FeatureVector> = rows.iter().map(|r| r.features).collect();
    let ratings: Vec<BarsRating> = rows.iter().map(|r| r.gold).collect();
    let settings = TrainSettings {
        seed: config.seed,
        grid_len: config.lambda_grid,
        folds: config.folds,
    };
    model::train_model(&features, &ratings, Some(&patient_groups(rows)), &settings)
}

pub fn predict_rows(model: &RatingModel, rows: &[FeatureRow]) -> Result<Vec<Prediction>, ModelError> {
    rows.iter()
        .map(|r| {
            let raw = model::predict_raw(model, &r.features);
            Ok(Prediction {
                video_id: r.video_id.clone(),
                predicted_raw: raw,
                predicted_rounded: model::round_to_bars(raw)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FullpointMode {
    /// Drop half-point-labeled videos and evaluate the rest.
    Discard,
    /// Randomly round half-point labels up or down, `repeats` times.
    Round { repeats: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FullpointOutcome {
    Discard {
        kept_videos: usize,
        report: EvaluationReport,
    },
    Round {
        #[serde(flatten)]
        report: FullpointRoundReport,
    },
}

#[derive(Debug, Default, Clone)]
pub struct EvaluateOptions {
    pub raters: Option<RaterMatrix>,
    pub fullpoint: Option<FullpointMode>,
}

/// The evaluate command's report document: settings echo plus results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationDocument {
    pub config: RunConfig,
    pub report: EvaluationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fullpoint: Option<FullpointOutcome>,
}

fn lopo_config(config: &RunConfig) -> LopoConfig {
    LopoConfig {
        seed: config.seed,
        inner_folds: config.folds,
        grid_len: config.lambda_grid,
    }
}

/// Specialist-range agreement over the videos present in both the report
/// and the rater matrix.
fn within_range(
    report: &EvaluationReport,
    raters: &RaterMatrix,
) -> Result<WithinRangeReport, EvalError> {
    let by_id: std::collections::HashMap<&str, &Vec<BarsRating>> = raters
        .videos
        .iter()
        .map(|v| (v.video_id.as_str(), &v.ratings))
        .collect();
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut bands = Vec::new();
    for v in &report.per_video {
        if let Some(ratings) = by_id.get(v.video_id.as_str()) {
            pred.push(v.predicted_rounded.value());
            gold.push(v.gold.value());
            bands.push(ratings.iter().map(|r| r.value()).collect());
        }
    }
    Ok(WithinRangeReport {
        including_gold: eval::within_range_rate(&pred, &gold, &bands, true)?,
        excluding_gold: eval::within_range_rate(&pred, &gold, &bands, false)?,
    })
}

/// Leave-one-patient-out evaluation plus the optional rater-agreement and
/// full-point experiments.
pub fn evaluate_rows(
    rows: &[FeatureRow],
    config: &RunConfig,
    options: &EvaluateOptions,
) -> Result<EvaluationDocument, PipelineError> {
    let lopo = lopo_config(config);
    let mut report = run_lopo(rows, &lopo)?;
    if let Some(raters) = &options.raters {
        report.within_range = Some(within_range(&report, raters)?);
    }
    let fullpoint = match options.fullpoint {
        Some(FullpointMode::Discard) => {
            let kept = fullpoint_discard(rows)?;
            let sub = run_lopo(&kept, &lopo)?;
            Some(FullpointOutcome::Discard {
                kept_videos: kept.len(),
                report: sub,
            })
        }
        Some(FullpointMode::Round { repeats }) => Some(FullpointOutcome::Round {
            report: fullpoint_random_round(rows, &lopo, config.seed, repeats)?,
        }),
        None => None,
    };
    Ok(EvaluationDocument {
        config: config.clone(),
        report,
        fullpoint,
    })
}

/// Materializes synthetic exams in the on-disk formats `process` reads and
/// returns the manifest path.
pub fn write_synthetic_dataset(
    dir: &Path,
    exams: &[SyntheticExam],
) -> Result<PathBuf, IoError> {
    let mut entries = Vec::with_capacity(exams.len());
    for exam in exams {
        let id = &exam.record.video_id;
        let track_name = format!("{id}_tracks.csv");
        let flow_name = format!("{id}_flow.csv");
        let traj_name = format!("{id}_traj.csv");
        let mut tracks: Vec<&KeypointTrack> = vec![&exam.record.wrist, &exam.record.head];
        tracks.extend(exam.background.iter());
        io::write_tracks(&dir.join(&track_name), &tracks)?;
        io::write_flows(&dir.join(&flow_name), &exam.flows)?;
        io::write_trajectories(&dir.join(&traj_name), &exam.trajectories)?;
        entries.push(ManifestEntry {
            video_id: id.clone(),
            patient_id: exam.record.patient_id.clone(),
            hand: exam.record.hand,
            gold_rating: exam.record.gold_rating,
            fps: exam.record.wrist.fps,
            trajectory: PathBuf::from(track_name),
            flow: Some(PathBuf::from(flow_name)),
            trajectories: Some(PathBuf::from(traj_name)),
        });
    }
    let manifest = dir.join("manifest.csv");
    io::write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
