//! Readers and writers for every on-disk format.
//!
//! CSV schema violations carry the file, 1-based line number, and what was
//! expected, so a bad row is findable without a debugger. Floats are written
//! with Rust's shortest round-trip formatting: parsing the text recovers the
//! exact bits, which keeps reruns byte-identical.

use crate::eval::{FeatureRow, RaterMatrix, RaterVideo};
use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::model::RatingModel;
use crate::regularize::{FlowSample, MotionTrajectory};
use crate::segment::{Cycle, CycleSet, Designation, Span};
use crate::signal::{BarsRating, FramePoint, Hand, JointLabel, KeypointTrack};
use crate::stabilize::EstimatedTransform;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn schema(path: &Path, line: u64, message: impl Into<String>) -> IoError {
    IoError::Schema {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// CSV rows with their 1-based line numbers, header verified.
fn read_csv_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                file_err(path, std::io::Error::new(std::io::ErrorKind::NotFound, e))
            }
            _ => format_err(path, e.to_string()),
        })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((
            line,
            record.iter().map(|f| f.trim().to_string()).collect::<Vec<_>>(),
        ));
    }
    let Some((line, first)) = rows.first() else {
        return Err(schema(path, 1, format!("empty file, expected header {}", header.join(","))));
    };
    if first.iter().map(String::as_str).ne(header.iter().copied()) {
        return Err(schema(
            path,
            *line,
            format!("header is `{}`, expected `{}`", first.join(","), header.join(",")),
        ));
    }
    Ok(rows.split_off(1))
}

fn expect_fields(path: &Path, line: u64, row: &[String], n: usize) -> Result<(), IoError> {
    if row.len() != n {
        return Err(schema(path, line, format!("{} fields, expected {n}", row.len())));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, name: &str, s: &str) -> Result<f64, IoError> {
    let v: f64 = s
        .parse()
        .map_err(|_| schema(path, line, format!("{name} `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(schema(path, line, format!("{name} `{s}` is not finite")));
    }
    Ok(v)
}

fn parse_usize(path: &Path, line: u64, name: &str, s: &str) -> Result<usize, IoError> {
    s.parse()
        .map_err(|_| schema(path, line, format!("{name} `{s}` is not a non-negative integer")))
}

fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|e| file_err(path, e))
}

/// Joins grouped per-frame samples into dense series, requiring frames to
/// cover `first..first+n` exactly once each.
fn dense_series<T>(
    path: &Path,
    label: &str,
    mut samples: Vec<(u64, usize, T)>,
) -> Result<(usize, Vec<T>), IoError> {
    samples.sort_by_key(|(_, frame, _)| *frame);
    let first = samples[0].1;
    for (i, (line, frame, _)) in samples.iter().enumerate() {
        let expected = first + i;
        if *frame != expected {
            let what = if *frame < expected { "duplicate" } else { "gap before" };
            return Err(schema(path, *line, format!("{what} frame {frame} in {label}")));
        }
    }
    Ok((first, samples.into_iter().map(|(_, _, v)| v).collect()))
}

// --- trajectory CSV: frame,joint,x,y,confidence ---

pub const TRACK_HEADER: [&str; 5] = ["frame", "joint", "x", "y", "confidence"];

/// Reads every joint's track. Frames of each joint must cover `0..n`
/// exactly; all joints must agree on `n`.
pub fn read_tracks(path: &Path, fps: f64) -> Result<Vec<KeypointTrack>, IoError> {
    let rows = read_csv_rows(path, &TRACK_HEADER)?;
    // BTreeMap on the label text keeps a stable joint order.
    let mut grouped: BTreeMap<String, Vec<(u64, usize, FramePoint)>> = BTreeMap::new();
    for (line, row) in &rows {
        expect_fields(path, *line, row, 5)?;
        let frame = parse_usize(path, *line, "frame", &row[0])?;
        if JointLabel::parse(&row[1]).is_none() {
            return Err(schema(
                path,
                *line,
                format!("joint `{}` is not wrist, head, or bg<k>", row[1]),
            ));
        }
        let confidence = parse_f64(path, *line, "confidence", &row[4])?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(schema(path, *line, format!("confidence {confidence} outside [0, 1]")));
        }
        grouped.entry(row[1].clone()).or_default().push((
            *line,
            frame,
            FramePoint {
                x: parse_f64(path, *line, "x", &row[2])?,
                y: parse_f64(path, *line, "y", &row[3])?,
                confidence,
            },
        ));
    }
    if grouped.is_empty() {
        return Err(schema(path, 1, "no data rows"));
    }
    let mut tracks = Vec::new();
    let mut expected_len: Option<usize> = None;
    for (label, samples) in grouped {
        let first_line = samples[0].0;
        let (first, frames) = dense_series(path, &label, samples)?;
        if first != 0 {
            return Err(schema(path, first_line, format!("{label} frames start at {first}, expected 0")));
        }
        match expected_len {
            None => expected_len = Some(frames.len()),
            Some(n) if n != frames.len() => {
                return Err(schema(
                    path,
                    first_line,
                    format!("{label} has {} frames, other joints have {n}", frames.len()),
                ));
            }
            Some(_) => {}
        }
        let joint = JointLabel::parse(&label).expect("validated above");
        tracks.push(
            KeypointTrack::new(joint, frames, fps)
                .map_err(|e| format_err(path, e.to_string()))?,
        );
    }
    Ok(tracks)
}

pub fn write_tracks(path: &Path, tracks: &[&KeypointTrack]) -> Result<(), IoError> {
    let mut out = String::from("frame,joint,x,y,confidence\n");
    for track in tracks {
        let joint = track.joint.as_str();
        for (frame, p) in track.frames.iter().enumerate() {
            out.push_str(&format!("{frame},{joint},{},{},{}\n", p.x, p.y, p.confidence));
        }
    }
    write_file(path, &out)
}

// --- flow CSV: frame,dx,dy ---

pub const FLOW_HEADER: [&str; 3] = ["frame", "dx", "dy"];

pub fn read_flows(path: &Path) -> Result<Vec<FlowSample>, IoError> {
    let rows = read_csv_rows(path, &FLOW_HEADER)?;
    if rows.is_empty() {
        return Err(schema(path, 1, "no data rows"));
    }
    let mut samples = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        expect_fields(path, *line, row, 3)?;
        let frame = parse_usize(path, *line, "frame", &row[0])?;
        samples.push((
            *line,
            frame,
            FlowSample {
                dx: parse_f64(path, *line, "dx", &row[1])?,
                dy: parse_f64(path, *line, "dy", &row[2])?,
            },
        ));
    }
    let (first, flows) = dense_series(path, "flow", samples)?;
    if first != 0 {
        return Err(schema(path, rows[0].0, format!("flow frames start at {first}, expected 0")));
    }
    Ok(flows)
}

pub fn write_flows(path: &Path, flows: &[FlowSample]) -> Result<(), IoError> {
    let mut out = String::from("frame,dx,dy\n");
    for (frame, f) in flows.iter().enumerate() {
        out.push_str(&format!("{frame},{},{}\n", f.dx, f.dy));
    }
    write_file(path, &out)
}

// --- trajectories CSV: traj_id,frame,x,y ---

pub const TRAJECTORY_HEADER: [&str; 4] = ["traj_id", "frame", "x", "y"];

pub fn read_trajectories(path: &Path) -> Result<Vec<MotionTrajectory>, IoError> {
    let rows = read_csv_rows(path, &TRAJECTORY_HEADER)?;
    let mut grouped: BTreeMap<u64, Vec<(u64, usize, [f64; 2])>> = BTreeMap::new();
    for (line, row) in &rows {
        expect_fields(path, *line, row, 4)?;
        let id: u64 = row[0]
            .parse()
            .map_err(|_| schema(path, *line, format!("traj_id `{}` is not an integer", row[0])))?;
        let frame = parse_usize(path, *line, "frame", &row[1])?;
        grouped.entry(id).or_default().push((
            *line,
            frame,
            [
                parse_f64(path, *line, "x", &row[2])?,
                parse_f64(path, *line, "y", &row[3])?,
            ],
        ));
    }
    if grouped.is_empty() {
        return Err(schema(path, 1, "no data rows"));
    }
    let mut trajectories = Vec::new();
    for (id, samples) in grouped {
        let (start, points) = dense_series(path, &format!("trajectory {id}"), samples)?;
        trajectories.push(
            MotionTrajectory::new(id, start, points)
                .map_err(|e| format_err(path, e.to_string()))?,
        );
    }
    Ok(trajectories)
}

pub fn write_trajectories(path: &Path, trajectories: &[MotionTrajectory]) -> Result<(), IoError> {
    let mut out = String::from("traj_id,frame,x,y\n");
    for t in trajectories {
        for (i, p) in t.points.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", t.id, t.start_frame + i, p[0], p[1]));
        }
    }
    write_file(path, &out)
}

// --- dataset manifest CSV ---

pub const MANIFEST_HEADER: [&str; 8] = [
    "video_id",
    "patient_id",
    "hand",
    "gold_rating",
    "fps",
    "trajectory",
    "flow",
    "trajectories",
];

/// One video's identity, label, and input file locations. Paths are
/// resolved against the manifest's directory at read time.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub patient_id: String,
    pub hand: Hand,
    pub gold_rating: BarsRating,
    pub fps: f64,
    pub trajectory: PathBuf,
    pub flow: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    let rows = read_csv_rows(path, &MANIFEST_HEADER)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::with_capacity(rows.len());
    let mut seen = std::collections::HashSet::new();
    for (line, row) in &rows {
        expect_fields(path, *line, row, 8)?;
        if !seen.insert(row[0].clone()) {
            return Err(schema(path, *line, format!("duplicate video_id `{}`", row[0])));
        }
        if row[0].is_empty() || row[1].is_empty() {
            return Err(schema(path, *line, "video_id and patient_id must be non-empty"));
        }
        let hand = Hand::parse(&row[2])
            .ok_or_else(|| schema(path, *line, format!("hand `{}` is not left or right", row[2])))?;
        let rating = parse_f64(path, *line, "gold_rating", &row[3])?;
        let gold_rating = BarsRating::new(rating)
            .map_err(|_| schema(path, *line, format!("gold_rating {rating} is not a half point in [0, 4]")))?;
        let fps = parse_f64(path, *line, "fps", &row[4])?;
        if fps <= 0.0 {
            return Err(schema(path, *line, format!("fps {fps} must be > 0")));
        }
        if row[5].is_empty() {
            return Err(schema(path, *line, "trajectory path must be non-empty"));
        }
        let resolve = |s: &str| -> Option<PathBuf> {
            if s.is_empty() {
                None
            } else {
                Some(base.join(s))
            }
        };
        entries.push(ManifestEntry {
            video_id: row[0].clone(),
            patient_id: row[1].clone(),
            hand,
            gold_rating,
            fps,
            trajectory: base.join(&row[5]),
            flow: resolve(&row[6]),
            trajectories: resolve(&row[7]),
        });
    }
    if entries.is_empty() {
        return Err(schema(path, 1, "no data rows"));
    }
    Ok(DatasetManifest { entries })
}

/// Writes entries as-is; callers keep paths relative to the manifest so the
/// directory stays relocatable.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), IoError> {
    let mut out = String::from("video_id,patient_id,hand,gold_rating,fps,trajectory,flow,trajectories\n");
    for e in entries {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.video_id,
            e.patient_id,
            e.hand.as_str(),
            e.gold_rating.value(),
            e.fps,
            e.trajectory.display(),
            opt(&e.flow),
            opt(&e.trajectories),
        ));
    }
    write_file(path, &out)
}

// --- feature CSV ---

fn feature_header() -> Vec<&'static str> {
    let mut h = vec!["video_id", "patient_id", "hand", "gold_rating"];
    h.extend(FEATURE_NAMES);
    h
}

pub fn read_feature_rows(path: &Path) -> Result<Vec<FeatureRow>, IoError> {
    let header = feature_header();
    let rows = read_csv_rows(path, &header)?;
    if rows.is_empty() {
        return Err(schema(path, 1, "no data rows"));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        expect_fields(path, *line, row, header.len())?;
        let hand = Hand::parse(&row[2])
            .ok_or_else(|| schema(path, *line, format!("hand `{}` is not left or right", row[2])))?;
        let rating = parse_f64(path, *line, "gold_rating", &row[3])?;
        let gold = BarsRating::new(rating)
            .map_err(|_| schema(path, *line, format!("gold_rating {rating} is not a half point in [0, 4]")))?;
        let mut values = [0.0; 14];
        for (slot, (name, field)) in values
            .iter_mut()
            .zip(FEATURE_NAMES.iter().zip(row[4..].iter()))
        {
            *slot = parse_f64(path, *line, name, field)?;
        }
        let features = FeatureVector::from_array(values)
            .map_err(|e| schema(path, *line, e.to_string()))?;
        out.push(FeatureRow {
            video_id: row[0].clone(),
            patient_id: row[1].clone(),
            hand,
            gold,
            features,
        });
    }
    Ok(out)
}

pub fn write_feature_rows(path: &Path, rows: &[FeatureRow]) -> Result<(), IoError> {
    let mut out = feature_header().join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            r.video_id,
            r.patient_id,
            r.hand.as_str(),
            r.gold.value()
        ));
        for v in r.features.to_array() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

// --- model JSON ---

pub fn read_model(path: &Path) -> Result<RatingModel, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let model: RatingModel = serde_json::from_str(&text)
        .map_err(|e| schema(path, e.line() as u64, e.to_string()))?;
    model.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &RatingModel) -> Result<(), IoError> {
    write_json(path, model)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

// --- rater matrix CSV: video_id,rater_id,rating ---

pub const RATER_HEADER: [&str; 3] = ["video_id", "rater_id", "rating"];

/// Groups specialist ratings by video, preserving first-appearance order of
/// videos and row order of ratings within one.
pub fn read_raters(path: &Path) -> Result<RaterMatrix, IoError> {
    let rows = read_csv_rows(path, &RATER_HEADER)?;
    if rows.is_empty() {
        return Err(schema(path, 1, "no data rows"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, Vec<BarsRating>> =
        std::collections::HashMap::new();
    for (line, row) in &rows {
        expect_fields(path, *line, row, 3)?;
        if row[0].is_empty() {
            return Err(schema(path, *line, "video_id must be non-empty"));
        }
        let value = parse_f64(path, *line, "rating", &row[2])?;
        let rating = BarsRating::new(value)
            .map_err(|_| schema(path, *line, format!("rating {value} is not a half point in [0, 4]")))?;
        if !grouped.contains_key(&row[0]) {
            order.push(row[0].clone());
        }
        grouped.entry(row[0].clone()).or_default().push(rating);
    }
    Ok(RaterMatrix {
        videos: order
            .into_iter()
            .map(|video_id| {
                let ratings = grouped.remove(&video_id).expect("grouped above");
                RaterVideo { video_id, ratings }
            })
            .collect(),
    })
}

// --- predictions CSV ---

pub const PREDICTION_HEADER: [&str; 3] = ["video_id", "predicted_raw", "predicted_rounded"];

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub video_id: String,
    pub predicted_raw: f64,
    pub predicted_rounded: BarsRating,
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), IoError> {
    let mut out = String::from("video_id,predicted_raw,predicted_rounded\n");
    for p in predictions {
        out.push_str(&format!(
            "{},{},{}\n",
            p.video_id,
            p.predicted_raw,
            p.predicted_rounded.value()
        ));
    }
    write_file(path, &out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, IoError> {
    let rows = read_csv_rows(path, &PREDICTION_HEADER)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        expect_fields(path, *line, row, 3)?;
        let rounded = parse_f64(path, *line, "predicted_rounded", &row[2])?;
        out.push(Prediction {
            video_id: row[0].clone(),
            predicted_raw: parse_f64(path, *line, "predicted_raw", &row[1])?,
            predicted_rounded: BarsRating::new(rounded)
                .map_err(|_| schema(path, *line, format!("predicted_rounded {rounded} is not a half point")))?,
        });
    }
    Ok(out)
}

// --- diagnostic dumps ---

/// Per-gap stabilization transform in dump form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformDump {
    pub frame: usize,
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
    pub rms: f64,
}

pub fn transform_dumps(gaps: &[EstimatedTransform]) -> Vec<TransformDump> {
    gaps.iter()
        .enumerate()
        .map(|(frame, g)| TransformDump {
            frame,
            scale: g.transform.scale,
            rotation: g.transform.rotation,
            tx: g.transform.translation[0],
            ty: g.transform.translation[1],
            rms: g.rms,
        })
        .collect()
}

/// Segmentation outcome in dump form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationDump {
    pub designation: Designation,
    pub cycles: Vec<Cycle>,
    pub discarded: Vec<Span>,
}

impl From<&CycleSet> for SegmentationDump {
    fn from(set: &CycleSet) -> Self {
        SegmentationDump {
            designation: set.designation,
            cycles: set.cycles.clone(),
            discarded: set.discarded_spans.clone(),
        }
    }
}
