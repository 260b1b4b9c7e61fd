//! Trajectory and signal data types plus the wrist-relative-to-head signal.
//!
//! Everything downstream (segmentation, features, the rating model) consumes
//! the [`RelativeSignal`] built here: wrist position minus head position per
//! frame, with low-confidence samples interpolated and flagged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Body joint a keypoint track belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointLabel {
    Wrist,
    /// Bottom of the head / top of the neck.
    HeadBottom,
    /// Tracked background point, identified by index.
    Background(u32),
}

impl JointLabel {
    pub fn as_str(&self) -> String {
        match self {
            JointLabel::Wrist => "wrist".to_string(),
            JointLabel::HeadBottom => "head".to_string(),
            JointLabel::Background(k) => format!("bg{k}"),
        }
    }

    pub fn parse(s: &str) -> Option<JointLabel> {
        match s {
            "wrist" => Some(JointLabel::Wrist),
            "head" => Some(JointLabel::HeadBottom),
            _ => s.strip_prefix("bg")?.parse().ok().map(JointLabel::Background),
        }
    }
}

/// Which hand performed the exam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Hand> {
        match s {
            "left" => Some(Hand::Left),
            "right" => Some(Hand::Right),
            _ => None,
        }
    }
}

/// A BARS severity rating: multiples of 0.5 in `[0, 4]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BarsRating(f64);

impl BarsRating {
    /// All nine valid ratings, ascending.
    pub const VALID: [f64; 9] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];

    pub fn new(value: f64) -> Result<BarsRating, SignalError> {
        let doubled = value * 2.0;
        if value.is_finite() && (0.0..=4.0).contains(&value) && doubled == doubled.round() {
            Ok(BarsRating(value))
        } else {
            Err(SignalError::InvalidRating(value))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// True when the rating is a whole point (0, 1, 2, 3, 4).
    pub fn is_full_point(&self) -> bool {
        self.0 == self.0.round()
    }
}

impl TryFrom<f64> for BarsRating {
    type Error = SignalError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        BarsRating::new(v)
    }
}

impl From<BarsRating> for f64 {
    fn from(r: BarsRating) -> f64 {
        r.0
    }
}

/// One frame of a keypoint track: position in pixels plus detector confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePoint {
    pub x: f64,
    pub y: f64,
    /// Detector confidence in `[0, 1]`.
    pub confidence: f64,
}

/// Per-frame 2-D positions with confidences for one joint.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTrack {
    pub joint: JointLabel,
    pub frames: Vec<FramePoint>,
    /// Frames per second, > 0.
    pub fps: f64,
}

impl KeypointTrack {
    pub fn new(joint: JointLabel, frames: Vec<FramePoint>, fps: f64) -> Result<Self, SignalError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(SignalError::InvalidFps(fps));
        }
        if frames.len() < 2 {
            return Err(SignalError::TooFewFrames(frames.len()));
        }
        for (i, f) in frames.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.confidence) || !f.confidence.is_finite() {
                return Err(SignalError::InvalidConfidence {
                    frame: i,
                    confidence: f.confidence,
                });
            }
        }
        Ok(KeypointTrack { joint, frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Wrist-minus-head position time series, the central motion signal.
///
/// `valid[t]` is false where a sample failed the confidence gate and was
/// filled in by linear interpolation. Every stored value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeSignal {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fps: f64,
    pub valid: Vec<bool>,
}

impl RelativeSignal {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Range of `x` over valid samples: `(min, max)`.
    pub fn x_range_valid(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for (&v, &ok) in self.x.iter().zip(&self.valid) {
            if ok {
                range = Some(match range {
                    None => (v, v),
                    Some((lo, hi)) => (lo.min(v), hi.max(v)),
                });
            }
        }
        range
    }
}

/// One exam video: identity, gold-standard rating, and the two tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub patient_id: String,
    pub hand: Hand,
    pub gold_rating: BarsRating,
    pub wrist: KeypointTrack,
    pub head: KeypointTrack,
}

impl VideoRecord {
    pub fn new(
        video_id: impl Into<String>,
        patient_id: impl Into<String>,
        hand: Hand,
        gold_rating: BarsRating,
        wrist: KeypointTrack,
        head: KeypointTrack,
    ) -> Result<Self, SignalError> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(SignalError::EmptyPatientId);
        }
        Ok(VideoRecord {
            video_id: video_id.into(),
            patient_id,
            hand,
            gold_rating,
            wrist,
            head,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("LengthMismatch: wrist has {wrist} frames, head has {head}")]
    LengthMismatch { wrist: usize, head: usize },
    #[error("FpsMismatch: wrist at {wrist} fps, head at {head} fps")]
    FpsMismatch { wrist: f64, head: f64 },
    #[error("AllInvalid: no sample clears the confidence floor {floor}")]
    AllInvalid { floor: f64 },
    #[error("DegenerateRange: x-range over valid samples is zero")]
    DegenerateRange,
    #[error("TooFewValid: {0} valid samples, need at least 2")]
    TooFewValid(usize),
    #[error("InvalidFps: fps must be finite and > 0, got {0}")]
    InvalidFps(f64),
    #[error("TooFewFrames: got {0}, need at least 2")]
    TooFewFrames(usize),
    #[error("InvalidConfidence: frame {frame} has confidence {confidence}, must be in [0,1]")]
    InvalidConfidence { frame: usize, confidence: f64 },
    #[error("InvalidRating: {0} is not a half-point BARS rating in [0,4]")]
    InvalidRating(f64),
    #[error("EmptyPatientId: patient_id must be non-empty")]
    EmptyPatientId,
}

/// Builds the wrist-minus-head signal.
///
/// Sample `t` is valid iff both confidences are at least `conf_floor`.
/// Invalid interior samples are linearly interpolated from the nearest valid
/// neighbors and stay flagged in the validity mask; leading and trailing
/// invalid runs are trimmed rather than extrapolated.
pub fn relative_signal(
    wrist: &KeypointTrack,
    head: &KeypointTrack,
    conf_floor: f64,
) -> Result<RelativeSignal, SignalError> {
    if wrist.len() != head.len() {
        return Err(SignalError::LengthMismatch {
            wrist: wrist.len(),
            head: head.len(),
        });
    }
    if wrist.fps != head.fps {
        return Err(SignalError::FpsMismatch {
            wrist: wrist.fps,
            head: head.fps,
        });
    }

    let n = wrist.len();
    let valid_at = |t: usize| {
        wrist.frames[t].confidence >= conf_floor && head.frames[t].confidence >= conf_floor
    };
    let first = (0..n).find(|&t| valid_at(t));
    let last = (0..n).rev().find(|&t| valid_at(t));
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SignalError::AllInvalid { floor: conf_floor }),
    };

    let len = last - first + 1;
    let mut x = vec![0.0; len];
    let mut y = vec![0.0; len];
    let mut valid = vec![false; len];
    for t in first..=last {
        let i = t - first;
        valid[i] = valid_at(t);
        if valid[i] {
            x[i] = wrist.frames[t].x - head.frames[t].x;
            y[i] = wrist.frames[t].y - head.frames[t].y;
        }
    }
    interpolate_gaps(&mut x, &valid);
    interpolate_gaps(&mut y, &valid);

    Ok(RelativeSignal {
        x,
        y,
        fps: wrist.fps,
        valid,
    })
}

/// Fills invalid interior runs by straight lines between bracketing valid
/// samples. The first and last samples are valid by construction.
fn interpolate_gaps(values: &mut [f64], valid: &[bool]) {
    let mut prev = 0usize;
    let mut t = 1usize;
    while t < values.len() {
        if valid[t] {
            if t > prev + 1 {
                let a = values[prev];
                let b = values[t];
                let span = (t - prev) as f64;
                for u in prev + 1..t {
                    let frac = (u - prev) as f64 / span;
                    values[u] = a + (b - a) * frac;
                }
            }
            prev = t;
        }
        t += 1;
    }
}

/// Rescales both axes by the reciprocal of the x-range over valid samples.
///
/// Downstream thresholds are fractions of the motion range, so this makes
/// videos of different zoom levels comparable. Idempotent: a normalized
/// signal has x-range exactly 1.
pub fn normalize_units(signal: &RelativeSignal) -> Result<RelativeSignal, SignalError> {
    let n_valid = signal.valid.iter().filter(|&&v| v).count();
    if n_valid < 2 {
        return Err(SignalError::TooFewValid(n_valid));
    }
    let (lo, hi) = signal.x_range_valid().expect("checked >= 2 valid samples");
    let range = hi - lo;
    if range == 0.0 {
        return Err(SignalError::DegenerateRange);
    }
    let s = 1.0 / range;
    Ok(RelativeSignal {
        x: signal.x.iter().map(|v| v * s).collect(),
        y: signal.y.iter().map(|v| v * s).collect(),
        fps: signal.fps,
        valid: signal.valid.clone(),
    })
}
