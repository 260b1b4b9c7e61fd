//! Camera-motion removal via per-frame-gap similarity transforms.
//!
//! Background points tracked across consecutive frames give point
//! correspondences; a closed-form least-squares fit recovers the similarity
//! transform (scale, rotation, translation) between the frames, and composing
//! the inverses maps every frame back into frame 0's coordinate system.
//! Stabilization that cannot be trusted (too few points, degenerate geometry)
//! degrades to a pass-through rather than an error.

use crate::signal::KeypointTrack;
use serde::Serialize;
use thiserror::Error;

/// Minimum usable correspondences per frame gap before giving up.
pub const DEFAULT_MIN_POINTS: usize = 2;

/// A 2-D similarity transform `p ↦ scale · R(rotation) · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Radians, counter-clockwise.
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn new(scale: f64, rotation: f64, translation: [f64; 2]) -> Result<Self, StabilizeError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(StabilizeError::InvalidScale(scale));
        }
        Ok(SimilarityTransform {
            scale,
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (sin, cos) = self.rotation.sin_cos();
        [
            self.scale * (cos * p[0] - sin * p[1]) + self.translation[0],
            self.scale * (sin * p[0] + cos * p[1]) + self.translation[1],
        ]
    }

    /// Transform such that `inverse().apply(apply(p)) == p`.
    pub fn inverse(&self) -> Self {
        let inv = SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: -self.rotation,
            translation: [0.0, 0.0],
        };
        let t = inv.apply(self.translation);
        SimilarityTransform {
            translation: [-t[0], -t[1]],
            ..inv
        }
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        SimilarityTransform {
            scale: self.scale * inner.scale,
            rotation: self.rotation + inner.rotation,
            translation: self.apply(inner.translation),
        }
    }
}

/// Matched points between two consecutive frames: `(source, destination)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCorrespondences {
    pub pairs: Vec<([f64; 2], [f64; 2])>,
}

impl PointCorrespondences {
    pub fn new(pairs: Vec<([f64; 2], [f64; 2])>) -> Result<Self, StabilizeError> {
        if pairs.len() < 2 {
            return Err(StabilizeError::TooFewPoints(pairs.len()));
        }
        let first = pairs[0].0;
        if pairs.iter().all(|(s, _)| *s == first) {
            return Err(StabilizeError::DegenerateGeometry);
        }
        Ok(PointCorrespondences { pairs })
    }
}

/// A fitted transform plus its root-mean-square destination residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatedTransform {
    pub transform: SimilarityTransform,
    pub rms: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilizeError {
    #[error("TooFewPoints: {0} correspondence pairs, need at least 2")]
    TooFewPoints(usize),
    #[error("DegenerateGeometry: correspondence points are coincident")]
    DegenerateGeometry,
    #[error("LengthMismatch: {transforms} transforms for {gaps} frame gaps")]
    LengthMismatch { transforms: usize, gaps: usize },
    #[error("InvalidScale: scale must be finite and > 0, got {0}")]
    InvalidScale(f64),
}

/// Plain least-squares fit over the given pairs, no robustness.
fn fit(pairs: &[([f64; 2], [f64; 2])]) -> Result<SimilarityTransform, StabilizeError> {
    let n = pairs.len();
    if n < 2 {
        return Err(StabilizeError::TooFewPoints(n));
    }
    let nf = n as f64;
    let (mut ms, mut md) = ([0.0; 2], [0.0; 2]);
    for (s, d) in pairs {
        ms[0] += s[0];
        ms[1] += s[1];
        md[0] += d[0];
        md[1] += d[1];
    }
    for v in ms.iter_mut().chain(md.iter_mut()) {
        *v /= nf;
    }

    // With centered points, the optimal rotation angle satisfies
    // tan θ = Σ(s×d) / Σ(s·d) and the scale is ‖(Σs·d, Σs×d)‖ / Σ‖s‖².
    let (mut dot, mut cross, mut src_sq) = (0.0, 0.0, 0.0);
    for (s, d) in pairs {
        let sc = [s[0] - ms[0], s[1] - ms[1]];
        let dc = [d[0] - md[0], d[1] - md[1]];
        dot += sc[0] * dc[0] + sc[1] * dc[1];
        cross += sc[0] * dc[1] - sc[1] * dc[0];
        src_sq += sc[0] * sc[0] + sc[1] * sc[1];
    }
    if src_sq == 0.0 {
        return Err(StabilizeError::DegenerateGeometry);
    }
    let scale = dot.hypot(cross) / src_sq;
    if scale <= 0.0 {
        // Destination points all coincide; no positive-scale fit exists.
        return Err(StabilizeError::DegenerateGeometry);
    }
    let rotation = cross.atan2(dot);
    let mut out = SimilarityTransform {
        scale,
        rotation,
        translation: [0.0, 0.0],
    };
    let rotated = out.apply(ms);
    out.translation = [md[0] - rotated[0], md[1] - rotated[1]];
    Ok(out)
}

fn residuals(t: &SimilarityTransform, pairs: &[([f64; 2], [f64; 2])]) -> Vec<f64> {
    pairs
        .iter()
        .map(|(s, d)| {
            let m = t.apply(*s);
            (m[0] - d[0]).hypot(m[1] - d[1])
        })
        .collect()
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    }
}

/// Least-squares similarity fit with one outlier-trim pass.
///
/// After the initial fit, pairs whose residual exceeds 3× the median residual
/// are dropped and the fit is repeated. The trim is skipped when the median
/// is already ≤ 1e-9 (exact data) and abandoned when fewer than two pairs
/// survive or the refit degenerates, falling back to the initial fit.
pub fn estimate_similarity(
    corr: &PointCorrespondences,
) -> Result<EstimatedTransform, StabilizeError> {
    let initial = fit(&corr.pairs)?;
    let res = residuals(&initial, &corr.pairs);
    let med = median(&res);
    if med > 1e-9 {
        let kept: Vec<([f64; 2], [f64; 2])> = corr
            .pairs
            .iter()
            .zip(&res)
            .filter(|(_, &r)| r <= 3.0 * med)
            .map(|(p, _)| *p)
            .collect();
        if kept.len() >= 2 && kept.len() < corr.pairs.len() {
            if let Ok(refit) = fit(&kept) {
                return Ok(EstimatedTransform {
                    rms: rms(&residuals(&refit, &kept)),
                    transform: refit,
                });
            }
        }
    }
    Ok(EstimatedTransform {
        rms: rms(&res),
        transform: initial,
    })
}

/// Frame-to-frame-0 transforms from per-gap frame-to-frame transforms.
///
/// `per_frame[t]` must map frame `t` coordinates to frame `t+1` coordinates;
/// entry `t` of the result maps frame `t` coordinates to frame 0.
pub fn transform_chain(per_frame: &[SimilarityTransform]) -> Vec<SimilarityTransform> {
    let mut chain = Vec::with_capacity(per_frame.len() + 1);
    chain.push(SimilarityTransform::identity());
    for step in per_frame {
        let prev = *chain.last().expect("chain starts non-empty");
        chain.push(prev.compose(&step.inverse()));
    }
    chain
}

/// Maps every frame of a track into frame 0's coordinate system.
///
/// Expects one transform per frame gap. Confidences pass through unchanged.
pub fn stabilize_track(
    track: &KeypointTrack,
    per_frame: &[SimilarityTransform],
) -> Result<KeypointTrack, StabilizeError> {
    if per_frame.len() + 1 != track.len() {
        return Err(StabilizeError::LengthMismatch {
            transforms: per_frame.len(),
            gaps: track.len().saturating_sub(1),
        });
    }
    let chain = transform_chain(per_frame);
    Ok(apply_chain_to_track(track, &chain))
}

/// Applies `chain[t]` to frame `t`'s position; confidences unchanged.
pub fn apply_chain_to_track(track: &KeypointTrack, chain: &[SimilarityTransform]) -> KeypointTrack {
    let mut out = track.clone();
    for (frame, t) in out.frames.iter_mut().zip(chain) {
        let p = t.apply([frame.x, frame.y]);
        frame.x = p[0];
        frame.y = p[1];
    }
    out
}

/// Result of [`try_stabilize`]: the (possibly untouched) tracks plus, when
/// stabilization succeeded, the per-frame chain and per-gap fits.
#[derive(Debug, Clone)]
pub struct StabilizationOutcome {
    pub tracks: Vec<KeypointTrack>,
    /// Frame-to-frame-0 transforms (one per frame); `None` means pass-through.
    pub chain: Option<Vec<SimilarityTransform>>,
    /// Per-gap fitted transforms with residual RMS, for diagnostics.
    pub gaps: Option<Vec<EstimatedTransform>>,
}

impl StabilizationOutcome {
    pub fn stabilized(&self) -> bool {
        self.chain.is_some()
    }
}

/// Stabilizes all tracks against frame 0, or passes them through untouched.
///
/// `gap_pairs[t]` holds the background correspondences between frames `t` and
/// `t+1`. A gap with fewer than `min_points` pairs, a failed fit, or a pair
/// count not matching the track length aborts stabilization for the whole
/// video — by design this is a silent downgrade, not an error.
pub fn try_stabilize(
    tracks: &[KeypointTrack],
    gap_pairs: &[Vec<([f64; 2], [f64; 2])>],
    min_points: usize,
) -> StabilizationOutcome {
    let pass_through = || StabilizationOutcome {
        tracks: tracks.to_vec(),
        chain: None,
        gaps: None,
    };
    let n_frames = match tracks.first() {
        Some(t) => t.len(),
        None => return pass_through(),
    };
    if tracks.iter().any(|t| t.len() != n_frames) || gap_pairs.len() + 1 != n_frames {
        return pass_through();
    }

    let mut gaps = Vec::with_capacity(gap_pairs.len());
    for pairs in gap_pairs {
        if pairs.len() < min_points.max(2) {
            return pass_through();
        }
        let corr = match PointCorrespondences::new(pairs.clone()) {
            Ok(c) => c,
            Err(_) => return pass_through(),
        };
        match estimate_similarity(&corr) {
            Ok(est) => gaps.push(est),
            Err(_) => return pass_through(),
        }
    }

    let per_frame: Vec<SimilarityTransform> = gaps.iter().map(|g| g.transform).collect();
    let chain = transform_chain(&per_frame);
    StabilizationOutcome {
        tracks: tracks.iter().map(|t| apply_chain_to_track(t, &chain)).collect(),
        chain: Some(chain),
        gaps: Some(gaps),
    }
}

/// Per-gap correspondences from background tracks, keeping a point only when
/// its confidence clears `conf_floor` on both sides of the gap.
pub fn correspondences_from_background(
    bg_tracks: &[KeypointTrack],
    conf_floor: f64,
) -> Vec<Vec<([f64; 2], [f64; 2])>> {
    let n_frames = bg_tracks.iter().map(|t| t.len()).min().unwrap_or(0);
    if n_frames < 2 {
        return Vec::new();
    }
    (0..n_frames - 1)
        .map(|t| {
            bg_tracks
                .iter()
                .filter(|track| {
                    track.frames[t].confidence >= conf_floor
                        && track.frames[t + 1].confidence >= conf_floor
                })
                .map(|track| {
                    let (a, b) = (&track.frames[t], &track.frames[t + 1]);
                    ([a.x, a.y], [b.x, b.y])
                })
                .collect()
        })
        .collect()
}
