//! Temporal regularization of the wrist track.
//!
//! Two corrections applied after (optional) stabilization: a flow-propagated
//! confidence-weighted smoothing of the per-frame estimates, and a constraint
//! snapping estimates into the fastest-moving region of the video, defined by
//! the dense trajectories with the most total motion.

use crate::signal::KeypointTrack;
use crate::stabilize::SimilarityTransform;
use thiserror::Error;

/// Dense-flow displacement for one frame gap, evaluated at the wrist estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub dx: f64,
    pub dy: f64,
}

/// A dense point trajectory spanning consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrajectory {
    pub id: u64,
    pub start_frame: usize,
    pub points: Vec<[f64; 2]>,
    total_motion: f64,
}

impl MotionTrajectory {
    pub fn new(id: u64, start_frame: usize, points: Vec<[f64; 2]>) -> Result<Self, RegularizeError> {
        if points.is_empty() {
            return Err(RegularizeError::EmptyTrajectory(id));
        }
        let total_motion = path_length(&points);
        Ok(MotionTrajectory {
            id,
            start_frame,
            points,
            total_motion,
        })
    }

    /// Sum of step lengths along the trajectory.
    pub fn total_motion(&self) -> f64 {
        self.total_motion
    }

    /// Position at global frame `frame`, if the trajectory covers it.
    pub fn point_at(&self, frame: usize) -> Option<[f64; 2]> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.points.get(i))
            .copied()
    }
}

fn path_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizeError {
    #[error("InvalidWindow: window must be odd and >= 1, got {0}")]
    InvalidWindow(usize),
    #[error("WindowTooLarge: window {window} exceeds 2*frames-1 = {max}")]
    WindowTooLarge { window: usize, max: usize },
    #[error("LengthMismatch: {flows} flow samples for {gaps} frame gaps")]
    LengthMismatch { flows: usize, gaps: usize },
    #[error("NonFiniteFlow: flow sample {0} is not finite")]
    NonFiniteFlow(usize),
    #[error("EmptyTrajectory: trajectory {0} has no points")]
    EmptyTrajectory(u64),
    #[error("EmptyInput: no trajectories to select from")]
    EmptyInput,
    #[error("InvalidFraction: top_fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("FrameOutOfRange: trajectory touches frame {frame} but video has {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
}

/// Confidence-weighted temporal smoothing with flow propagation.
///
/// Each output frame is the weighted mean of the raw estimates in a
/// `window`-wide neighborhood, where a neighbor's estimate is first carried
/// to the current frame by summing the intervening flow displacements.
/// Weights are the neighbors' confidences; the output confidence is the mean
/// weight used. A neighborhood with zero total weight leaves the frame
/// untouched (confidence 0) rather than dividing by zero.
pub fn flow_smooth(
    estimates: &KeypointTrack,
    flows: &[FlowSample],
    window: usize,
) -> Result<KeypointTrack, RegularizeError> {
    if window == 0 || window % 2 == 0 {
        return Err(RegularizeError::InvalidWindow(window));
    }
    let n = estimates.len();
    if window > 2 * n - 1 {
        return Err(RegularizeError::WindowTooLarge {
            window,
            max: 2 * n - 1,
        });
    }
    if flows.len() + 1 != n {
        return Err(RegularizeError::LengthMismatch {
            flows: flows.len(),
            gaps: n - 1,
        });
    }
    for (i, f) in flows.iter().enumerate() {
        if !(f.dx.is_finite() && f.dy.is_finite()) {
            return Err(RegularizeError::NonFiniteFlow(i));
        }
    }
    if window == 1 {
        // No neighbors to average: exact identity, not a w*x/w round trip.
        return Ok(estimates.clone());
    }

    // cum[t] = displacement accumulated from frame 0 to frame t, so carrying
    // an estimate from frame u to frame t adds cum[t] - cum[u].
    let mut cum = vec![[0.0f64; 2]; n];
    for t in 1..n {
        cum[t] = [
            cum[t - 1][0] + flows[t - 1].dx,
            cum[t - 1][1] + flows[t - 1].dy,
        ];
    }

    let half = (window - 1) / 2;
    let mut out = estimates.clone();
    for t in 0..n {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(n - 1);
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        let count = (hi - lo + 1) as f64;
        for u in lo..=hi {
            let w = estimates.frames[u].confidence;
            sx += w * (estimates.frames[u].x + cum[t][0] - cum[u][0]);
            sy += w * (estimates.frames[u].y + cum[t][1] - cum[u][1]);
            sw += w;
        }
        if sw > 0.0 {
            out.frames[t].x = sx / sw;
            out.frames[t].y = sy / sw;
        }
        out.frames[t].confidence = sw / count;
    }
    Ok(out)
}

/// Keeps the `ceil(top_fraction × n)` trajectories with the most total
/// motion. Ties go to the earlier start frame, then to input order.
pub fn fastest_region(
    trajectories: &[MotionTrajectory],
    top_fraction: f64,
) -> Result<Vec<MotionTrajectory>, RegularizeError> {
    if trajectories.is_empty() {
        return Err(RegularizeError::EmptyInput);
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(RegularizeError::InvalidFraction(top_fraction));
    }
    let keep = ((top_fraction * trajectories.len() as f64).ceil() as usize)
        .clamp(1, trajectories.len());
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    order.sort_by(|&a, &b| {
        trajectories[b]
            .total_motion
            .total_cmp(&trajectories[a].total_motion)
            .then(trajectories[a].start_frame.cmp(&trajectories[b].start_frame))
            .then(a.cmp(&b))
    });
    Ok(order[..keep].iter().map(|&i| trajectories[i].clone()).collect())
}

/// Snaps wayward estimates into the region.
///
/// A frame's estimate moves to the nearest region point active at that frame
/// only when it is farther than `max_snap` from all of them; frames with no
/// active region point pass through.
pub fn constrain_to_region(
    track: &KeypointTrack,
    region: &[MotionTrajectory],
    max_snap: f64,
) -> KeypointTrack {
    let mut out = track.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        let mut nearest: Option<([f64; 2], f64)> = None;
        for traj in region {
            if let Some(p) = traj.point_at(t) {
                let d = (p[0] - frame.x).hypot(p[1] - frame.y);
                if nearest.map_or(true, |(_, best)| d < best) {
                    nearest = Some((p, d));
                }
            }
        }
        if let Some((p, d)) = nearest {
            if d > max_snap {
                frame.x = p[0];
                frame.y = p[1];
            }
        }
    }
    out
}

/// Re-expresses flow samples in stabilized coordinates.
///
/// A flow sample says "the content at `p_t` moves to `p_t + flow_t`" in raw
/// image coordinates; mapping both endpoints through the frame-to-frame-0
/// chain gives the displacement the stabilized track actually sees.
/// `raw_track` must be the track the flows were sampled at, pre-stabilization.
pub fn stabilize_flows(
    flows: &[FlowSample],
    raw_track: &KeypointTrack,
    chain: &[SimilarityTransform],
) -> Result<Vec<FlowSample>, RegularizeError> {
    if flows.len() + 1 != raw_track.len() {
        return Err(RegularizeError::LengthMismatch {
            flows: flows.len(),
            gaps: raw_track.len().saturating_sub(1),
        });
    }
    if chain.len() != raw_track.len() {
        return Err(RegularizeError::FrameOutOfRange {
            frame: raw_track.len() - 1,
            frames: chain.len(),
        });
    }
    Ok(flows
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let p = [raw_track.frames[t].x, raw_track.frames[t].y];
            let a = chain[t].apply(p);
            let b = chain[t + 1].apply([p[0] + f.dx, p[1] + f.dy]);
            FlowSample {
                dx: b[0] - a[0],
                dy: b[1] - a[1],
            }
        })
        .collect())
}

/// Maps every trajectory point through the chain entry for its frame.
pub fn stabilize_trajectories(
    trajectories: &[MotionTrajectory],
    chain: &[SimilarityTransform],
) -> Result<Vec<MotionTrajectory>, RegularizeError> {
    trajectories
        .iter()
        .map(|traj| {
            let points = traj
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let frame = traj.start_frame + i;
                    chain
                        .get(frame)
                        .map(|t| t.apply(*p))
                        .ok_or(RegularizeError::FrameOutOfRange {
                            frame,
                            frames: chain.len(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            MotionTrajectory::new(traj.id, traj.start_frame, points)
        })
        .collect()
}
