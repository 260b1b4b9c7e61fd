//! Cycle segmentation of the wrist signal.
//!
//! Endpoints (nose side, finger side) come from the extrema of the middle
//! half of the signal; hysteresis thresholding between them yields an
//! alternating event sequence; triples of events form complete cycles under
//! the designation (finger-nose-finger vs. nose-finger-nose) that explains
//! more of them.

use crate::signal::RelativeSignal;
use serde::Serialize;
use thiserror::Error;

/// Fraction of the endpoint range for the upward (toward-finger) threshold.
pub const DEFAULT_FWD_FRAC: f64 = 0.6;
/// Fraction of the endpoint range for the downward (toward-nose) threshold.
pub const DEFAULT_BWD_FRAC: f64 = 0.4;

/// Signal endpoints: `near` is the patient's head side, `far` the doctor's
/// finger side. Always `far > near`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Endpoints {
    pub near: f64,
    pub far: f64,
}

impl Endpoints {
    pub fn new(near: f64, far: f64) -> Result<Self, SegmentError> {
        if !(far > near) {
            return Err(SegmentError::DegenerateRange { near, far });
        }
        Ok(Endpoints { near, far })
    }

    pub fn range(&self) -> f64 {
        self.far - self.near
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    /// Upward crossing: wrist heading toward the finger side.
    Forward,
    /// Downward crossing: wrist heading toward the nose side.
    Backward,
}

impl EventKind {
    fn other(self) -> EventKind {
        match self {
            EventKind::Forward => EventKind::Backward,
            EventKind::Backward => EventKind::Forward,
        }
    }
}

/// A threshold crossing at the first frame strictly past the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CrossingEvent {
    pub kind: EventKind,
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Designation {
    FingerNoseFinger,
    NoseFingerNose,
}

/// One complete cycle; `start < mid < end` are event frames, and the cycle
/// occupies the half-open frame span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Cycle {
    pub start: usize,
    pub mid: usize,
    pub end: usize,
}

/// A half-open frame interval `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub from: usize,
    pub to: usize,
}

/// Segmentation result: cycles plus the leftover spans, which together
/// tile `[0, n_frames)` exactly once.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleSet {
    pub designation: Designation,
    pub cycles: Vec<Cycle>,
    pub discarded_spans: Vec<Span>,
    pub n_frames: usize,
}

impl CycleSet {
    /// Validates cycle ordering and fills `discarded_spans` with whatever the
    /// cycles leave uncovered.
    pub fn new(
        designation: Designation,
        cycles: Vec<Cycle>,
        n_frames: usize,
    ) -> Result<Self, SegmentError> {
        let mut discarded = Vec::new();
        let mut cursor = 0usize;
        for (i, c) in cycles.iter().enumerate() {
            if !(c.start < c.mid && c.mid < c.end) {
                return Err(SegmentError::MalformedCycle {
                    index: i,
                    start: c.start,
                    mid: c.mid,
                    end: c.end,
                });
            }
            if c.start < cursor {
                return Err(SegmentError::OverlappingCycles { index: i });
            }
            if c.end > n_frames {
                return Err(SegmentError::FrameOutOfRange {
                    frame: c.end,
                    frames: n_frames,
                });
            }
            if c.start > cursor {
                discarded.push(Span {
                    from: cursor,
                    to: c.start,
                });
            }
            cursor = c.end;
        }
        if cursor < n_frames {
            discarded.push(Span {
                from: cursor,
                to: n_frames,
            });
        }
        Ok(CycleSet {
            designation,
            cycles,
            discarded_spans: discarded,
            n_frames,
        })
    }

    /// Values of `series` over the cycle spans, concatenated in time order.
    pub fn concat_cycle_values(&self, series: &[f64]) -> Vec<f64> {
        self.cycles
            .iter()
            .flat_map(|c| series[c.start..c.end].iter().copied())
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("SignalTooShort: {0} samples, need at least 8")]
    SignalTooShort(usize),
    #[error("DegenerateRange: near {near} is not below far {far}")]
    DegenerateRange { near: f64, far: f64 },
    #[error("InvalidFractions: need 0 < bwd {bwd} < fwd {fwd} < 1")]
    InvalidFractions { fwd: f64, bwd: f64 },
    #[error("NoEvents: signal never crosses either threshold")]
    NoEvents,
    #[error("NotAlternating: events {0} and {1} have the same kind")]
    NotAlternating(usize, usize),
    #[error("NoCycles: neither designation yields a complete cycle")]
    NoCycles,
    #[error("MalformedCycle: cycle {index} has start {start}, mid {mid}, end {end}")]
    MalformedCycle {
        index: usize,
        start: usize,
        mid: usize,
        end: usize,
    },
    #[error("OverlappingCycles: cycle {index} starts before the previous one ends")]
    OverlappingCycles { index: usize },
    #[error("FrameOutOfRange: frame {frame} outside signal of {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
}

/// Endpoints from the extrema of the middle half of the signal
/// (index range `[N/4, 3N/4)`), which dodges ramp-in and ramp-out artifacts.
pub fn estimate_endpoints(signal: &RelativeSignal) -> Result<Endpoints, SegmentError> {
    let n = signal.len();
    if n < 8 {
        return Err(SegmentError::SignalTooShort(n));
    }
    let slice = &signal.x[n / 4..3 * n / 4];
    let near = slice.iter().copied().fold(f64::INFINITY, f64::min);
    let far = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Endpoints::new(near, far)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum HysteresisState {
    Low,
    High,
}

/// Hysteresis thresholding of the signal between the endpoints.
///
/// The upward threshold sits at `fwd_frac` of the endpoint range, the
/// downward one at `bwd_frac`; the gap between them absorbs chatter. The
/// initial state is taken from the first sample's side of the midpoint, and
/// each event is stamped with the first frame strictly past its threshold.
pub fn hysteresis_events(
    signal: &RelativeSignal,
    endpoints: &Endpoints,
    fwd_frac: f64,
    bwd_frac: f64,
) -> Result<Vec<CrossingEvent>, SegmentError> {
    if !(0.0 < bwd_frac && bwd_frac < fwd_frac && fwd_frac < 1.0) {
        return Err(SegmentError::InvalidFractions {
            fwd: fwd_frac,
            bwd: bwd_frac,
        });
    }
    let up = endpoints.near + fwd_frac * endpoints.range();
    let down = endpoints.near + bwd_frac * endpoints.range();
    let mid = endpoints.near + 0.5 * endpoints.range();

    let mut state = if signal.x[0] <= mid {
        HysteresisState::Low
    } else {
        HysteresisState::High
    };
    let mut events = Vec::new();
    for (frame, &x) in signal.x.iter().enumerate() {
        match state {
            HysteresisState::Low if x > up => {
                events.push(CrossingEvent {
                    kind: EventKind::Forward,
                    frame,
                });
                state = HysteresisState::High;
            }
            HysteresisState::High if x < down => {
                events.push(CrossingEvent {
                    kind: EventKind::Backward,
                    frame,
                });
                state = HysteresisState::Low;
            }
            _ => {}
        }
    }
    if events.is_empty() {
        return Err(SegmentError::NoEvents);
    }
    Ok(events)
}

fn count_anchored_cycles(events: &[CrossingEvent], anchor: EventKind) -> usize {
    match events.iter().position(|e| e.kind == anchor) {
        Some(i0) if events.len() > i0 + 2 => (events.len() - 1 - i0) / 2,
        _ => 0,
    }
}

fn anchored_cycles(events: &[CrossingEvent], anchor: EventKind) -> Vec<Cycle> {
    let i0 = match events.iter().position(|e| e.kind == anchor) {
        Some(i) => i,
        None => return Vec::new(),
    };
    let count = count_anchored_cycles(events, anchor);
    (0..count)
        .map(|k| Cycle {
            start: events[i0 + 2 * k].frame,
            mid: events[i0 + 2 * k + 1].frame,
            end: events[i0 + 2 * k + 2].frame,
        })
        .collect()
}

/// Groups alternating events into complete cycles.
///
/// Finger-nose-finger cycles are BACKWARD→FORWARD→BACKWARD triples,
/// nose-finger-nose cycles FORWARD→BACKWARD→FORWARD; consecutive cycles
/// share their boundary event. The designation explaining more cycles wins,
/// ties going to finger-nose-finger.
pub fn build_cycles(events: &[CrossingEvent], n_frames: usize) -> Result<CycleSet, SegmentError> {
    for (i, pair) in events.windows(2).enumerate() {
        if pair[0].kind != pair[1].kind.other() || pair[0].frame >= pair[1].frame {
            return Err(SegmentError::NotAlternating(i, i + 1));
        }
    }
    let fnf = count_anchored_cycles(events, EventKind::Backward);
    let nfn = count_anchored_cycles(events, EventKind::Forward);
    if fnf == 0 && nfn == 0 {
        return Err(SegmentError::NoCycles);
    }
    let (designation, anchor) = if fnf >= nfn {
        (Designation::FingerNoseFinger, EventKind::Backward)
    } else {
        (Designation::NoseFingerNose, EventKind::Forward)
    };
    CycleSet::new(designation, anchored_cycles(events, anchor), n_frames)
}
