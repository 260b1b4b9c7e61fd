//! Motion analysis of finger-to-nose exam recordings.
//!
//! Turns per-frame body-keypoint trajectories (wrist, bottom of the head,
//! background points) into a severity prediction on the Brief Ataxia Rating
//! Scale (BARS). The processing stages are:
//!
//! 1. **stabilize** – undo camera pan/zoom with per-frame similarity
//!    transforms estimated from tracked background points.
//! 2. **regularize** – temporally smooth wrist estimates with optical-flow
//!    propagation and constrain them to the fastest-moving region.
//! 3. **signal** – build the wrist-relative-to-head position signal.
//! 4. **segment** – split the signal into finger-to-nose cycles via
//!    hysteresis thresholding.
//! 5. **features** – compute the 14 motion features (cycle durations,
//!    direction changes, duration variation, approximate entropy).
//! 6. **model** – LASSO regression onto half-point BARS ratings.
//! 7. **eval** – leave-one-patient-out evaluation with the clinical
//!    agreement statistics (MAE, Pearson, ICC, rater-range coverage).
//!
//! The [`synth`] module generates severity-parameterized synthetic exams in
//! the same file formats the real pipeline reads, and [`pipeline`] wires
//! everything behind the CLI commands.

pub mod config;
pub mod eval;
pub mod features;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod regularize;
pub mod segment;
pub mod signal;
pub mod stabilize;
pub mod synth;

pub use features::FeatureVector;
pub use model::RatingModel;
pub use signal::{BarsRating, Hand, KeypointTrack, RelativeSignal, VideoRecord};
