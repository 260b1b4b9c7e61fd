//! Synthetic finger-to-nose exams with a dialed-in severity.
//!
//! The generator exists so the full pipeline can be exercised end to end
//! without clinical footage: severity drives cycle duration, timing jitter,
//! and superimposed ripples through fixed coefficients chosen to make the
//! severity recoverable, not to model pathology. Everything is a pure
//! function of the seed; sub-streams of the counter-based RNG keep the
//! draws order-independent.

use crate::regularize::{FlowSample, MotionTrajectory};
use crate::signal::{BarsRating, FramePoint, Hand, JointLabel, KeypointTrack, VideoRecord};
use crate::stabilize::SimilarityTransform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Head center in scene coordinates (pixels).
const HEAD_POS: [f64; 2] = [320.0, 180.0];
/// Wrist x-offset from the head at the nose touch.
const NEAR_OFFSET: f64 = 30.0;
/// Nose-to-extended-finger excursion along x.
const RANGE: f64 = 200.0;
/// Constant wrist y-offset from the head.
const Y_OFFSET: f64 = 40.0;

/// Sinusoidal camera wobble, expressed as per-component amplitudes. The
/// drift is phase-anchored so the first frame is always the identity view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMotion {
    /// Translation amplitude in pixels per axis.
    pub translation: f64,
    /// Rotation amplitude in radians about the image center.
    pub rotation: f64,
    /// Fractional zoom amplitude about the image center.
    pub zoom: f64,
    /// Wobble periods over the whole exam; fractions are fine.
    pub periods: f64,
}

impl Default for CameraMotion {
    fn default() -> Self {
        CameraMotion {
            translation: 25.0,
            rotation: 0.10,
            zoom: 0.08,
            periods: 10.0,
        }
    }
}

/// Everything that determines one synthetic exam.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub video_id: String,
    pub patient_id: String,
    pub hand: Hand,
    pub severity: BarsRating,
    /// Out-and-back repetitions; at least 2.
    pub n_cycles: usize,
    pub fps: f64,
    /// Cycle duration at severity 0, seconds.
    pub base_cycle_s: f64,
    pub noise_seed: u64,
    pub camera_motion: Option<CameraMotion>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("TooFewCycles: need at least 2, got {0}")]
    TooFewCycles(usize),
    #[error("InvalidFps: fps must be finite and > 0, got {0}")]
    InvalidFps(f64),
    #[error("InvalidCycleDuration: base_cycle_s must be finite and > 0, got {0}")]
    InvalidCycleDuration(f64),
    #[error("TooFewPatients: need at least 2, got {0}")]
    TooFewPatients(usize),
    #[error("InvalidDistribution: need 9 non-negative weights with a positive sum")]
    InvalidDistribution,
    #[error("NoVideos: videos_per_patient must be >= 1")]
    NoVideos,
}

/// One generated exam plus the side channels the pipeline can consume.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExam {
    pub record: VideoRecord,
    /// Static scene points under the same camera, for stabilization.
    pub background: Vec<KeypointTrack>,
    /// Noiseless per-frame wrist displacement in observed coordinates.
    pub flows: Vec<FlowSample>,
    /// Point trajectories (fast ones ride the wrist, slow ones sit still).
    pub trajectories: Vec<MotionTrajectory>,
    /// The wrist track the camera-free run would have produced; ground
    /// truth for stabilization checks.
    pub wrist_no_camera: KeypointTrack,
}

/// RNG sub-stream ids; each concern draws from its own stream so adding a
/// draw in one place never shifts another.
mod stream {
    pub const DURATIONS: u64 = 0;
    pub const WRIST_NOISE: u64 = 1;
    pub const HEAD_NOISE: u64 = 2;
    pub const CAMERA: u64 = 3;
}

fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One rise or fall segment of the wrist waveform.
struct Segment {
    start_s: f64,
    duration_s: f64,
    rising: bool,
    /// Excursion the segment belongs to; the trailing half-rise has none.
    cycle: Option<usize>,
}

struct Waveform {
    segments: Vec<Segment>,
    /// Full out-and-back durations per excursion.
    cycle_s: Vec<f64>,
    total_s: f64,
    ripple_amplitude: f64,
    ripples_per_cycle: usize,
}

impl Waveform {
    fn build(params: &SynthParams) -> Waveform {
        let severity = params.severity.value();
        let mean = params.base_cycle_s * (1.0 + 0.5 * severity);
        let jitter = 0.1 * severity * mean;
        let mut durations = substream(params.noise_seed, stream::DURATIONS);
        let cycle_s: Vec<f64> = (0..params.n_cycles)
            .map(|_| {
                if jitter > 0.0 {
                    let d = Normal::new(mean, jitter)
                        .expect("finite jitter")
                        .sample(&mut durations);
                    d.clamp(0.3 * mean, 2.2 * mean)
                } else {
                    mean
                }
            })
            .collect();

        let mut segments = Vec::with_capacity(2 * params.n_cycles + 1);
        let mut t = 0.0;
        for (i, &d) in cycle_s.iter().enumerate() {
            segments.push(Segment {
                start_s: t,
                duration_s: d / 2.0,
                rising: true,
                cycle: Some(i),
            });
            segments.push(Segment {
                start_s: t + d / 2.0,
                duration_s: d / 2.0,
                rising: false,
                cycle: Some(i),
            });
            t += d;
        }
        // Trailing half-rise: turns the last fall into one more boundary
        // crossing so the segmenter closes exactly n_cycles cycles.
        segments.push(Segment {
            start_s: t,
            duration_s: mean / 2.0,
            rising: true,
            cycle: None,
        });
        let total_s = t + mean / 2.0;

        // Ripple amplitude stays well under the 20%-of-range hysteresis gap
        // so extra oscillations never fake a boundary crossing.
        Waveform {
            segments,
            cycle_s,
            total_s,
            ripple_amplitude: 0.018 * severity * RANGE,
            ripples_per_cycle: (2.0 * severity).ceil() as usize,
        }
    }

    /// Wrist offset from the head at time `t_s`, before noise.
    fn offset(&self, t_s: f64) -> [f64; 2] {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| t_s >= s.start_s)
            .expect("time within waveform");
        let phase = ((t_s - seg.start_s) / seg.duration_s).clamp(0.0, 1.0);
        let envelope = if seg.rising {
            (1.0 - (std::f64::consts::PI * phase).cos()) / 2.0
        } else {
            (1.0 + (std::f64::consts::PI * phase).cos()) / 2.0
        };
        let mut x = NEAR_OFFSET + RANGE * envelope;
        let mut y = Y_OFFSET;
        if let Some(cycle) = seg.cycle {
            if self.ripple_amplitude > 0.0 && self.ripples_per_cycle > 0 {
                let cycle_start = self.segments[2 * cycle].start_s;
                let u = (t_s - cycle_start) / self.cycle_s[cycle];
                let two_pi = 2.0 * std::f64::consts::PI;
                x += self.ripple_amplitude
                    * (two_pi * self.ripples_per_cycle as f64 * u).sin();
                let y_ripples = (self.ripples_per_cycle as f64 / 2.0).max(1.0);
                y += 0.5 * self.ripple_amplitude * (two_pi * y_ripples * u).sin();
            }
        }
        [x, y]
    }
}

/// Camera pose per frame. Identity at frame 0 by construction.
fn camera_poses(
    motion: Option<CameraMotion>,
    n_frames: usize,
    fps: f64,
    total_s: f64,
    seed: u64,
) -> Vec<SimilarityTransform> {
    let Some(m) = motion else {
        return vec![SimilarityTransform::identity(); n_frames];
    };
    let mut rng = substream(seed, stream::CAMERA);
    let phases: Vec<f64> = (0..4)
        .map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI))
        .collect();
    let center = HEAD_POS;
    (0..n_frames)
        .map(|frame| {
            let t = frame as f64 / fps;
            let w = 2.0 * std::f64::consts::PI * m.periods * t / total_s;
            // sin(w+phi) - sin(phi) anchors every component at 0 for t=0.
            let wobble = |amp: f64, phi: f64| amp * ((w + phi).sin() - phi.sin());
            let scale = 1.0 + wobble(m.zoom, phases[0]);
            let rotation = wobble(m.rotation, phases[1]);
            let (sin, cos) = rotation.sin_cos();
            let rotated_center = [
                scale * (cos * center[0] - sin * center[1]),
                scale * (sin * center[0] + cos * center[1]),
            ];
            let translation = [
                center[0] - rotated_center[0] + wobble(m.translation, phases[2]),
                center[1] - rotated_center[1] + wobble(m.translation, phases[3]),
            ];
            SimilarityTransform::new(scale, rotation, translation)
                .expect("bounded wobble keeps the scale positive")
        })
        .collect()
}

fn track(joint: JointLabel, points: Vec<[f64; 2]>, fps: f64) -> KeypointTrack {
    let frames = points
        .into_iter()
        .map(|p| FramePoint {
            x: p[0],
            y: p[1],
            confidence: 1.0,
        })
        .collect();
    KeypointTrack::new(joint, frames, fps).expect("generated track is well-formed")
}

fn validate(params: &SynthParams) -> Result<(), SynthError> {
    if params.n_cycles < 2 {
        return Err(SynthError::TooFewCycles(params.n_cycles));
    }
    if !(params.fps.is_finite() && params.fps > 0.0) {
        return Err(SynthError::InvalidFps(params.fps));
    }
    if !(params.base_cycle_s.is_finite() && params.base_cycle_s > 0.0) {
        return Err(SynthError::InvalidCycleDuration(params.base_cycle_s));
    }
    Ok(())
}

/// Generates one exam. Tracking noise perturbs scene positions before the
/// camera is applied, so undoing the camera recovers the camera-free track
/// exactly; background points and flows stay noiseless.
pub fn generate_exam(params: &SynthParams) -> Result<SyntheticExam, SynthError> {
    validate(params)?;
    let severity = params.severity.value();
    let waveform = Waveform::build(params);
    let n_frames = (waveform.total_s * params.fps).floor() as usize + 1;

    let mut wrist_noise = substream(params.noise_seed, stream::WRIST_NOISE);
    let mut head_noise = substream(params.noise_seed, stream::HEAD_NOISE);
    let noise = |rng: &mut ChaCha8Rng, std: f64| {
        if std > 0.0 {
            Normal::new(0.0, std).expect("finite std").sample(rng)
        } else {
            0.0
        }
    };

    // Scene-coordinate positions, tracking noise already applied.
    let mut wrist_scene = Vec::with_capacity(n_frames);
    let mut wrist_scene_clean = Vec::with_capacity(n_frames);
    let mut head_scene = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let t = frame as f64 / params.fps;
        let off = waveform.offset(t);
        let clean = [HEAD_POS[0] + off[0], HEAD_POS[1] + off[1]];
        wrist_scene_clean.push(clean);
        wrist_scene.push([
            clean[0] + noise(&mut wrist_noise, 0.25 * severity),
            clean[1] + noise(&mut wrist_noise, 0.25 * severity),
        ]);
        head_scene.push([
            HEAD_POS[0] + noise(&mut head_noise, 0.15 * severity),
            HEAD_POS[1] + noise(&mut head_noise, 0.15 * severity),
        ]);
    }

    let poses = camera_poses(
        params.camera_motion,
        n_frames,
        params.fps,
        waveform.total_s,
        params.noise_seed,
    );
    let observe = |scene: &[[f64; 2]]| -> Vec<[f64; 2]> {
        scene
            .iter()
            .zip(&poses)
            .map(|(p, pose)| pose.apply(*p))
            .collect()
    };

    let wrist_obs = observe(&wrist_scene);
    let head_obs = observe(&head_scene);
    let wrist_clean_obs = observe(&wrist_scene_clean);
    let flows = wrist_clean_obs
        .windows(2)
        .map(|w| FlowSample {
            dx: w[1][0] - w[0][0],
            dy: w[1][1] - w[0][1],
        })
        .collect();

    // Static scene corners plus midpoints: enough spread for a stable fit.
    let background: Vec<KeypointTrack> = [
        [40.0, 40.0],
        [600.0, 40.0],
        [40.0, 320.0],
        [600.0, 320.0],
        [320.0, 40.0],
        [40.0, 180.0],
    ]
    .iter()
    .enumerate()
    .map(|(k, &p)| {
        let pts: Vec<[f64; 2]> = poses.iter().map(|pose| pose.apply(p)).collect();
        track(JointLabel::Background(k as u32), pts, params.fps)
    })
    .collect();

    // Fast trajectories ride the clean wrist; slow ones hold still.
    let mut trajectories = Vec::new();
    for (k, off) in [[6.0, 0.0], [-6.0, 3.0], [0.0, -6.0], [4.0, 4.0]]
        .iter()
        .enumerate()
    {
        let pts: Vec<[f64; 2]> = wrist_scene_clean
            .iter()
            .zip(&poses)
            .map(|(p, pose)| pose.apply([p[0] + off[0], p[1] + off[1]]))
            .collect();
        trajectories
            .push(MotionTrajectory::new(k as u64, 0, pts).expect("non-empty trajectory"));
    }
    for (k, anchor) in [[200.0, 100.0], [450.0, 260.0], [320.0, 60.0], [80.0, 240.0]]
        .iter()
        .enumerate()
    {
        let pts: Vec<[f64; 2]> = poses.iter().map(|pose| pose.apply(*anchor)).collect();
        trajectories.push(
            MotionTrajectory::new(4 + k as u64, 0, pts).expect("non-empty trajectory"),
        );
    }

    let record = VideoRecord::new(
        params.video_id.clone(),
        params.patient_id.clone(),
        params.hand,
        params.severity,
        track(JointLabel::Wrist, wrist_obs, params.fps),
        track(JointLabel::HeadBottom, head_obs, params.fps),
    )
    .expect("generated record is well-formed");

    Ok(SyntheticExam {
        record,
        background,
        flows,
        trajectories,
        wrist_no_camera: track(JointLabel::Wrist, wrist_scene, params.fps),
    })
}

/// Whole-dataset generation settings. `severity_weights[i]` is the target
/// share of patients at rating `i/2`; counts follow by largest remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub n_patients: usize,
    pub videos_per_patient: usize,
    pub severity_weights: Vec<f64>,
    pub seed: u64,
    pub n_cycles: usize,
    pub fps: f64,
    pub base_cycle_s: f64,
    pub camera_motion: Option<CameraMotion>,
}

impl DatasetParams {
    pub fn new(
        n_patients: usize,
        videos_per_patient: usize,
        severity_weights: Vec<f64>,
        seed: u64,
    ) -> DatasetParams {
        DatasetParams {
            n_patients,
            videos_per_patient,
            severity_weights,
            seed,
            n_cycles: 4,
            fps: 30.0,
            base_cycle_s: 1.0,
            camera_motion: None,
        }
    }

    /// Equal weight on every rating.
    pub fn uniform_weights() -> Vec<f64> {
        vec![1.0; BarsRating::VALID.len()]
    }
}

/// Largest-remainder apportionment of `n` patients over the rating bins.
fn severity_counts(weights: &[f64], n: usize) -> Result<Vec<usize>, SynthError> {
    if weights.len() != BarsRating::VALID.len()
        || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
    {
        return Err(SynthError::InvalidDistribution);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(SynthError::InvalidDistribution);
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &bin in order.iter().cycle().take(n - assigned) {
        counts[bin] += 1;
    }
    Ok(counts)
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates `n_patients × videos_per_patient` exams. Each patient gets a
/// latent severity from the requested distribution; the left hand may sit
/// half a point away from the right.
pub fn generate_dataset(params: &DatasetParams) -> Result<Vec<SyntheticExam>, SynthError> {
    if params.n_patients < 2 {
        return Err(SynthError::TooFewPatients(params.n_patients));
    }
    if params.videos_per_patient == 0 {
        return Err(SynthError::NoVideos);
    }
    let counts = severity_counts(&params.severity_weights, params.n_patients)?;
    let mut latents = Vec::with_capacity(params.n_patients);
    for (bin, &count) in counts.iter().enumerate() {
        latents.extend(std::iter::repeat(BarsRating::VALID[bin]).take(count));
    }

    let mut exams = Vec::with_capacity(params.n_patients * params.videos_per_patient);
    for (p, &latent) in latents.iter().enumerate() {
        let patient_id = format!("sp{p:03}");
        let mut hand_rng = substream(params.seed, 10 + p as u64);
        let delta = [-0.5, 0.0, 0.5][hand_rng.gen_range(0..3)];
        let left = (latent + delta).clamp(0.0, 4.0);
        for v in 0..params.videos_per_patient {
            let (hand, severity) = if v % 2 == 0 {
                (Hand::Right, latent)
            } else {
                (Hand::Left, left)
            };
            let video_index = (p * params.videos_per_patient + v) as u64;
            let exam = generate_exam(&SynthParams {
                video_id: format!("{patient_id}_{}_{v}", hand.as_str()),
                patient_id: patient_id.clone(),
                hand,
                severity: BarsRating::new(severity).expect("clamped half point"),
                n_cycles: params.n_cycles,
                fps: params.fps,
                base_cycle_s: params.base_cycle_s,
                noise_seed: mix_seed(params.seed, video_index),
                camera_motion: params.camera_motion,
            })?;
            exams.push(exam);
        }
    }
    Ok(exams)
}
