//! Motion features of a segmented exam signal.
//!
//! Three groups, 14 values total: log-mean and spread of cycle durations
//! (full cycle plus both halves), direction-change counts of the x/y signals
//! (raw and per cycle), and approximate entropy of the x signal at four
//! similarity thresholds.

use crate::segment::{CycleSet, Designation};
use crate::signal::RelativeSignal;
use thiserror::Error;

/// Embedding dimension for approximate entropy.
pub const APEN_M: usize = 3;
/// Similarity thresholds (fractions of the series' standard deviation).
pub const APEN_R_VALUES: [f64; 4] = [0.10, 0.12, 0.14, 0.18];

/// Canonical feature order; column headers and model weights follow it.
pub const FEATURE_NAMES: [&str; 14] = [
    "log_mean_cycle_s",
    "log_mean_n2f_s",
    "log_mean_f2n_s",
    "dirchg_x_raw",
    "dirchg_y_raw",
    "dirchg_x_per_cycle",
    "dirchg_y_per_cycle",
    "std_cycle_s",
    "std_n2f_s",
    "std_f2n_s",
    "apen_r010",
    "apen_r012",
    "apen_r014",
    "apen_r018",
];

/// The 14 motion features, all finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub log_mean_cycle_s: f64,
    pub log_mean_n2f_s: f64,
    pub log_mean_f2n_s: f64,
    pub dirchg_x_raw: f64,
    pub dirchg_y_raw: f64,
    pub dirchg_x_per_cycle: f64,
    pub dirchg_y_per_cycle: f64,
    pub std_cycle_s: f64,
    pub std_n2f_s: f64,
    pub std_f2n_s: f64,
    pub apen_r010: f64,
    pub apen_r012: f64,
    pub apen_r014: f64,
    pub apen_r018: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 14] {
        [
            self.log_mean_cycle_s,
            self.log_mean_n2f_s,
            self.log_mean_f2n_s,
            self.dirchg_x_raw,
            self.dirchg_y_raw,
            self.dirchg_x_per_cycle,
            self.dirchg_y_per_cycle,
            self.std_cycle_s,
            self.std_n2f_s,
            self.std_f2n_s,
            self.apen_r010,
            self.apen_r012,
            self.apen_r014,
            self.apen_r018,
        ]
    }

    pub fn from_array(values: [f64; 14]) -> Result<Self, FeatureError> {
        for (name, v) in FEATURE_NAMES.iter().zip(&values) {
            if !v.is_finite() {
                return Err(FeatureError::NonFinite { name });
            }
        }
        Ok(FeatureVector {
            log_mean_cycle_s: values[0],
            log_mean_n2f_s: values[1],
            log_mean_f2n_s: values[2],
            dirchg_x_raw: values[3],
            dirchg_y_raw: values[4],
            dirchg_x_per_cycle: values[5],
            dirchg_y_per_cycle: values[6],
            std_cycle_s: values[7],
            std_n2f_s: values[8],
            std_f2n_s: values[9],
            apen_r010: values[10],
            apen_r012: values[11],
            apen_r014: values[12],
            apen_r018: values[13],
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("NoCycles: feature extraction needs at least one cycle")]
    NoCycles,
    #[error("ZeroDuration: cycle {index} has an empty half")]
    ZeroDuration { index: usize },
    #[error("SeriesTooShort: {len} samples, need more than {needed} for m={m}")]
    SeriesTooShort { len: usize, needed: usize, m: usize },
    #[error("InvalidThreshold: r must be > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("NonFinite: feature {name} is not finite")]
    NonFinite { name: &'static str },
}

/// Duration statistics over the cycles, in (log-)seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationFeatures {
    pub log_mean_cycle_s: f64,
    pub log_mean_n2f_s: f64,
    pub log_mean_f2n_s: f64,
    pub std_cycle_s: f64,
    pub std_n2f_s: f64,
    pub std_f2n_s: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Log-mean and population spread of full-cycle and half-cycle durations.
///
/// Each cycle splits at its mid event; which half is nose-to-finger depends
/// on the designation (a finger-nose-finger cycle starts with the
/// finger-to-nose half, a nose-finger-nose cycle with the reverse).
pub fn duration_features(cycles: &CycleSet, fps: f64) -> Result<DurationFeatures, FeatureError> {
    if cycles.cycles.is_empty() {
        return Err(FeatureError::NoCycles);
    }
    let mut full = Vec::with_capacity(cycles.cycles.len());
    let mut n2f = Vec::with_capacity(cycles.cycles.len());
    let mut f2n = Vec::with_capacity(cycles.cycles.len());
    for (index, c) in cycles.cycles.iter().enumerate() {
        let first = (c.mid - c.start) as f64 / fps;
        let second = (c.end - c.mid) as f64 / fps;
        if first == 0.0 || second == 0.0 {
            return Err(FeatureError::ZeroDuration { index });
        }
        full.push((c.end - c.start) as f64 / fps);
        match cycles.designation {
            Designation::FingerNoseFinger => {
                f2n.push(first);
                n2f.push(second);
            }
            Designation::NoseFingerNose => {
                n2f.push(first);
                f2n.push(second);
            }
        }
    }
    Ok(DurationFeatures {
        log_mean_cycle_s: mean(&full).ln(),
        log_mean_n2f_s: mean(&n2f).ln(),
        log_mean_f2n_s: mean(&f2n).ln(),
        std_cycle_s: population_std(&full),
        std_n2f_s: population_std(&n2f),
        std_f2n_s: population_std(&f2n),
    })
}

/// Differences at or below this fraction of the signal's overall extent are
/// treated as zero when counting direction changes, so float residue from
/// upstream transforms cannot turn a flat axis into a pile of reversals.
const DIRCHG_NOISE_GATE: f64 = 1e-9;

/// Sign changes of the forward differences within one span; near-zero
/// differences (`|d| <= eps`) carry the previous sign instead of counting as
/// changes.
fn sign_changes(series: &[f64], eps: f64) -> u64 {
    let mut count = 0;
    let mut last_sign = 0i8;
    for pair in series.windows(2) {
        let d = pair[1] - pair[0];
        let sign = if d > eps {
            1
        } else if d < -eps {
            -1
        } else {
            0
        };
        if sign != 0 {
            if last_sign != 0 && sign != last_sign {
                count += 1;
            }
            last_sign = sign;
        }
    }
    count
}

fn spread(series: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in series {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}

/// Direction-change counts: `(raw_x, raw_y, per_cycle_x, per_cycle_y)`.
///
/// Differences are taken within each cycle span independently and the counts
/// summed; per-cycle values divide by the number of cycles.
pub fn direction_changes(
    signal: &RelativeSignal,
    cycles: &CycleSet,
) -> Result<(f64, f64, f64, f64), FeatureError> {
    if cycles.cycles.is_empty() {
        return Err(FeatureError::NoCycles);
    }
    let eps = DIRCHG_NOISE_GATE * spread(&signal.x).max(spread(&signal.y));
    let (mut raw_x, mut raw_y) = (0u64, 0u64);
    for c in &cycles.cycles {
        raw_x += sign_changes(&signal.x[c.start..c.end], eps);
        raw_y += sign_changes(&signal.y[c.start..c.end], eps);
    }
    let n = cycles.cycles.len() as f64;
    Ok((
        raw_x as f64,
        raw_y as f64,
        raw_x as f64 / n,
        raw_y as f64 / n,
    ))
}

/// Approximate entropy with Chebyshev distance and self-matches included.
///
/// The similarity radius is `r` times the series' population standard
/// deviation, so the value is invariant to positive affine rescaling. A
/// zero-variance series returns 0 by convention, and small negative
/// numerical residue is clamped to 0.
pub fn apen(series: &[f64], m: usize, r: f64) -> Result<f64, FeatureError> {
    if !(r > 0.0) {
        return Err(FeatureError::InvalidThreshold(r));
    }
    let n = series.len();
    if n <= m + 1 {
        return Err(FeatureError::SeriesTooShort {
            len: n,
            needed: m + 1,
            m,
        });
    }
    let sigma = population_std(series);
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let radius = r * sigma;
    let phi = |k: usize| -> f64 {
        let windows = n - k + 1;
        let mut sum = 0.0;
        for i in 0..windows {
            let mut matches = 0usize;
            for j in 0..windows {
                let mut within = true;
                for l in 0..k {
                    if (series[i + l] - series[j + l]).abs() > radius {
                        within = false;
                        break;
                    }
                }
                if within {
                    matches += 1;
                }
            }
            sum += (matches as f64 / windows as f64).ln();
        }
        sum / windows as f64
    };
    Ok((phi(m) - phi(m + 1)).max(0.0))
}

/// Assembles the full 14-entry vector from a segmented signal.
///
/// Approximate entropy runs on the x values of the cycle spans concatenated
/// in time order, at embedding dimension [`APEN_M`] and the four thresholds
/// in [`APEN_R_VALUES`].
pub fn featurize(signal: &RelativeSignal, cycles: &CycleSet) -> Result<FeatureVector, FeatureError> {
    let durations = duration_features(cycles, signal.fps)?;
    let (dx_raw, dy_raw, dx_pc, dy_pc) = direction_changes(signal, cycles)?;
    let series = cycles.concat_cycle_values(&signal.x);
    let mut entropies = [0.0; 4];
    for (e, &r) in entropies.iter_mut().zip(&APEN_R_VALUES) {
        *e = apen(&series, APEN_M, r)?;
    }
    FeatureVector::from_array([
        durations.log_mean_cycle_s,
        durations.log_mean_n2f_s,
        durations.log_mean_f2n_s,
        dx_raw,
        dy_raw,
        dx_pc,
        dy_pc,
        durations.std_cycle_s,
        durations.std_n2f_s,
        durations.std_f2n_s,
        entropies[0],
        entropies[1],
        entropies[2],
        entropies[3],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{Cycle, CycleSet};
    use crate::signal::RelativeSignal;

    fn sig(x: Vec<f64>, fps: f64) -> RelativeSignal {
        let n = x.len();
        RelativeSignal {
            x,
            y: vec![0.0; n],
            fps,
            valid: vec![true; n],
        }
    }

    fn cycle_set(designation: Designation, triples: &[(usize, usize, usize)], n: usize) -> CycleSet {
        CycleSet::new(
            designation,
            triples
                .iter()
                .map(|&(start, mid, end)| Cycle { start, mid, end })
                .collect(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn uniform_cycles_have_zero_spread() {
        let cs = cycle_set(
            Designation::FingerNoseFinger,
            &[(0, 15, 30), (30, 45, 60), (60, 75, 90)],
            90,
        );
        let d = duration_features(&cs, 30.0).unwrap();
        assert_eq!(d.log_mean_cycle_s, 0.0); // ln(1.0 s)
        assert_eq!(d.std_cycle_s, 0.0);
        assert_eq!(d.std_n2f_s, 0.0);
        assert_eq!(d.std_f2n_s, 0.0);
    }

    #[test]
    fn mixed_cycle_lengths() {
        // 30 and 60 frames at 30 fps: mean 1.5 s, population std of {1,2} = 0.5.
        let cs = cycle_set(
            Designation::FingerNoseFinger,
            &[(0, 15, 30), (30, 60, 90)],
            90,
        );
        let d = duration_features(&cs, 30.0).unwrap();
        assert!((d.log_mean_cycle_s - 1.5f64.ln()).abs() < 1e-12);
        assert!((d.std_cycle_s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_cycle_spread_is_zero() {
        let cs = cycle_set(Designation::NoseFingerNose, &[(0, 20, 50)], 50);
        let d = duration_features(&cs, 25.0).unwrap();
        assert_eq!(d.std_cycle_s, 0.0);
        assert_eq!(d.std_n2f_s, 0.0);
    }

    #[test]
    fn designation_decides_half_labels() {
        // Asymmetric cycle: first half 10 frames, second 20, at 10 fps.
        let triple = &[(0usize, 10usize, 30usize)][..];
        let fnf = duration_features(
            &cycle_set(Designation::FingerNoseFinger, triple, 30),
            10.0,
        )
        .unwrap();
        assert!((fnf.log_mean_f2n_s - 1.0f64.ln()).abs() < 1e-12);
        assert!((fnf.log_mean_n2f_s - 2.0f64.ln()).abs() < 1e-12);
        let nfn =
            duration_features(&cycle_set(Designation::NoseFingerNose, triple, 30), 10.0).unwrap();
        assert!((nfn.log_mean_n2f_s - 1.0f64.ln()).abs() < 1e-12);
        assert!((nfn.log_mean_f2n_s - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn monotone_ramp_has_no_direction_changes() {
        let s = sig((0..40).map(|t| t as f64).collect(), 30.0);
        let cs = cycle_set(Designation::FingerNoseFinger, &[(0, 20, 39)], 40);
        let (rx, ry, px, py) = direction_changes(&s, &cs).unwrap();
        assert_eq!((rx, ry, px, py), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn sine_over_two_periods_changes_direction_four_times() {
        // x(t) = sin(2πt) at 100 Hz, t in [0, 2): extrema at t = .25, .75,
        // 1.25, 1.75 land between samples, so exactly 4 sign flips.
        let s = sig(
            (0..200)
                .map(|k| (2.0 * std::f64::consts::PI * k as f64 / 100.0).sin())
                .collect(),
            100.0,
        );
        let cs = cycle_set(Designation::NoseFingerNose, &[(0, 100, 199)], 200);
        let (rx, _, px, _) = direction_changes(&s, &cs).unwrap();
        assert_eq!(rx, 4.0);
        assert_eq!(px, 4.0);
    }

    #[test]
    fn duplicated_cycle_doubles_raw_not_normalized() {
        let wave: Vec<f64> = (0..30)
            .map(|k| (2.0 * std::f64::consts::PI * k as f64 / 15.0).sin())
            .collect();
        let mut x = wave.clone();
        x.extend_from_slice(&wave);
        let s = sig(x, 30.0);
        let one = cycle_set(Designation::NoseFingerNose, &[(0, 15, 30)], 60);
        let two = cycle_set(Designation::NoseFingerNose, &[(0, 15, 30), (30, 45, 60)], 60);
        let (r1, _, p1, _) = direction_changes(&s, &one).unwrap();
        let (r2, _, p2, _) = direction_changes(&s, &two).unwrap();
        assert_eq!(r2, 2.0 * r1);
        assert_eq!(p2, p1);
    }

    #[test]
    fn plateaus_carry_sign() {
        // up, flat, up is monotone; up, flat, down is one change.
        let cs = cycle_set(Designation::FingerNoseFinger, &[(0, 2, 4)], 5);
        let s1 = sig(vec![0.0, 1.0, 1.0, 2.0, 3.0], 30.0);
        let s2 = sig(vec![0.0, 1.0, 1.0, 0.5, 0.0], 30.0);
        assert_eq!(direction_changes(&s1, &cs).unwrap().0, 0.0);
        assert_eq!(direction_changes(&s2, &cs).unwrap().0, 1.0);
    }

    #[test]
    fn float_residue_on_a_flat_axis_is_not_a_reversal() {
        // y is flat up to alternating ~1e-13 residue, far below the gate set
        // by x's unit-scale motion; it must count zero direction changes.
        let n = 60;
        let x: Vec<f64> = (0..n)
            .map(|k| (2.0 * std::f64::consts::PI * k as f64 / 30.0).sin())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|k| 0.25 + if k % 2 == 0 { 1e-13 } else { -1e-13 })
            .collect();
        let s = RelativeSignal {
            x,
            y,
            fps: 30.0,
            valid: vec![true; n],
        };
        let cs = cycle_set(Designation::NoseFingerNose, &[(0, 30, 59)], n);
        let (rx, ry, _, py) = direction_changes(&s, &cs).unwrap();
        assert!(rx > 0.0);
        assert_eq!(ry, 0.0);
        assert_eq!(py, 0.0);
    }

    /// Direct-definition oracle building explicit windows and counting
    /// Chebyshev matches on them.
    pub(crate) fn apen_oracle(series: &[f64], m: usize, r: f64) -> f64 {
        let n = series.len();
        let sigma = {
            let mu = series.iter().sum::<f64>() / n as f64;
            (series.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64).sqrt()
        };
        if sigma == 0.0 {
            return 0.0;
        }
        let radius = r * sigma;
        let phi = |k: usize| -> f64 {
            let windows: Vec<&[f64]> = (0..n - k + 1).map(|i| &series[i..i + k]).collect();
            let cheb = |a: &[f64], b: &[f64]| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0f64, f64::max)
            };
            let logs: Vec<f64> = windows
                .iter()
                .map(|wi| {
                    let c = windows.iter().filter(|wj| cheb(wi, wj) <= radius).count();
                    (c as f64 / windows.len() as f64).ln()
                })
                .collect();
            logs.iter().sum::<f64>() / logs.len() as f64
        };
        (phi(m) - phi(m + 1)).max(0.0)
    }

    #[test]
    fn constant_series_has_zero_entropy() {
        assert_eq!(apen(&vec![3.7; 40], 3, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn alternating_series_matches_oracle() {
        let series: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
        let got = apen(&series, 2, 0.5).unwrap();
        assert!((got - apen_oracle(&series, 2, 0.5)).abs() < 1e-12);
        assert!(got > 0.0);
    }

    #[test]
    fn random_series_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.gen_range(20..80);
            let series: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = rng.gen_range(1..4);
            let r = rng.gen_range(0.05..0.5);
            let got = apen(&series, m, r).unwrap();
            assert!((got - apen_oracle(&series, m, r)).abs() < 1e-10);
        }
    }

    #[test]
    fn apen_is_affine_invariant_on_exact_grids() {
        let series: Vec<f64> = (0..60).map(|i| ((i * 7) % 13) as f64).collect();
        let base = apen(&series, 3, 0.14).unwrap();
        for (a, b) in [(2.0, 0.0), (0.5, 3.0), (4.0, -10.0)] {
            let mapped: Vec<f64> = series.iter().map(|v| a * v + b).collect();
            assert_eq!(apen(&mapped, 3, 0.14).unwrap(), base);
        }
    }

    #[test]
    fn apen_rejects_short_series() {
        assert!(matches!(
            apen(&[1.0, 2.0, 3.0, 4.0], 3, 0.1),
            Err(FeatureError::SeriesTooShort { .. })
        ));
    }

    fn sawtooth_exam() -> (RelativeSignal, CycleSet) {
        // Four identical out-and-back ramps of 20 frames each.
        let mut x = Vec::new();
        for _ in 0..4 {
            for k in 0..10 {
                x.push(k as f64 / 10.0);
            }
            for k in 0..10 {
                x.push(1.0 - k as f64 / 10.0);
            }
        }
        x.push(0.0);
        let n = x.len();
        let triples: Vec<(usize, usize, usize)> =
            (0..4).map(|c| (20 * c, 20 * c + 10, 20 * (c + 1))).collect();
        (
            sig(x, 30.0),
            cycle_set(Designation::NoseFingerNose, &triples, n),
        )
    }

    #[test]
    fn featurize_assembles_componentwise() {
        let (s, cs) = sawtooth_exam();
        let f = featurize(&s, &cs).unwrap();
        let d = duration_features(&cs, s.fps).unwrap();
        let (rx, ry, px, py) = direction_changes(&s, &cs).unwrap();
        assert_eq!(f.log_mean_cycle_s, d.log_mean_cycle_s);
        assert_eq!(f.std_cycle_s, 0.0);
        assert_eq!((f.dirchg_x_raw, f.dirchg_y_raw), (rx, ry));
        assert_eq!((f.dirchg_x_per_cycle, f.dirchg_y_per_cycle), (px, py));
        assert_eq!(f.dirchg_x_per_cycle, f.dirchg_x_raw / 4.0);
        let series = cs.concat_cycle_values(&s.x);
        assert_eq!(f.apen_r010, apen(&series, APEN_M, 0.10).unwrap());
        let arr = f.to_array();
        assert_eq!(arr.len(), FEATURE_NAMES.len());
        assert!(arr.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn y_flip_preserves_features() {
        let (s, cs) = sawtooth_exam();
        let mut flipped = s.clone();
        for v in &mut flipped.y {
            *v = -*v;
        }
        let a = featurize(&s, &cs).unwrap();
        let b = featurize(&flipped, &cs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn doubling_fps_preserves_durations_and_counts() {
        let (s, cs) = sawtooth_exam();
        // Same physical motion sampled twice as fast: duplicate every sample
        // (zero differences carry sign, so counts are unchanged).
        let mut x2 = Vec::with_capacity(s.len() * 2);
        for &v in &s.x {
            x2.push(v);
            x2.push(v);
        }
        let s2 = sig(x2, 60.0);
        let triples2: Vec<(usize, usize, usize)> = cs
            .cycles
            .iter()
            .map(|c| (2 * c.start, 2 * c.mid, 2 * c.end))
            .collect();
        let cs2 = cycle_set(Designation::NoseFingerNose, &triples2, s2.len());
        let a = featurize(&s, &cs).unwrap();
        let b = featurize(&s2, &cs2).unwrap();
        assert!((a.log_mean_cycle_s - b.log_mean_cycle_s).abs() < 1e-12);
        assert!((a.log_mean_n2f_s - b.log_mean_n2f_s).abs() < 1e-12);
        assert!((a.std_cycle_s - b.std_cycle_s).abs() < 1e-12);
        assert_eq!(a.dirchg_x_raw, b.dirchg_x_raw);
        assert_eq!(a.dirchg_y_raw, b.dirchg_y_raw);
    }

    #[test]
    fn from_array_rejects_non_finite() {
        let mut arr = [0.0; 14];
        arr[5] = f64::NAN;
        assert!(matches!(
            FeatureVector::from_array(arr),
            Err(FeatureError::NonFinite { name: "dirchg_x_per_cycle" })
        ));
    }
}
