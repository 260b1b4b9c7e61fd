//! Acceptance suite: one check per shipped guarantee, each with an
//! independent oracle and a pinned runtime budget.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion verdict lines; everything executes inside a single test so
//! the budgets are measured without interleaving.

use ataxia_rater::config::RunConfig;
use ataxia_rater::eval::{
    self, fullpoint_discard, fullpoint_random_round, run_lopo, FeatureRow, LopoConfig,
};
use ataxia_rater::features::apen;
use ataxia_rater::io::read_manifest;
use ataxia_rater::model::{lambda_max, lasso_fit, lasso_fit_traced};
use ataxia_rater::pipeline::{process_manifest, write_synthetic_dataset, ProcessOptions};
use ataxia_rater::segment::{
    build_cycles, hysteresis_events, CrossingEvent, Designation, Endpoints, EventKind,
    SegmentError,
};
use ataxia_rater::signal::RelativeSignal;
use ataxia_rater::stabilize::{estimate_similarity, PointCorrespondences, SimilarityTransform};
use ataxia_rater::synth::{generate_dataset, CameraMotion, DatasetParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

/// Seed of the 40-patient reference dataset used by criteria 7-9.
const DATASET_SEED: u64 = 2024;

struct Criterion {
    number: usize,
    label: &'static str,
    budget: Duration,
    result: Result<String, String>,
    elapsed: Duration,
}

fn check(
    number: usize,
    label: &'static str,
    budget_s: u64,
    body: impl FnOnce() -> Result<String, String>,
) -> Criterion {
    let start = Instant::now();
    let result = body();
    Criterion {
        number,
        label,
        budget: Duration::from_secs(budget_s),
        result,
        elapsed: start.elapsed(),
    }
}

#[test]
fn acceptance() {
    let scratch = tempfile::TempDir::new().expect("temp dir");
    let dir = scratch.path();
    let criteria = vec![
        check(1, "similarity-transform recovery", 1, criterion_1),
        check(2, "hysteresis event sequences", 5, criterion_2),
        check(3, "cycle designation and counts", 1, criterion_3),
        check(4, "approximate-entropy oracle", 10, criterion_4),
        check(5, "lasso solver correctness", 10, criterion_5),
        check(6, "metric oracles", 2, criterion_6),
        check(7, "synthetic end-to-end evaluation", 120, || criterion_7(dir)),
        check(8, "stabilization end-to-end", 120, || criterion_8(dir)),
        check(9, "full-point label experiments", 300, || criterion_9(dir)),
    ];

    let mut failures = 0;
    let mut report = String::new();
    for c in &criteria {
        let over_budget = c.elapsed > c.budget;
        let (verdict, detail) = match (&c.result, over_budget) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; exceeded runtime budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if verdict == "FAIL" {
            failures += 1;
        }
        let _ = writeln!(
            report,
            "criterion {}: {} — {} [{}; {:.2?} of {:?}]",
            c.number, verdict, detail, c.label, c.elapsed, c.budget
        );
    }
    print!("{report}");
    assert!(failures == 0, "{failures} acceptance criterion(s) failed:\n{report}");
}

// ---------------------------------------------------------------- criterion 1

fn angle_diff(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut d = (a - b) % two_pi;
    if d > std::f64::consts::PI {
        d -= two_pi;
    }
    if d < -std::f64::consts::PI {
        d += two_pi;
    }
    d
}

fn point_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// 1,000 random noiseless similarity transforms must be recovered to 1e-9 in
/// every parameter, and mapping points through the estimated transform and
/// its inverse must return them to within 1e-9.
fn criterion_1() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_param = 0.0f64;
    let mut worst_round_trip = 0.0f64;
    for trial in 0..1000 {
        let scale = rng.gen_range(0.3..3.0);
        let rotation = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let translation = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
        let truth = SimilarityTransform::new(scale, rotation, translation)
            .map_err(|e| format!("trial {trial}: bad generator transform: {e}"))?;
        let n_points = rng.gen_range(4..30);
        let src: Vec<[f64; 2]> = (0..n_points)
            .map(|_| [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)])
            .collect();
        let pairs = src.iter().map(|&p| (p, truth.apply(p))).collect();
        let corr = PointCorrespondences::new(pairs)
            .map_err(|e| format!("trial {trial}: correspondences rejected: {e}"))?;
        let est = estimate_similarity(&corr)
            .map_err(|e| format!("trial {trial}: estimation failed: {e}"))?
            .transform;

        let errs = [
            (est.scale - scale).abs(),
            angle_diff(est.rotation, rotation).abs(),
            (est.translation[0] - translation[0]).abs(),
            (est.translation[1] - translation[1]).abs(),
        ];
        for (name, err) in ["scale", "rotation", "tx", "ty"].iter().zip(errs) {
            worst_param = worst_param.max(err);
            if err > 1e-9 {
                return Err(format!("trial {trial}: {name} off by {err:.3e} (> 1e-9)"));
            }
        }
        let inv = est.inverse();
        for &p in &src {
            // Undoing the true motion with the estimated transform is the
            // stabilization round trip; composing with the own inverse checks
            // the inverse itself.
            let stabilized = inv.apply(truth.apply(p));
            let composed = inv.apply(est.apply(p));
            let err = point_dist(stabilized, p).max(point_dist(composed, p));
            worst_round_trip = worst_round_trip.max(err);
            if err > 1e-9 {
                return Err(format!("trial {trial}: round-trip error {err:.3e} (> 1e-9)"));
            }
        }
    }
    Ok(format!(
        "1000 transforms recovered; worst parameter error {worst_param:.1e}, worst round-trip {worst_round_trip:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 2

fn signal_from(x: Vec<f64>) -> RelativeSignal {
    let n = x.len();
    RelativeSignal {
        x,
        y: vec![0.0; n],
        fps: 30.0,
        valid: vec![true; n],
    }
}

/// Brute-force state-machine scan: `(is_forward, frame)` per crossing. The
/// state starts on the first sample's side of the midpoint; a low state emits
/// a forward event strictly above the upper threshold, a high state a
/// backward event strictly below the lower one.
fn oracle_events(x: &[f64], near: f64, far: f64, fwd: f64, bwd: f64) -> Vec<(bool, usize)> {
    let range = far - near;
    let up = near + fwd * range;
    let down = near + bwd * range;
    let mid = near + 0.5 * range;
    let mut high = x[0] > mid;
    let mut events = Vec::new();
    for (frame, &v) in x.iter().enumerate() {
        if !high && v > up {
            events.push((true, frame));
            high = true;
        } else if high && v < down {
            events.push((false, frame));
            high = false;
        }
    }
    events
}

fn compare_events(
    label: &str,
    x: Vec<f64>,
    near: f64,
    far: f64,
) -> Result<Vec<(bool, usize)>, String> {
    let expected = oracle_events(&x, near, far, 0.6, 0.4);
    let endpoints = Endpoints::new(near, far).map_err(|e| format!("{label}: {e}"))?;
    let signal = signal_from(x);
    match hysteresis_events(&signal, &endpoints, 0.6, 0.4) {
        Ok(events) => {
            let got: Vec<(bool, usize)> = events
                .iter()
                .map(|e| (e.kind == EventKind::Forward, e.frame))
                .collect();
            if got != expected {
                return Err(format!("{label}: events {got:?} != oracle {expected:?}"));
            }
            Ok(got)
        }
        Err(SegmentError::NoEvents) => {
            if expected.is_empty() {
                Ok(Vec::new())
            } else {
                Err(format!("{label}: library found no events, oracle found {expected:?}"))
            }
        }
        Err(other) => Err(format!("{label}: unexpected error {other:?}")),
    }
}

/// 500 random piecewise-linear signals (a third of them hugging the
/// 40%-60% dead zone) must produce exactly the oracle's event sequence, and
/// the canonical dip-absorption cases must come out as single excursions.
fn criterion_2() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut with_events = 0usize;
    let mut total_events = 0usize;
    for trial in 0..500 {
        let near = rng.gen_range(-200.0..200.0);
        let far = near + rng.gen_range(0.5..150.0);
        let n_waypoints = rng.gen_range(4..12);
        let waypoints: Vec<f64> = (0..n_waypoints)
            .map(|_| {
                if trial % 3 == 0 {
                    // Stress the anti-chatter bands around the thresholds.
                    match rng.gen_range(0..3) {
                        0 => rng.gen_range(-0.15..0.38),
                        1 => rng.gen_range(0.42..0.58),
                        _ => rng.gen_range(0.62..1.15),
                    }
                } else {
                    rng.gen_range(-0.15..1.15)
                }
            })
            .collect();
        let mut x = Vec::new();
        for pair in waypoints.windows(2) {
            let len = rng.gen_range(3..15);
            for s in 0..len {
                let t = s as f64 / len as f64;
                x.push(near + (pair[0] + (pair[1] - pair[0]) * t) * (far - near));
            }
        }
        x.push(near + waypoints[n_waypoints - 1] * (far - near));
        let events = compare_events(&format!("trial {trial}"), x, near, far)?;
        if !events.is_empty() {
            with_events += 1;
            total_events += events.len();
        }
    }

    // Out-and-back pulse with a dip to 0.55 at the top: the dip sits between
    // the thresholds, so it must be absorbed into a single excursion.
    let mut dip = Vec::new();
    dip.extend((0..=20).map(|i| i as f64 / 20.0));
    dip.extend((1..=5).map(|i| 1.0 - 0.45 * i as f64 / 5.0));
    dip.extend((1..=5).map(|i| 0.55 + 0.45 * i as f64 / 5.0));
    dip.extend((1..=20).map(|i| 1.0 - i as f64 / 20.0));
    let events = compare_events("dip case", dip, 0.0, 1.0)?;
    let kinds: Vec<bool> = events.iter().map(|&(f, _)| f).collect();
    if kinds != [true, false] {
        return Err(format!(
            "dip case: expected one forward then one backward crossing, got {events:?}"
        ));
    }

    // A bump that never leaves the dead zone produces no events at all.
    let mut flat = vec![0.3; 10];
    flat.extend((0..10).map(|i| 0.3 + 0.02 * i as f64)); // tops out at 0.48
    flat.extend(vec![0.45; 10]);
    let events = compare_events("dead-zone bump", flat, 0.0, 1.0)?;
    if !events.is_empty() {
        return Err(format!("dead-zone bump: expected no events, got {events:?}"));
    }

    Ok(format!(
        "500 random signals match the state-machine oracle ({with_events} with events, {total_events} crossings); dip cases absorbed"
    ))
}

// ---------------------------------------------------------------- criterion 3

/// Every alternating event sequence up to length 8, against hand-enumerated
/// designations and counts. Complete out-and-back cycles are overlapping
/// triples — backward/forward/backward counts toward finger-nose-finger,
/// forward/backward/forward toward nose-finger-nose — and the designation
/// with more cycles wins, ties going to finger-nose-finger.
fn criterion_3() -> Result<String, String> {
    use Designation::{FingerNoseFinger, NoseFingerNose};
    let table: [(&str, Option<(Designation, usize)>); 16] = [
        ("F", None),
        ("B", None),
        ("FB", None),
        ("BF", None),
        ("FBF", Some((NoseFingerNose, 1))),
        ("BFB", Some((FingerNoseFinger, 1))),
        ("FBFB", Some((FingerNoseFinger, 1))), // 1-1 tie
        ("BFBF", Some((FingerNoseFinger, 1))), // 1-1 tie
        ("FBFBF", Some((NoseFingerNose, 2))),
        ("BFBFB", Some((FingerNoseFinger, 2))),
        ("FBFBFB", Some((FingerNoseFinger, 2))), // 2-2 tie
        ("BFBFBF", Some((FingerNoseFinger, 2))), // 2-2 tie
        ("FBFBFBF", Some((NoseFingerNose, 3))),
        ("BFBFBFB", Some((FingerNoseFinger, 3))),
        ("FBFBFBFB", Some((FingerNoseFinger, 3))), // 3-3 tie
        ("BFBFBFBF", Some((FingerNoseFinger, 3))), // 3-3 tie
    ];

    for (pattern, expected) in table {
        let events: Vec<CrossingEvent> = pattern
            .chars()
            .enumerate()
            .map(|(i, ch)| CrossingEvent {
                kind: if ch == 'F' { EventKind::Forward } else { EventKind::Backward },
                frame: 10 * (i + 1),
            })
            .collect();
        match (build_cycles(&events, 200), expected) {
            (Ok(set), Some((designation, count))) => {
                if set.designation != designation || set.cycles.len() != count {
                    return Err(format!(
                        "{pattern}: got {:?} with {} cycles, expected {designation:?} with {count}",
                        set.designation,
                        set.cycles.len()
                    ));
                }
                // A cycle is three consecutive events; events sit 10 frames
                // apart, so mid and end are 10 and 20 frames past start.
                for (k, cycle) in set.cycles.iter().enumerate() {
                    if cycle.mid != cycle.start + 10 || cycle.end != cycle.start + 20 {
                        return Err(format!("{pattern}: cycle {k} has wrong boundaries {cycle:?}"));
                    }
                }
            }
            (Err(SegmentError::NoCycles), None) => {}
            (Ok(set), None) => {
                return Err(format!(
                    "{pattern}: expected no complete cycles, got {} ({:?})",
                    set.cycles.len(),
                    set.designation
                ));
            }
            (Err(err), _) => return Err(format!("{pattern}: unexpected error {err:?}")),
        }
    }

    // Ill-formed inputs are rejected, not misread.
    let double_forward = [
        CrossingEvent { kind: EventKind::Forward, frame: 1 },
        CrossingEvent { kind: EventKind::Forward, frame: 2 },
    ];
    if !matches!(build_cycles(&double_forward, 10), Err(SegmentError::NotAlternating(0, 1))) {
        return Err("repeated event kind was not rejected".into());
    }
    let same_frame = [
        CrossingEvent { kind: EventKind::Forward, frame: 5 },
        CrossingEvent { kind: EventKind::Backward, frame: 5 },
    ];
    if !matches!(build_cycles(&same_frame, 10), Err(SegmentError::NotAlternating(0, 1))) {
        return Err("non-increasing event frames were not rejected".into());
    }

    Ok("all 16 alternating sequences up to length 8 match the hand table, ties to finger-nose-finger".into())
}

// ---------------------------------------------------------------- criterion 4

/// Direct-definition approximate entropy: Chebyshev window matches with
/// self-matches included, tolerance `r` times the population standard
/// deviation, natural logs, negative residue clamped to zero.
fn apen_oracle(series: &[f64], m: usize, r: f64) -> f64 {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let sd = (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    let tol = r * sd;
    let phi = |k: usize| -> f64 {
        let windows = n - k + 1;
        let mut sum = 0.0;
        for i in 0..windows {
            let mut matches = 0usize;
            for j in 0..windows {
                let mut dist = 0.0f64;
                for t in 0..k {
                    dist = dist.max((series[i + t] - series[j + t]).abs());
                }
                if dist <= tol {
                    matches += 1;
                }
            }
            sum += (matches as f64 / windows as f64).ln();
        }
        sum / windows as f64
    };
    (phi(m) - phi(m + 1)).max(0.0)
}

/// 100 random series (lengths up to 200, both embedding dimensions, all four
/// tolerance fractions) must match the O(N²) oracle within 1e-10; constant
/// series return exactly zero.
fn criterion_4() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let r_values = [0.1, 0.12, 0.14, 0.18];
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = rng.gen_range(20..=200);
        let smooth = trial % 2 == 0;
        let series: Vec<f64> = (0..n)
            .map(|i| {
                if smooth {
                    (i as f64 * 0.37).sin() * 2.0 + rng.gen_range(-0.3..0.3)
                } else {
                    rng.gen_range(-5.0..5.0)
                }
            })
            .collect();
        let m = 2 + trial % 2;
        let r = r_values[trial % 4];
        let got = apen(&series, m, r)
            .map_err(|e| format!("trial {trial}: apen failed: {e}"))?;
        let want = apen_oracle(&series, m, r);
        let err = (got - want).abs();
        worst = worst.max(err);
        if err > 1e-10 {
            return Err(format!(
                "trial {trial} (n={n}, m={m}, r={r}): {got} vs oracle {want}, off by {err:.3e}"
            ));
        }
    }

    // Constant series: exactly zero, for every tolerance.
    for r in r_values {
        let got = apen(&vec![2.5; 60], 3, r).map_err(|e| format!("constant series: {e}"))?;
        if got != 0.0 {
            return Err(format!("constant series with r={r} returned {got}, not exactly 0"));
        }
    }

    // Alternating 0,1 series, an exactly computable configuration.
    let alternating: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
    let got = apen(&alternating, 2, 0.5).map_err(|e| format!("alternating series: {e}"))?;
    let want = apen_oracle(&alternating, 2, 0.5);
    if (got - want).abs() > 1e-10 {
        return Err(format!("alternating series: {got} vs oracle {want}"));
    }

    Ok(format!(
        "100 random series match the direct-definition oracle (worst {worst:.1e}); constants exactly 0"
    ))
}

// ---------------------------------------------------------------- criterion 5

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..p)
                .map(|_| {
                    // Box-Muller keeps the generator dependency-light here.
                    let u: f64 = rng.gen_range(1e-12..1.0);
                    let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (-2.0 * u.ln()).sqrt() * v.cos()
                })
                .collect()
        })
        .collect()
}

/// Solves `XᵀX w = Xᵀ(y − ȳ)` by Gaussian elimination with partial pivoting.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, String> {
    let n = x.len();
    let p = x[0].len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut a = vec![vec![0.0f64; p + 1]; p];
    for j in 0..p {
        for k in 0..p {
            a[j][k] = (0..n).map(|i| x[i][j] * x[i][k]).sum();
        }
        a[j][p] = (0..n).map(|i| x[i][j] * (y[i] - y_mean)).sum();
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .expect("non-empty column");
        if a[pivot][col].abs() < 1e-12 {
            return Err("singular normal equations".into());
        }
        a.swap(col, pivot);
        for row in 0..p {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..=p {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    Ok((0..p).map(|j| a[j][p] / a[j][j]).collect())
}

fn soft_threshold_oracle(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// (a) exact full shrinkage at and above the critical penalty, (b) the
/// unpenalized solution against a normal-equations oracle on 100 random
/// full-rank problems, (c) the one-dimensional closed form, (d) the
/// objective never increases across sweeps.
fn criterion_5() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    // (a) every weight is exactly zero once the penalty reaches the critical value
    for trial in 0..20 {
        let n = rng.gen_range(20..=50);
        let x = gaussian_matrix(&mut rng, n, 14);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lib_lambda_max = lambda_max(&x, &y).map_err(|e| format!("lambda_max: {e}"))?;
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let direct: f64 = (0..14)
            .map(|j| ((0..n).map(|i| x[i][j] * (y[i] - y_mean)).sum::<f64>() / n as f64).abs())
            .fold(0.0, f64::max);
        if (lib_lambda_max - direct).abs() > 1e-12 * direct.max(1.0) {
            return Err(format!("trial {trial}: lambda_max {lib_lambda_max} vs direct {direct}"));
        }
        for lambda in [lib_lambda_max, lib_lambda_max * 1.5] {
            let fit = lasso_fit(&x, &y, lambda).map_err(|e| format!("shrinkage fit: {e}"))?;
            if fit.weights.iter().any(|&w| w != 0.0) {
                return Err(format!(
                    "trial {trial}: nonzero weight at lambda={lambda} >= lambda_max {lib_lambda_max}"
                ));
            }
        }
    }

    // (b) lambda = 0 equals ordinary least squares on the centered response
    let mut worst_b = 0.0f64;
    for trial in 0..100 {
        let n = rng.gen_range(35..=50);
        let x = gaussian_matrix(&mut rng, n, 14);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let signal: f64 = x[i].iter().take(4).sum::<f64>();
                1.7 + signal + rng.gen_range(-0.5..0.5)
            })
            .collect();
        let fit = lasso_fit(&x, &y, 0.0).map_err(|e| format!("trial {trial}: {e}"))?;
        let oracle = normal_equations(&x, &y).map_err(|e| format!("trial {trial}: {e}"))?;
        let err = fit
            .weights
            .iter()
            .zip(&oracle)
            .map(|(w, o)| (w - o).abs())
            .fold(0.0f64, f64::max);
        worst_b = worst_b.max(err);
        if err > 1e-6 {
            return Err(format!(
                "trial {trial}: unpenalized fit differs from normal equations by {err:.3e}"
            ));
        }
    }

    // (c) single-column problems obey the soft-threshold closed form
    for trial in 0..50 {
        let n = rng.gen_range(10..=40);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let rho = (0..n).map(|i| x[i][0] * (y[i] - y_mean)).sum::<f64>() / n as f64;
        let denom = (0..n).map(|i| x[i][0] * x[i][0]).sum::<f64>() / n as f64;
        for lambda in [0.0, 0.25 * rho.abs(), 0.95 * rho.abs(), 1.5 * rho.abs()] {
            let want = soft_threshold_oracle(rho, lambda) / denom;
            let fit = lasso_fit(&x, &y, lambda).map_err(|e| format!("trial {trial}: {e}"))?;
            if (fit.weights[0] - want).abs() > 1e-10 {
                return Err(format!(
                    "trial {trial}: 1-D weight {} vs closed form {want} at lambda={lambda}",
                    fit.weights[0]
                ));
            }
        }
    }

    // (d) the recorded objective is non-increasing sweep over sweep
    for trial in 0..20 {
        let n = rng.gen_range(25..=50);
        let x = gaussian_matrix(&mut rng, n, 14);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lambda = 0.3 * lambda_max(&x, &y).map_err(|e| format!("{e}"))?;
        let (_, trace) =
            lasso_fit_traced(&x, &y, lambda).map_err(|e| format!("trial {trial}: {e}"))?;
        for (s, pair) in trace.windows(2).enumerate() {
            if pair[1] > pair[0] + 1e-12 * pair[0].abs().max(1.0) {
                return Err(format!(
                    "trial {trial}: objective rose from {} to {} at sweep {s}",
                    pair[0], pair[1]
                ));
            }
        }
    }

    Ok(format!(
        "full shrinkage exact; unpenalized fits within {worst_b:.1e} of normal equations; 1-D closed form and monotone objective hold"
    ))
}

// ---------------------------------------------------------------- criterion 6

/// Shrout-Fleiss two-way random-effects single-rater agreement, computed from
/// scratch with the error sum of squares taken cell by cell.
fn icc_oracle(ratings: &[Vec<f64>]) -> f64 {
    let n = ratings.len();
    let k = ratings[0].len();
    let (nf, kf) = (n as f64, k as f64);
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * kf);
    let row_mean: Vec<f64> = ratings.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_mean: Vec<f64> = (0..k)
        .map(|j| ratings.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let mut ss_err = 0.0;
    for (i, row) in ratings.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let resid = v - row_mean[i] - col_mean[j] + grand;
            ss_err += resid * resid;
        }
    }
    let ms_rows = kf * row_mean.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (nf - 1.0);
    let ms_cols = nf * col_mean.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (kf - 1.0);
    let ms_err = ss_err / ((nf - 1.0) * (kf - 1.0));
    (ms_rows - ms_err) / (ms_rows + (kf - 1.0) * ms_err + kf * (ms_cols - ms_err) / nf)
}

/// Pinned Pearson case, agreement oracle on 100 random complete matrices,
/// and count-based oracles for the error metrics.
fn criterion_6() -> Result<String, String> {
    let r = eval::pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])
        .map_err(|e| format!("pearson: {e}"))?;
    if (r - 0.8).abs() > 1e-12 {
        return Err(format!("pearson of the pinned case is {r}, expected 0.8"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_icc = 0.0f64;
    for trial in 0..100 {
        let n = rng.gen_range(5..=30);
        let k = rng.gen_range(2..=5);
        let matrix: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.gen_range(0.0..4.0)).collect())
            .collect();
        let got = eval::icc(&matrix).map_err(|e| format!("trial {trial}: {e}"))?;
        let want = icc_oracle(&matrix);
        let err = (got - want).abs();
        worst_icc = worst_icc.max(err);
        if err > 1e-9 {
            return Err(format!("trial {trial}: icc {got} vs oracle {want} (off {err:.3e})"));
        }
    }

    // Error metrics against integer half-step bookkeeping.
    for trial in 0..50 {
        let n = rng.gen_range(1..=60);
        let gold_steps: Vec<u64> = (0..n).map(|_| rng.gen_range(0..=8)).collect();
        let pred_steps: Vec<u64> = (0..n).map(|_| rng.gen_range(0..=8)).collect();
        let gold: Vec<f64> = gold_steps.iter().map(|&s| s as f64 / 2.0).collect();
        let pred: Vec<f64> = pred_steps.iter().map(|&s| s as f64 / 2.0).collect();

        let got_mae = eval::mae(&pred, &gold).map_err(|e| format!("trial {trial}: {e}"))?;
        let want_mae = gold_steps
            .iter()
            .zip(&pred_steps)
            .map(|(&g, &p)| g.abs_diff(p) as f64 / 2.0)
            .sum::<f64>()
            / n as f64;
        if (got_mae - want_mae).abs() > 1e-12 {
            return Err(format!("trial {trial}: mae {got_mae} vs count oracle {want_mae}"));
        }

        let (bins, frac) =
            eval::error_histogram(&pred, &gold).map_err(|e| format!("trial {trial}: {e}"))?;
        let mut counts = std::collections::BTreeMap::new();
        for (&g, &p) in gold_steps.iter().zip(&pred_steps) {
            *counts.entry(g.abs_diff(p)).or_insert(0usize) += 1;
        }
        let want_bins: Vec<(f64, usize)> =
            counts.iter().map(|(&s, &c)| (s as f64 / 2.0, c)).collect();
        let got_bins: Vec<(f64, usize)> = bins.iter().map(|b| (b.error, b.count)).collect();
        if got_bins != want_bins {
            return Err(format!("trial {trial}: bins {got_bins:?} vs oracle {want_bins:?}"));
        }
        let want_frac =
            counts.iter().filter(|(&s, _)| s < 2).map(|(_, &c)| c).sum::<usize>() as f64 / n as f64;
        if (frac - want_frac).abs() > 1e-12 {
            return Err(format!("trial {trial}: frac<1 {frac} vs oracle {want_frac}"));
        }
    }

    Ok(format!(
        "pinned pearson exact; 100 agreement matrices within {worst_icc:.1e}; error metrics match count oracles"
    ))
}

// ---------------------------------------------------------------- criterion 7

fn run_cli(args: &[&str]) -> Result<(), String> {
    let exe = env!("CARGO_BIN_EXE_ataxia-rater");
    let output = Command::new(exe)
        .args(args)
        .output()
        .map_err(|e| format!("spawning {exe}: {e}"))?;
    if !output.status.success() {
        return Err(format!(
            "`{}` exited with {:?}: {}",
            args.join(" "),
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    Ok(())
}

/// Full pipeline through the real binary on the 40-patient reference set:
/// quality thresholds on the leave-one-patient-out report, and byte-identical
/// output on rerun.
fn criterion_7(dir: &Path) -> Result<String, String> {
    let data = dir.join("reference-set");
    let data_s = data.to_str().expect("utf-8 temp path");
    run_cli(&[
        "synth",
        "-o",
        data_s,
        "--patients",
        "40",
        "--videos-per-patient",
        "2",
        "--seed",
        &DATASET_SEED.to_string(),
    ])?;

    let manifest_path = data.join("manifest.csv");
    let manifest = read_manifest(&manifest_path).map_err(|e| format!("manifest: {e}"))?;
    let golds: Vec<f64> = manifest.entries.iter().map(|e| e.gold_rating.value()).collect();
    let distinct: BTreeSet<u64> = golds.iter().map(|g| g.to_bits()).collect();
    let lo = golds.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = golds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo != 0.0 || hi != 4.0 || distinct.len() < 5 {
        return Err(format!(
            "severities not spread over the scale: {} distinct values in [{lo}, {hi}]",
            distinct.len()
        ));
    }

    let report_a = dir.join("report-a.json");
    let report_b = dir.join("report-b.json");
    let manifest_s = manifest_path.to_str().expect("utf-8 temp path");
    run_cli(&["evaluate", "--manifest", manifest_s, "-o", report_a.to_str().unwrap()])?;
    run_cli(&["evaluate", "--manifest", manifest_s, "-o", report_b.to_str().unwrap()])?;

    let bytes_a = std::fs::read(&report_a).map_err(|e| format!("reading report: {e}"))?;
    let bytes_b = std::fs::read(&report_b).map_err(|e| format!("reading report: {e}"))?;
    if bytes_a != bytes_b {
        return Err("rerun with the same seed produced a different report".into());
    }

    let doc: serde_json::Value =
        serde_json::from_slice(&bytes_a).map_err(|e| format!("report JSON: {e}"))?;
    let report = &doc["report"];
    let pearson = report["pearson"].as_f64().ok_or("report missing pearson")?;
    let mae = report["mae"].as_f64().ok_or("report missing mae")?;
    let frac = report["frac_err_lt_1"].as_f64().ok_or("report missing frac_err_lt_1")?;
    let excluded = report["excluded"].as_array().map_or(0, Vec::len);
    if excluded > 0 {
        return Err(format!("{excluded} videos were excluded from the evaluation"));
    }
    if pearson < 0.8 {
        return Err(format!("pearson {pearson:.3} below the 0.8 floor"));
    }
    if mae > 0.5 {
        return Err(format!("mae {mae:.3} above the 0.5 ceiling"));
    }
    if frac < 0.85 {
        return Err(format!("only {:.1}% of errors below one point", frac * 100.0));
    }
    Ok(format!(
        "pearson {pearson:.3}, mae {mae:.3}, {:.1}% of errors < 1 point; rerun byte-identical",
        frac * 100.0
    ))
}

// ---------------------------------------------------------------- criterion 8

/// Drift-free 40-patient reference rows, processed once and shared by
/// criteria 8 and 9.
static REFERENCE_ROWS: OnceLock<Result<Vec<FeatureRow>, String>> = OnceLock::new();

fn reference_rows(dir: &Path) -> Result<&'static [FeatureRow], String> {
    REFERENCE_ROWS
        .get_or_init(|| {
            let params =
                DatasetParams::new(40, 2, DatasetParams::uniform_weights(), DATASET_SEED);
            let exams = generate_dataset(&params).map_err(|e| format!("synth: {e}"))?;
            let data = dir.join("reference-clean");
            std::fs::create_dir_all(&data).map_err(|e| e.to_string())?;
            let manifest =
                write_synthetic_dataset(&data, &exams).map_err(|e| format!("write: {e}"))?;
            let entries = read_manifest(&manifest).map_err(|e| e.to_string())?.entries;
            let outcome =
                process_manifest(&entries, &RunConfig::default(), &ProcessOptions::default())
                    .map_err(|e| e.to_string())?;
            if !outcome.failures.is_empty() {
                return Err(format!("{} videos failed processing", outcome.failures.len()));
            }
            Ok(outcome.rows())
        })
        .as_deref()
        .map_err(Clone::clone)
}

fn feature_rows_by_id(
    outcome: &ataxia_rater::pipeline::ProcessOutcome,
) -> Result<Vec<(String, [f64; 14])>, String> {
    if !outcome.failures.is_empty() {
        return Err(format!("{} videos failed processing", outcome.failures.len()));
    }
    Ok(outcome
        .videos
        .iter()
        .map(|v| (v.row.video_id.clone(), v.row.features.to_array()))
        .collect())
}

/// Camera drift must wash out under stabilization — every feature within 5%
/// of its drift-free value — while skipping stabilization measurably hurts
/// the evaluation.
fn criterion_8(dir: &Path) -> Result<String, String> {
    let mut params = DatasetParams::new(40, 2, DatasetParams::uniform_weights(), DATASET_SEED);
    params.camera_motion = Some(CameraMotion::default());
    let exams_drift = generate_dataset(&params).map_err(|e| format!("synth: {e}"))?;

    let drift_dir = dir.join("drifting");
    std::fs::create_dir_all(&drift_dir).map_err(|e| e.to_string())?;
    let drift_manifest =
        write_synthetic_dataset(&drift_dir, &exams_drift).map_err(|e| format!("write: {e}"))?;

    let config = RunConfig::default();
    let drift_entries = read_manifest(&drift_manifest).map_err(|e| e.to_string())?.entries;

    let stabilized = process_manifest(&drift_entries, &config, &ProcessOptions::default())
        .map_err(|e| e.to_string())?;
    let unstabilized = process_manifest(
        &drift_entries,
        &config,
        &ProcessOptions { skip_stabilization: true, ..ProcessOptions::default() },
    )
    .map_err(|e| e.to_string())?;

    let clean_rows: Vec<(String, [f64; 14])> = reference_rows(dir)?
        .iter()
        .map(|r| (r.video_id.clone(), r.features.to_array()))
        .collect();
    let stab_rows = feature_rows_by_id(&stabilized)?;
    if clean_rows.len() != stab_rows.len() {
        return Err("drift-free and stabilized runs cover different videos".into());
    }

    let mut worst_rel = 0.0f64;
    let mut worst_at = String::new();
    for ((id_a, a), (id_b, b)) in clean_rows.iter().zip(&stab_rows) {
        if id_a != id_b {
            return Err(format!("video order mismatch: {id_a} vs {id_b}"));
        }
        for (j, name) in ataxia_rater::features::FEATURE_NAMES.iter().enumerate() {
            let rel = if a[j].abs() < 1e-9 && b[j].abs() < 1e-9 {
                0.0
            } else {
                (a[j] - b[j]).abs() / a[j].abs().max(b[j].abs())
            };
            if rel > worst_rel {
                worst_rel = rel;
                worst_at = format!("{name} on {id_a}");
            }
        }
    }
    if worst_rel >= 0.05 {
        return Err(format!(
            "stabilized features stray {:.2}% from drift-free at {worst_at}",
            worst_rel * 100.0
        ));
    }

    let cfg = LopoConfig::default();
    let report_stab = run_lopo(
        &stabilized.videos.iter().map(|v| v.row.clone()).collect::<Vec<_>>(),
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let report_skip = run_lopo(
        &unstabilized.videos.iter().map(|v| v.row.clone()).collect::<Vec<_>>(),
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let pearson_stab = report_stab.pearson.ok_or("stabilized pearson degenerate")?;
    let pearson_skip = report_skip.pearson.ok_or("unstabilized pearson degenerate")?;
    let drop = pearson_stab - pearson_skip;
    if drop <= 0.02 {
        return Err(format!(
            "skipping stabilization only moved pearson from {pearson_stab:.3} to {pearson_skip:.3} ({drop:+.3})"
        ));
    }

    Ok(format!(
        "stabilized features within {:.2}% of drift-free (worst {worst_at}); skipping stabilization drops pearson {pearson_stab:.3} → {pearson_skip:.3}",
        worst_rel * 100.0
    ))
}

// ---------------------------------------------------------------- criterion 9

/// The discard experiment keeps exactly the integer-labeled videos; the
/// rounding experiment at its standard 100 repeats is reproducible under a
/// fixed seed; with no half-point labels the standard error is exactly zero
/// and the summary collapses to a single plain evaluation run.
fn criterion_9(dir: &Path) -> Result<String, String> {
    let rows = reference_rows(dir)?;

    let kept = fullpoint_discard(rows).map_err(|e| format!("discard: {e}"))?;
    let expected_ids: Vec<&str> = rows
        .iter()
        .filter(|r| r.gold.is_full_point())
        .map(|r| r.video_id.as_str())
        .collect();
    let kept_ids: Vec<&str> = kept.iter().map(|r| r.video_id.as_str()).collect();
    if kept_ids != expected_ids {
        return Err(format!("discard kept {kept_ids:?}, expected {expected_ids:?}"));
    }
    if kept.len() == rows.len() {
        return Err("reference set unexpectedly has no half-point labels".into());
    }

    let cfg = LopoConfig::default();
    let round =
        fullpoint_random_round(rows, &cfg, 0, 100).map_err(|e| format!("round: {e}"))?;
    if round.repeats != 100 || round.pearson_defined_repeats != 100 {
        return Err(format!(
            "expected 100 repeats with defined correlation, got {} / {}",
            round.repeats, round.pearson_defined_repeats
        ));
    }
    if !(round.mae_mean.is_finite() && round.mae_se > 0.0 && round.mae_se < 0.5) {
        return Err(format!(
            "implausible rounding spread: mae {} ± {}",
            round.mae_mean, round.mae_se
        ));
    }

    // Reproducibility of the seeded experiment at the standard repeat count,
    // demonstrated on a small patient subset so the hundred label draws only
    // hit a handful of distinct label vectors: two patients with half-point
    // labels keep the draws live, two all-integer patients pad the cohort.
    let mut subset_patients: Vec<&str> = Vec::new();
    let (mut with_half, mut all_integer) = (0usize, 0usize);
    let mut seen_patients: BTreeSet<&str> = BTreeSet::new();
    for r in rows {
        let pid = r.patient_id.as_str();
        if !seen_patients.insert(pid) {
            continue;
        }
        let has_half = rows
            .iter()
            .filter(|s| s.patient_id == r.patient_id)
            .any(|s| !s.gold.is_full_point());
        if has_half && with_half < 2 {
            subset_patients.push(pid);
            with_half += 1;
        } else if !has_half && all_integer < 2 {
            subset_patients.push(pid);
            all_integer += 1;
        }
        if with_half == 2 && all_integer == 2 {
            break;
        }
    }
    if with_half == 0 || subset_patients.len() < 3 {
        return Err(format!(
            "could not pick a rounding subset: {with_half} mixed / {all_integer} integer patients"
        ));
    }
    let subset: Vec<FeatureRow> = rows
        .iter()
        .filter(|r| subset_patients.contains(&r.patient_id.as_str()))
        .cloned()
        .collect();
    let pair_a = fullpoint_random_round(&subset, &cfg, 7, 100).map_err(|e| e.to_string())?;
    let pair_b = fullpoint_random_round(&subset, &cfg, 7, 100).map_err(|e| e.to_string())?;
    if pair_a != pair_b {
        return Err(format!("same-seed reruns disagree: {pair_a:?} vs {pair_b:?}"));
    }
    if pair_a.mae_se <= 0.0 {
        return Err("rounding subset produced no spread; reproducibility check is vacuous".into());
    }

    // No half-point labels (the discard survivors): no randomness is consumed,
    // the standard error is exactly zero, and the summary equals one plain
    // evaluation run.
    let int_round = fullpoint_random_round(&kept, &cfg, 3, 100).map_err(|e| e.to_string())?;
    if int_round.mae_se != 0.0 || int_round.pearson_se != Some(0.0) {
        return Err(format!(
            "integer-only standard errors not exactly zero: {:?} / {:?}",
            int_round.mae_se, int_round.pearson_se
        ));
    }
    let plain = run_lopo(&kept, &cfg).map_err(|e| e.to_string())?;
    if int_round.mae_mean != plain.mae || int_round.pearson_mean != plain.pearson {
        return Err("integer-only rounding summary differs from a single plain run".into());
    }

    Ok(format!(
        "discard kept {}/{} integer-labeled videos; round: mae {:.3} ± {:.3} over 100 repeats, reproducible; integer-only SE exactly 0",
        kept.len(),
        rows.len(),
        round.mae_mean,
        round.mae_se
    ))
}
