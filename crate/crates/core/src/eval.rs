//! Leave-one-patient-out evaluation and the reported statistics.
//!
//! One fold per patient: the model trains on everyone else and predicts the
//! held-out patient's videos. Metrics (MAE, Pearson, ICC(2,1), error
//! histogram) are computed over the pooled rounded predictions, plus the
//! two full-point label experiments and the specialist-range comparison.

use crate::features::FeatureVector;
use crate::model::{self, ModelError, RatingModel};
use crate::signal::{BarsRating, Hand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

/// One labeled, featurized video — the row currency of training/evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub video_id: String,
    pub patient_id: String,
    pub hand: Hand,
    pub gold: BarsRating,
    pub features: FeatureVector,
}

/// A leave-one-patient-out fold: indices into the dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub patient_id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("SinglePatient: need at least 2 distinct patient ids")]
    SinglePatient,
    #[error("EmptyInput: no rows")]
    EmptyInput,
    #[error("LengthMismatch: {left} vs {right} values")]
    LengthMismatch { left: usize, right: usize },
    #[error("ZeroVariance: correlation undefined for a constant argument")]
    ZeroVariance,
    #[error("IncompleteMatrix: row {row} has {got} ratings, expected {expected}")]
    IncompleteMatrix {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("MatrixTooSmall: need >= 2 targets and >= 2 raters, got {n}x{k}")]
    MatrixTooSmall { n: usize, k: usize },
    #[error("EmptyRaters: video {0} has no specialist ratings")]
    EmptyRaters(String),
    #[error("EmptyResult: no integer-labeled videos to keep")]
    EmptyResult,
    #[error("InvalidRepeats: repeats must be >= 1")]
    InvalidRepeats,
    #[error("model: {0}")]
    Model(#[from] ModelError),
}

/// One fold per distinct patient, ordered by patient id.
pub fn lopo_folds(rows: &[FeatureRow]) -> Result<Vec<Fold>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut patients: Vec<&str> = rows.iter().map(|r| r.patient_id.as_str()).collect();
    patients.sort_unstable();
    patients.dedup();
    if patients.len() < 2 {
        return Err(EvalError::SinglePatient);
    }
    Ok(patients
        .iter()
        .map(|&p| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..rows.len()).partition(|&i| rows[i].patient_id == p);
            Fold {
                patient_id: p.to_string(),
                train,
                test,
            }
        })
        .collect())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], gold: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(pred
        .iter()
        .zip(gold)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Pearson correlation, clamped into `[-1, 1]` against rounding residue.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// ICC(2,1): two-way random effects, single rater, absolute agreement.
///
/// Rows are targets, columns raters. An all-zero mean-squares decomposition
/// (every cell identical) counts as perfect agreement.
pub fn icc(ratings: &[Vec<f64>]) -> Result<f64, EvalError> {
    let n = ratings.len();
    let k = ratings.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(EvalError::MatrixTooSmall { n, k });
    }
    for (row, r) in ratings.iter().enumerate() {
        if r.len() != k {
            return Err(EvalError::IncompleteMatrix {
                row,
                expected: k,
                got: r.len(),
            });
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = ratings.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| ratings.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let ss_total: f64 = ratings
        .iter()
        .flatten()
        .map(|&v| (v - grand) * (v - grand))
        .sum();
    let ss_rows: f64 = kf * row_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let ss_cols: f64 = nf * col_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);

    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (kf - 1.0);
    let ms_err = ss_err / ((nf - 1.0) * (kf - 1.0));
    let denom = ms_rows + (kf - 1.0) * ms_err + kf * (ms_cols - ms_err) / nf;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((ms_rows - ms_err) / denom)
}

/// Count of rounded errors per half-point bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub error: f64,
    pub count: usize,
}

/// Half-point error histogram plus the fraction strictly below one point.
pub fn error_histogram(pred: &[f64], gold: &[f64]) -> Result<(Vec<HistogramBin>, f64), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut counts = std::collections::BTreeMap::new();
    let mut below_one = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        let err = (p - g).abs();
        let half_steps = (err * 2.0).round() as u64;
        *counts.entry(half_steps).or_insert(0usize) += 1;
        if err < 1.0 {
            below_one += 1;
        }
    }
    let bins = counts
        .into_iter()
        .map(|(half_steps, count)| HistogramBin {
            error: half_steps as f64 / 2.0,
            count,
        })
        .collect();
    Ok((bins, below_one as f64 / pred.len() as f64))
}

/// Fractions of predictions inside the specialist band (strict, and with the
/// band widened by half a point on each side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WithinRange {
    pub rate: f64,
    pub relaxed_rate: f64,
}

/// Specialist-range agreement.
///
/// `bands[i]` holds video `i`'s specialist ratings; with `include_gold` the
/// gold rating joins the band (whether the published comparison did so is
/// ambiguous, so callers report both variants).
pub fn within_range_rate(
    pred: &[f64],
    gold: &[f64],
    bands: &[Vec<f64>],
    include_gold: bool,
) -> Result<WithinRange, EvalError> {
    if pred.len() != gold.len() || pred.len() != bands.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: gold.len().min(bands.len()),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut strict = 0usize;
    let mut relaxed = 0usize;
    for i in 0..pred.len() {
        if bands[i].is_empty() {
            return Err(EvalError::EmptyRaters(format!("index {i}")));
        }
        let mut lo = bands[i].iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = bands[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if include_gold {
            lo = lo.min(gold[i]);
            hi = hi.max(gold[i]);
        }
        if pred[i] >= lo && pred[i] <= hi {
            strict += 1;
        }
        if pred[i] >= lo - 0.5 && pred[i] <= hi + 0.5 {
            relaxed += 1;
        }
    }
    let n = pred.len() as f64;
    Ok(WithinRange {
        rate: strict as f64 / n,
        relaxed_rate: relaxed as f64 / n,
    })
}

/// Specialist ratings joined to predictions by video id.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterMatrix {
    pub videos: Vec<RaterVideo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaterVideo {
    pub video_id: String,
    pub ratings: Vec<BarsRating>,
}

/// Both within-range variants, reported side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WithinRangeReport {
    pub including_gold: WithinRange,
    pub excluding_gold: WithinRange,
}

/// LOPO evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LopoConfig {
    /// Base seed for the per-fold inner-CV shuffles.
    pub seed: u64,
    /// Folds of the inner lambda-selection CV.
    pub inner_folds: usize,
    /// Number of lambdas on each fold's grid.
    pub grid_len: usize,
}

impl Default for LopoConfig {
    fn default() -> Self {
        LopoConfig {
            seed: 0,
            inner_folds: model::INNER_CV_FOLDS,
            grid_len: model::LAMBDA_GRID_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerVideo {
    pub video_id: String,
    pub patient_id: String,
    pub gold: BarsRating,
    pub predicted_raw: f64,
    pub predicted_rounded: BarsRating,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusionRecord {
    pub video_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldLambda {
    pub patient_id: String,
    pub lambda: f64,
}

/// Everything the evaluate command reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub per_video: Vec<PerVideo>,
    pub excluded: Vec<ExclusionRecord>,
    pub mae: f64,
    /// Pearson of rounded predictions vs gold; `None` when degenerate.
    pub pearson: Option<f64>,
    /// Pearson of raw (unrounded) predictions vs gold, for diagnostics.
    pub pearson_raw: Option<f64>,
    /// ICC(2,1) of the (gold, rounded prediction) two-rater matrix.
    pub icc: Option<f64>,
    pub error_histogram: Vec<HistogramBin>,
    pub frac_err_lt_1: f64,
    pub fold_lambdas: Vec<FoldLambda>,
    pub within_range: Option<WithinRangeReport>,
}

/// Deterministic per-fold seed, independent of scheduling order.
pub fn fold_seed(base: u64, fold_index: usize) -> u64 {
    base ^ (fold_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Stable patient-id → integer mapping for grouped inner CV.
fn group_ids(rows: &[FeatureRow], indices: &[usize]) -> Vec<usize> {
    let mut ids: Vec<&str> = indices.iter().map(|&i| rows[i].patient_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    indices
        .iter()
        .map(|&i| {
            ids.binary_search(&rows[i].patient_id.as_str())
                .expect("patient id present")
        })
        .collect()
}

fn train_fold(
    rows: &[FeatureRow],
    fold: &Fold,
    cfg: &LopoConfig,
    fold_index: usize,
) -> Result<RatingModel, ModelError> {
    let features: Vec<FeatureVector> = fold.train.iter().map(|&i| rows[i].features).collect();
    let ratings: Vec<BarsRating> = fold.train.iter().map(|&i| rows[i].gold).collect();
    let groups = group_ids(rows, &fold.train);
    let settings = model::TrainSettings {
        seed: fold_seed(cfg.seed, fold_index),
        grid_len: cfg.grid_len,
        folds: cfg.inner_folds,
    };
    model::train_model(&features, &ratings, Some(&groups), &settings)
}

/// Full leave-one-patient-out run.
///
/// Folds run in parallel but the report is assembled in dataset order. A
/// fold whose training fails excludes its test videos with the reason
/// recorded; metrics cover the successful predictions only.
pub fn run_lopo(rows: &[FeatureRow], cfg: &LopoConfig) -> Result<EvaluationReport, EvalError> {
    let folds = lopo_folds(rows)?;
    let outcomes: Vec<Result<(Vec<PerVideo>, FoldLambda), Vec<ExclusionRecord>>> = folds
        .par_iter()
        .enumerate()
        .map(|(fold_index, fold)| match train_fold(rows, fold, cfg, fold_index) {
            Ok(model) => {
                let per_video = fold
                    .test
                    .iter()
                    .map(|&i| {
                        let raw = model::predict_raw(&model, &rows[i].features);
                        let rounded =
                            model::round_to_bars(raw).expect("finite model prediction");
                        PerVideo {
                            video_id: rows[i].video_id.clone(),
                            patient_id: rows[i].patient_id.clone(),
                            gold: rows[i].gold,
                            predicted_raw: raw,
                            predicted_rounded: rounded,
                        }
                    })
                    .collect();
                Ok((
                    per_video,
                    FoldLambda {
                        patient_id: fold.patient_id.clone(),
                        lambda: model.lambda,
                    },
                ))
            }
            Err(err) => Err(fold
                .test
                .iter()
                .map(|&i| ExclusionRecord {
                    video_id: rows[i].video_id.clone(),
                    reason: err.to_string(),
                })
                .collect()),
        })
        .collect();

    let mut by_video: Vec<PerVideo> = Vec::new();
    let mut excluded = Vec::new();
    let mut fold_lambdas = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((videos, lambda)) => {
                by_video.extend(videos);
                fold_lambdas.push(lambda);
            }
            Err(records) => excluded.extend(records),
        }
    }
    if by_video.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    // Restore dataset order for deterministic, manifest-aligned output.
    let order: HashMap<&str, usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.video_id.as_str(), i))
        .collect();
    by_video.sort_by_key(|v| order[v.video_id.as_str()]);

    let rounded: Vec<f64> = by_video.iter().map(|v| v.predicted_rounded.value()).collect();
    let raw: Vec<f64> = by_video.iter().map(|v| v.predicted_raw).collect();
    let gold: Vec<f64> = by_video.iter().map(|v| v.gold.value()).collect();
    let mae_value = mae(&rounded, &gold)?;
    let pearson_rounded = match pearson(&rounded, &gold) {
        Ok(v) => Some(v),
        Err(EvalError::ZeroVariance) => None,
        Err(other) => return Err(other),
    };
    let pearson_raw = match pearson(&raw, &gold) {
        Ok(v) => Some(v),
        Err(EvalError::ZeroVariance) => None,
        Err(other) => return Err(other),
    };
    let icc_value = if rounded.len() >= 2 {
        let matrix: Vec<Vec<f64>> = gold
            .iter()
            .zip(&rounded)
            .map(|(&g, &p)| vec![g, p])
            .collect();
        Some(icc(&matrix)?)
    } else {
        None
    };
    let (bins, frac_err_lt_1) = error_histogram(&rounded, &gold)?;

    Ok(EvaluationReport {
        per_video: by_video,
        excluded,
        mae: mae_value,
        pearson: pearson_rounded,
        pearson_raw,
        icc: icc_value,
        error_histogram: bins,
        frac_err_lt_1,
        fold_lambdas,
        within_range: None,
    })
}

/// Keeps only integer-labeled videos.
pub fn fullpoint_discard(rows: &[FeatureRow]) -> Result<Vec<FeatureRow>, EvalError> {
    let kept: Vec<FeatureRow> = rows
        .iter()
        .filter(|r| r.gold.is_full_point())
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(EvalError::EmptyResult);
    }
    Ok(kept)
}

/// Mean ± standard error of the LOPO metrics across label-rounding repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FullpointRoundReport {
    pub repeats: usize,
    pub mae_mean: f64,
    /// Population std over repeats divided by sqrt(repeats).
    pub mae_se: f64,
    pub pearson_mean: Option<f64>,
    pub pearson_se: Option<f64>,
    /// Number of repeats whose Pearson was defined.
    pub pearson_defined_repeats: usize,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    // A constant sequence has SE exactly 0; without this the summation-order
    // residue of mean() can fabricate a ~1e-17 spread.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt() / n.sqrt())
}

/// Random-rounding experiment: per repeat, every half-point gold label
/// rounds up or down with probability one half (integer labels consume no
/// randomness, so an integer-only dataset reduces to one plain LOPO run);
/// a full LOPO runs on the modified labels and the metric spread across
/// repeats is summarized as mean ± standard error.
pub fn fullpoint_random_round(
    rows: &[FeatureRow],
    cfg: &LopoConfig,
    seed: u64,
    repeats: usize,
) -> Result<FullpointRoundReport, EvalError> {
    if repeats == 0 {
        return Err(EvalError::InvalidRepeats);
    }
    let mut maes = Vec::with_capacity(repeats);
    let mut pearsons = Vec::new();
    // The rounded labels are the only input that varies across repeats, so
    // LOPO results are memoized on them; an integer-only dataset costs one
    // run no matter how many repeats were asked for.
    let mut seen: HashMap<Vec<u64>, (f64, Option<f64>)> = HashMap::new();
    for repeat in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(repeat as u64);
        let mut rounded_rows = rows.to_vec();
        for row in &mut rounded_rows {
            if !row.gold.is_full_point() {
                let v = row.gold.value();
                let up = rng.gen_bool(0.5);
                let new = if up { v + 0.5 } else { v - 0.5 };
                row.gold = BarsRating::new(new).expect("half point stays on scale");
            }
        }
        let key: Vec<u64> = rounded_rows.iter().map(|r| r.gold.value().to_bits()).collect();
        let (mae, pearson) = match seen.get(&key) {
            Some(&hit) => hit,
            None => {
                let report = run_lopo(&rounded_rows, cfg)?;
                let out = (report.mae, report.pearson);
                seen.insert(key, out);
                out
            }
        };
        maes.push(mae);
        if let Some(p) = pearson {
            pearsons.push(p);
        }
    }
    let (mae_mean, mae_se) = mean_and_se(&maes);
    let (pearson_mean, pearson_se) = if pearsons.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_and_se(&pearsons);
        (Some(m), Some(s))
    };
    Ok(FullpointRoundReport {
        repeats,
        mae_mean,
        mae_se,
        pearson_mean,
        pearson_se,
        pearson_defined_repeats: pearsons.len(),
    })
}
