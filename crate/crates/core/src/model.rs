//! Severity regression: standardization, LASSO, lambda selection, rounding.
//!
//! Features are standardized to zero mean and unit spread, a LASSO linear
//! model is fit by cyclic coordinate descent, the regularization strength
//! comes from patient-grouped inner cross-validation, and raw predictions
//! are rounded onto the half-point rating scale.

use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::signal::BarsRating;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Convergence tolerance on the largest per-sweep coefficient change.
pub const LASSO_TOLERANCE: f64 = 1e-8;
/// Sweep budget before a fit is declared non-convergent.
pub const LASSO_MAX_SWEEPS: usize = 10_000;
/// Number of points on the automatic lambda grid.
pub const LAMBDA_GRID_LEN: usize = 50;
/// The grid spans `lambda_max` down to this multiple of it, log-spaced.
pub const LAMBDA_GRID_FLOOR: f64 = 1e-4;
/// Folds for the inner lambda-selection cross-validation.
pub const INNER_CV_FOLDS: usize = 5;

/// Trained rating model, serialized as JSON for the predict command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingModel {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub feature_names: Vec<String>,
}

impl RatingModel {
    /// Checks dimensions, the canonical feature-name list, positive scales,
    /// and finiteness. Run after deserializing.
    pub fn validate(&self) -> Result<(), ModelError> {
        let p = FEATURE_NAMES.len();
        if self.feature_names.len() != p
            || self.means.len() != p
            || self.scales.len() != p
            || self.weights.len() != p
        {
            return Err(ModelError::DimensionMismatch {
                expected: p,
                got: self.feature_names.len().max(self.means.len()),
            });
        }
        for (index, (got, expected)) in
            self.feature_names.iter().zip(FEATURE_NAMES).enumerate()
        {
            if got != expected {
                return Err(ModelError::FeatureNameMismatch {
                    index,
                    expected,
                    got: got.clone(),
                });
            }
        }
        for (index, &s) in self.scales.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(ModelError::InvalidScale { index, value: s });
            }
        }
        if !self.intercept.is_finite()
            || !self.lambda.is_finite()
            || self.lambda < 0.0
            || self.weights.iter().any(|w| !w.is_finite())
            || self.means.iter().any(|m| !m.is_finite())
        {
            return Err(ModelError::NonFiniteParameter);
        }
        Ok(())
    }
}

/// Per-column standardization statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    /// Population standard deviations; constant columns get 1.
    pub scales: Vec<f64>,
    pub constant: Vec<bool>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("TooFewRows: {rows} rows, need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("TooFewGroups: {groups} groups cannot fill {folds} folds")]
    TooFewGroups { groups: usize, folds: usize },
    #[error("DimensionMismatch: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("InvalidLambda: lambda must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("InvalidGrid: grid must be non-empty, non-negative, sorted descending")]
    InvalidGrid,
    #[error("NoConvergence: tolerance not reached after {sweeps} sweeps")]
    NoConvergence { sweeps: usize, last: Box<LassoFit> },
    #[error("NonFinite: cannot round {0}")]
    NonFinite(f64),
    #[error("FeatureNameMismatch: column {index} is {got:?}, expected {expected:?}")]
    FeatureNameMismatch {
        index: usize,
        expected: &'static str,
        got: String,
    },
    #[error("InvalidScale: scale {index} is {value}, must be > 0")]
    InvalidScale { index: usize, value: f64 },
    #[error("NonFiniteParameter: model contains a non-finite parameter")]
    NonFiniteParameter,
}

/// Per-column mean and population std over the rows; constant columns are
/// flagged and given scale 1 so dividing by the scale stays harmless.
pub fn standardize_fit(x: &[Vec<f64>]) -> Result<Standardization, ModelError> {
    let n = x.len();
    if n < 2 {
        return Err(ModelError::TooFewRows { rows: n, needed: 2 });
    }
    let p = x[0].len();
    // Equality, not variance, decides constancy: a column of identical
    // values must standardize to exact zeros (so its weight stays pinned),
    // and the accumulated mean of e.g. thirty 7.7s is off by an ulp.
    let mut constant = vec![true; p];
    for row in x {
        for (j, c) in constant.iter_mut().enumerate() {
            if row[j] != x[0][j] {
                *c = false;
            }
        }
    }
    let mut means = vec![0.0; p];
    for row in x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut scales = vec![0.0; p];
    for row in x {
        for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for j in 0..p {
        scales[j] = (scales[j] / n as f64).sqrt();
        if scales[j] == 0.0 {
            constant[j] = true;
        }
        if constant[j] {
            means[j] = x[0][j];
            scales[j] = 1.0;
        }
    }
    Ok(Standardization {
        means,
        scales,
        constant,
    })
}

/// `(x - mean) / scale` per column.
pub fn standardize_apply(stats: &Standardization, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            row.iter()
                .zip(&stats.means)
                .zip(&stats.scales)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect()
}

/// Coordinate-descent result. `converged` is false only when the sweep
/// budget ran out before reaching tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

fn columns_of(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = x.first().map_or(0, Vec::len);
    (0..p).map(|j| x.iter().map(|row| row[j]).collect()).collect()
}

/// `(1/2n)·Σ(y − Xw − b)² + lambda·Σ|w|`, the quantity the fit minimizes.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], fit: &LassoFit, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let pred: f64 =
                fit.intercept + row.iter().zip(&fit.weights).map(|(v, w)| v * w).sum::<f64>();
            (yi - pred) * (yi - pred)
        })
        .sum();
    sse / (2.0 * n) + lambda * fit.weights.iter().map(|w| w.abs()).sum::<f64>()
}

/// Sufficient statistics for coordinate descent: with the intercept fixed
/// at the response mean, every update needs only `x_jᵀ(y − ȳ)` and the Gram
/// matrix `XᵀX`, so one coordinate move costs O(p) instead of O(n). Built
/// once and shared across a whole lambda path.
struct GramCache {
    /// `x_jᵀ(y − ȳ) / n` per column, divided element-wise so the zero-start
    /// correlation equals [`lambda_max`]'s value bit for bit.
    c_over_n: Vec<f64>,
    /// Row-major `p × p` Gram matrix `XᵀX`.
    gram: Vec<f64>,
    /// `x_jᵀx_j / n` per column.
    col_sq: Vec<f64>,
    /// `1 / col_sq` (0 for constant columns, which never divide). Serving the
    /// update as a multiply keeps a division off the sweep's critical path; a
    /// zero threshold still maps to an exact zero weight.
    inv_col_sq: Vec<f64>,
    /// `1 / n`; multiplying `q` by it costs far less than dividing, and `q`
    /// is exactly zero in the full-shrinkage case, so exactness is kept.
    inv_n: f64,
    intercept: f64,
}

impl GramCache {
    fn new(cols: &[Vec<f64>], y: &[f64]) -> GramCache {
        let nf = y.len() as f64;
        let p = cols.len();
        let intercept = y.iter().sum::<f64>() / nf;
        let c_over_n = cols
            .iter()
            .map(|col| {
                col.iter().zip(y).map(|(v, &yi)| v * (yi - intercept)).sum::<f64>() / nf
            })
            .collect();
        let mut gram = vec![0.0f64; p * p];
        for j in 0..p {
            for k in j..p {
                let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                gram[j * p + k] = dot;
                gram[k * p + j] = dot;
            }
        }
        let col_sq: Vec<f64> = (0..p).map(|j| gram[j * p + j] / nf).collect();
        let inv_col_sq = col_sq
            .iter()
            .map(|&s| if s == 0.0 { 0.0 } else { 1.0 / s })
            .collect();
        GramCache {
            c_over_n,
            gram,
            col_sq,
            inv_col_sq,
            inv_n: 1.0 / nf,
            intercept,
        }
    }
}

/// One pass of coordinate updates over `over`; returns the largest weight
/// change. Generic over the index iterator so the all-coordinates pass
/// monomorphizes to a plain `0..p` loop with the bounds checks lifted by the
/// re-sliced locals.
fn sweep_over(
    cache: &GramCache,
    lambda: f64,
    over: impl Iterator<Item = usize>,
    weights: &mut [f64],
    q: &mut [f64],
) -> f64 {
    let p = weights.len();
    let c_over_n = &cache.c_over_n[..p];
    let col_sq = &cache.col_sq[..p];
    let inv_col_sq = &cache.inv_col_sq[..p];
    let inv_n = cache.inv_n;
    let q = &mut q[..p];
    let mut max_delta = 0.0f64;
    for j in over {
        if col_sq[j] == 0.0 {
            continue; // constant column: weight pinned at 0
        }
        let rho = c_over_n[j] - q[j] * inv_n + weights[j] * col_sq[j];
        let updated = soft_threshold(rho, lambda) * inv_col_sq[j];
        let delta = updated - weights[j];
        if delta != 0.0 {
            let row = &cache.gram[j * p..(j + 1) * p];
            for (qk, g) in q.iter_mut().zip(row) {
                *qk += delta * g;
            }
            weights[j] = updated;
            max_delta = max_delta.max(delta.abs());
        }
    }
    max_delta
}

/// Core coordinate descent with warm-start weights. The correlation term
/// `x_jᵀr / n` is served from the cache as `c_j/n − (XᵀXw)_j/n`, algebraically
/// the classic residual-update rule. `trace`, when given, records the
/// objective after every sweep.
fn descend(
    cols: &[Vec<f64>],
    y: &[f64],
    cache: &GramCache,
    lambda: f64,
    mut weights: Vec<f64>,
    mut trace: Option<&mut Vec<f64>>,
) -> LassoFit {
    let n = y.len();
    let nf = n as f64;
    let p = cols.len();
    let intercept = cache.intercept;

    // q[j] = (XᵀX w)_j, kept current as weights move.
    let mut q: Vec<f64> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| cache.gram[j * p + k] * weights[k])
                .sum()
        })
        .collect();

    let mut sweeps = 0;
    let mut converged = false;
    let record = |weights: &[f64], trace: &mut Option<&mut Vec<f64>>| {
        if let Some(trace) = trace.as_deref_mut() {
            // O(np) objective recomputation; only test paths ask for this.
            let sse: f64 = (0..n)
                .map(|i| {
                    let pred: f64 =
                        cols.iter().zip(weights).map(|(col, w)| col[i] * w).sum();
                    let r = y[i] - intercept - pred;
                    r * r
                })
                .sum();
            trace.push(sse / (2.0 * nf) + lambda * weights.iter().map(|w| w.abs()).sum::<f64>());
        }
    };

    let mut active: Vec<usize> = Vec::with_capacity(p);
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let full_delta = sweep_over(cache, lambda, 0..p, &mut weights, &mut q);
        record(&weights, &mut trace);
        if full_delta < LASSO_TOLERANCE {
            converged = true;
            break;
        }
        // Until the support changes again, only nonzero coordinates can
        // move: grind those down first, then let a full sweep re-check
        // every stationarity condition before declaring convergence.
        active.clear();
        active.extend((0..p).filter(|&j| weights[j] != 0.0));
        if active.is_empty() || active.len() == p {
            continue;
        }
        while sweeps < LASSO_MAX_SWEEPS {
            sweeps += 1;
            let delta =
                sweep_over(cache, lambda, active.iter().copied(), &mut weights, &mut q);
            record(&weights, &mut trace);
            if delta < LASSO_TOLERANCE {
                break;
            }
        }
    }
    LassoFit {
        weights,
        intercept,
        sweeps,
        converged,
    }
}

fn check_matrix(x: &[Vec<f64>], y: &[f64]) -> Result<usize, ModelError> {
    if x.is_empty() {
        return Err(ModelError::TooFewRows { rows: 0, needed: 1 });
    }
    if x.len() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let p = x[0].len();
    if let Some(bad) = x.iter().find(|row| row.len() != p) {
        return Err(ModelError::DimensionMismatch {
            expected: p,
            got: bad.len(),
        });
    }
    Ok(p)
}

/// LASSO on standardized rows. Errors with [`ModelError::NoConvergence`]
/// (carrying the last iterate) if the sweep budget runs out.
pub fn lasso_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LassoFit, ModelError> {
    let p = check_matrix(x, y)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ModelError::InvalidLambda(lambda));
    }
    let cols = columns_of(x);
    let cache = GramCache::new(&cols, y);
    let fit = descend(&cols, y, &cache, lambda, vec![0.0; p], None);
    if fit.converged {
        Ok(fit)
    } else {
        Err(ModelError::NoConvergence {
            sweeps: fit.sweeps,
            last: Box::new(fit),
        })
    }
}

/// Like [`lasso_fit`] but records the objective after each sweep.
pub fn lasso_fit_traced(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
) -> Result<(LassoFit, Vec<f64>), ModelError> {
    let p = check_matrix(x, y)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ModelError::InvalidLambda(lambda));
    }
    let mut trace = Vec::new();
    let cols = columns_of(x);
    let cache = GramCache::new(&cols, y);
    let fit = descend(&cols, y, &cache, lambda, vec![0.0; p], Some(&mut trace));
    Ok((fit, trace))
}

/// Fits the whole descending grid with warm starts, returning one fit per
/// grid value. Non-convergent fits are kept as-is (their iterate still warm-
/// starts the next, smaller lambda).
pub fn lasso_path(x: &[Vec<f64>], y: &[f64], grid: &[f64]) -> Result<Vec<LassoFit>, ModelError> {
    let p = check_matrix(x, y)?;
    validate_grid(grid)?;
    let cols = columns_of(x);
    let cache = GramCache::new(&cols, y);
    let mut fits = Vec::with_capacity(grid.len());
    let mut warm = vec![0.0; p];
    for &lambda in grid {
        let fit = descend(&cols, y, &cache, lambda, warm, None);
        warm = fit.weights.clone();
        fits.push(fit);
    }
    Ok(fits)
}

/// Smallest lambda at which every weight is exactly zero:
/// `max_j |x_jᵀ(y − ȳ)| / n`.
pub fn lambda_max(x: &[Vec<f64>], y: &[f64]) -> Result<f64, ModelError> {
    check_matrix(x, y)?;
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    Ok(columns_of(x)
        .iter()
        .map(|col| {
            col.iter()
                .zip(y)
                .map(|(v, &yi)| v * (yi - y_mean))
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0f64, f64::max))
}

/// Log-spaced descending grid from `lambda_max` to
/// `LAMBDA_GRID_FLOOR · lambda_max`. A zero `lambda_max` collapses to `[0]`.
pub fn lambda_grid(lambda_max: f64, len: usize) -> Vec<f64> {
    if lambda_max <= 0.0 || len <= 1 {
        return vec![lambda_max.max(0.0)];
    }
    let span = LAMBDA_GRID_FLOOR.ln();
    (0..len)
        .map(|i| lambda_max * (span * i as f64 / (len - 1) as f64).exp())
        .collect()
}

fn validate_grid(grid: &[f64]) -> Result<(), ModelError> {
    if grid.is_empty()
        || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0))
        || grid.windows(2).any(|w| w[0] < w[1])
    {
        return Err(ModelError::InvalidGrid);
    }
    Ok(())
}

/// Deterministic fold labels for `n` rows. With `groups`, whole groups are
/// shuffled and dealt round-robin so no group straddles a fold boundary.
pub fn fold_assignment(
    n: usize,
    k_folds: usize,
    seed: u64,
    groups: Option<&[usize]>,
) -> Result<Vec<usize>, ModelError> {
    if k_folds < 2 || n < k_folds {
        return Err(ModelError::TooFewRows {
            rows: n,
            needed: k_folds.max(2),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match groups {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut fold = vec![0; n];
            for (i, &row) in order.iter().enumerate() {
                fold[row] = i % k_folds;
            }
            Ok(fold)
        }
        Some(g) => {
            if g.len() != n {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    got: g.len(),
                });
            }
            let mut ids: Vec<usize> = g.to_vec();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < k_folds {
                return Err(ModelError::TooFewGroups {
                    groups: ids.len(),
                    folds: k_folds,
                });
            }
            ids.shuffle(&mut rng);
            let fold_of = |id: usize| {
                ids.iter().position(|&v| v == id).expect("id present") % k_folds
            };
            Ok(g.iter().map(|&id| fold_of(id)).collect())
        }
    }
}

/// Picks the grid lambda minimizing mean validation MSE over k folds.
///
/// Takes raw (unstandardized) rows: each fold standardizes on its own
/// training split so validation rows never leak into the statistics. Ties
/// resolve to the larger lambda. With `groups` (e.g. patient ids mapped to
/// integers), rows of one group always share a fold.
pub fn select_lambda(
    x: &[Vec<f64>],
    y: &[f64],
    grid: &[f64],
    k_folds: usize,
    seed: u64,
    groups: Option<&[usize]>,
) -> Result<f64, ModelError> {
    let n = x.len();
    check_matrix(x, y)?;
    validate_grid(grid)?;
    let fold = fold_assignment(n, k_folds, seed, groups)?;

    let mut mse_sums = vec![0.0; grid.len()];
    for f in 0..k_folds {
        let train_idx: Vec<usize> = (0..n).filter(|i| fold[*i] != f).collect();
        let val_idx: Vec<usize> = (0..n).filter(|i| fold[*i] == f).collect();
        if val_idx.is_empty() {
            continue;
        }
        let x_train: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
        let y_train: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
        let stats = standardize_fit(&x_train)?;
        let x_train_std = standardize_apply(&stats, &x_train);
        let x_val_std = standardize_apply(
            &stats,
            &val_idx.iter().map(|&i| x[i].clone()).collect::<Vec<_>>(),
        );
        let fits = lasso_path(&x_train_std, &y_train, grid)?;
        for (g, fit) in fits.iter().enumerate() {
            let se: f64 = x_val_std
                .iter()
                .zip(&val_idx)
                .map(|(row, &i)| {
                    let pred: f64 = fit.intercept
                        + row.iter().zip(&fit.weights).map(|(v, w)| v * w).sum::<f64>();
                    (y[i] - pred) * (y[i] - pred)
                })
                .sum();
            mse_sums[g] += se / val_idx.len() as f64;
        }
    }

    let mut best = 0usize;
    for g in 1..grid.len() {
        if mse_sums[g] < mse_sums[best] {
            best = g; // strict: ties keep the earlier (larger) lambda
        }
    }
    Ok(grid[best])
}

/// Knobs for [`train_model`]; defaults match the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    /// Seed for the inner-CV fold shuffle.
    pub seed: u64,
    /// Number of lambdas on the automatic grid.
    pub grid_len: usize,
    /// Inner cross-validation folds (capped at the group count).
    pub folds: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            seed: 0,
            grid_len: LAMBDA_GRID_LEN,
            folds: INNER_CV_FOLDS,
        }
    }
}

impl TrainSettings {
    pub fn with_seed(seed: u64) -> Self {
        TrainSettings {
            seed,
            ..TrainSettings::default()
        }
    }
}

/// Full training recipe: standardize, build the automatic grid, pick lambda
/// by grouped inner CV, refit on everything at the chosen strength.
pub fn train_model(
    features: &[FeatureVector],
    ratings: &[BarsRating],
    groups: Option<&[usize]>,
    settings: &TrainSettings,
) -> Result<RatingModel, ModelError> {
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
    let y: Vec<f64> = ratings.iter().map(|r| r.value()).collect();
    check_matrix(&x, &y)?;
    let stats = standardize_fit(&x)?;
    let x_std = standardize_apply(&stats, &x);
    let grid = lambda_grid(lambda_max(&x_std, &y)?, settings.grid_len);
    // Grouped CV cannot have more folds than groups; small cohorts cap the
    // fold count rather than failing outright.
    let k_folds = match groups {
        Some(g) => {
            let mut ids = g.to_vec();
            ids.sort_unstable();
            ids.dedup();
            settings.folds.min(ids.len())
        }
        None => settings.folds.min(x.len()),
    };
    let lambda = select_lambda(&x, &y, &grid, k_folds, settings.seed, groups)?;
    let fit = lasso_fit(&x_std, &y, lambda)?;
    Ok(RatingModel {
        means: stats.means,
        scales: stats.scales,
        weights: fit.weights,
        intercept: fit.intercept,
        lambda,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    })
}

/// Unrounded prediction: `intercept + Σ w_j · (f_j − mean_j) / scale_j`.
pub fn predict_raw(model: &RatingModel, features: &FeatureVector) -> f64 {
    let f = features.to_array();
    model.intercept
        + model
            .weights
            .iter()
            .zip(&f)
            .zip(&model.means)
            .zip(&model.scales)
            .map(|(((w, v), m), s)| w * (v - m) / s)
            .sum::<f64>()
}

/// Nearest half point, ties rounding up, clamped to the rating range.
pub fn round_to_bars(raw: f64) -> Result<BarsRating, ModelError> {
    if !raw.is_finite() {
        return Err(ModelError::NonFinite(raw));
    }
    let half_steps = (raw * 2.0 + 0.5).floor().clamp(0.0, 8.0);
    Ok(BarsRating::new(half_steps / 2.0).expect("clamped half point is valid"))
}
