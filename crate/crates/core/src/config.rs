//! Run configuration: a flat key=value file plus programmatic overrides.
//!
//! Precedence is defaults < config file < command-line flags. The file path
//! itself can come from a `--config` flag or the `ATAXIA_RATER_CONFIG`
//! environment variable. Keeping every tunable in one artifact makes a run
//! reproducible from the config file and the seed alone.

use crate::model::{INNER_CV_FOLDS, LAMBDA_GRID_LEN};
use crate::segment::{DEFAULT_BWD_FRAC, DEFAULT_FWD_FRAC};
use crate::stabilize::DEFAULT_MIN_POINTS;
use serde::Serialize;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const CONFIG_ENV_VAR: &str = "ATAXIA_RATER_CONFIG";

pub const DEFAULT_CONF_FLOOR: f64 = 0.2;
pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_TOP_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Every tunable the pipeline and model-selection code accept.
///
/// Serialized into evaluation reports so a report records the settings that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// Hysteresis rising threshold as a fraction of the endpoint range.
    pub fwd_frac: f64,
    /// Hysteresis falling threshold as a fraction of the endpoint range.
    pub bwd_frac: f64,
    /// Flow-smoothing window in frames (odd).
    pub window: usize,
    /// Fraction of point trajectories kept as the fastest-moving region.
    pub top_fraction: f64,
    /// Keypoint confidence below which a sample is interpolated over.
    pub conf_floor: f64,
    /// Minimum usable background correspondences per frame gap; fewer and
    /// stabilization backs off to pass-through.
    pub min_points: usize,
    /// Number of lambdas on the regularization grid.
    pub lambda_grid: usize,
    /// Inner cross-validation folds for lambda selection.
    pub folds: usize,
    /// Base RNG seed for fold shuffling and rounding experiments.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fwd_frac: DEFAULT_FWD_FRAC,
            bwd_frac: DEFAULT_BWD_FRAC,
            window: DEFAULT_WINDOW,
            top_fraction: DEFAULT_TOP_FRACTION,
            conf_floor: DEFAULT_CONF_FLOOR,
            min_points: DEFAULT_MIN_POINTS,
            lambda_grid: LAMBDA_GRID_LEN,
            folds: INNER_CV_FOLDS,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `path` if given, else with the file named by
    /// `ATAXIA_RATER_CONFIG` if set. Always validated.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let env_path = std::env::var_os(CONFIG_ENV_VAR).map(std::path::PathBuf::from);
        if let Some(p) = path.or(env_path.as_deref()) {
            config.apply_file(p)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Overlays `key = value` lines from `path`. `#` starts a comment;
    /// blank lines are skipped. Unknown keys are errors, not warnings, so a
    /// typo cannot silently run with defaults.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::File {
            path: path.display().to_string(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let parse_err = |message: String| ConfigError::Parse {
                path: path.display().to_string(),
                line: i as u64 + 1,
                message,
            };
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| parse_err(format!("`{stripped}` is not key=value")))?;
            self.set(key.trim(), value.trim()).map_err(parse_err)?;
        }
        Ok(())
    }

    /// Sets one key from its text form; shared by the file parser and flag
    /// overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("{key} value `{value}` is not {kind}"))
        }
        match key {
            "fwd_frac" => self.fwd_frac = num(key, value, "a number")?,
            "bwd_frac" => self.bwd_frac = num(key, value, "a number")?,
            "window" => self.window = num(key, value, "a positive integer")?,
            "top_fraction" => self.top_fraction = num(key, value, "a number")?,
            "conf_floor" => self.conf_floor = num(key, value, "a number")?,
            "min_points" => self.min_points = num(key, value, "a positive integer")?,
            "lambda_grid" => self.lambda_grid = num(key, value, "a positive integer")?,
            "folds" => self.folds = num(key, value, "a positive integer")?,
            "seed" => self.seed = num(key, value, "an unsigned integer")?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if !(self.fwd_frac.is_finite() && self.bwd_frac.is_finite()) {
            return fail("thresholds must be finite".into());
        }
        if !(0.0 < self.bwd_frac && self.bwd_frac < self.fwd_frac && self.fwd_frac < 1.0) {
            return fail(format!(
                "need 0 < bwd_frac < fwd_frac < 1, got bwd_frac={} fwd_frac={}",
                self.bwd_frac, self.fwd_frac
            ));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return fail(format!("window must be odd and positive, got {}", self.window));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return fail(format!("top_fraction must be in (0, 1], got {}", self.top_fraction));
        }
        if !(0.0..=1.0).contains(&self.conf_floor) {
            return fail(format!("conf_floor must be in [0, 1], got {}", self.conf_floor));
        }
        if self.min_points == 0 {
            return fail("min_points must be at least 1".into());
        }
        if self.lambda_grid == 0 {
            return fail("lambda_grid must be at least 1".into());
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn defaults_validate() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.fwd_frac, 0.6);
        assert_eq!(config.bwd_frac, 0.4);
        assert_eq!(config.window, 5);
        assert_eq!(config.top_fraction, 0.05);
        assert_eq!(config.conf_floor, 0.2);
        assert_eq!(config.min_points, 2);
        assert_eq!(config.lambda_grid, 50);
        assert_eq!(config.folds, 5);
        assert_eq!(config.seed, 0);
    }

    #[test]
    fn file_overlays_defaults() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# run settings\nseed = 42\nwindow=7\n\nconf_floor = 0.3 # gate\n",
        )
        .unwrap();
        let config = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.window, 7);
        assert_eq!(config.conf_floor, 0.3);
        assert_eq!(config.fwd_frac, 0.6);
    }

    #[test]
    fn unknown_key_fails_with_line() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "seed = 1\nwibble = 2\n").unwrap();
        let err = RunConfig::load(Some(&path)).unwrap_err();
        let text = err.to_string();
        assert!(text.contains(":2:"), "{text}");
        assert!(text.contains("wibble"), "{text}");
    }

    #[test]
    fn malformed_line_fails() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "just words\n").unwrap();
        assert!(RunConfig::load(Some(&path)).unwrap_err().to_string().contains("key=value"));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = RunConfig::default();
        c.window = 4;
        assert!(c.validate().is_err());
        c = RunConfig::default();
        c.fwd_frac = 0.3; // below bwd_frac
        assert!(c.validate().is_err());
        c = RunConfig::default();
        c.top_fraction = 0.0;
        assert!(c.validate().is_err());
        c = RunConfig::default();
        c.folds = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn set_parses_each_key() {
        let mut c = RunConfig::default();
        c.set("fwd_frac", "0.7").unwrap();
        c.set("bwd_frac", "0.35").unwrap();
        c.set("top_fraction", "0.1").unwrap();
        c.set("min_points", "3").unwrap();
        c.set("lambda_grid", "20").unwrap();
        c.set("folds", "4").unwrap();
        assert_eq!(c.fwd_frac, 0.7);
        assert_eq!(c.min_points, 3);
        assert!(c.set("seed", "-1").is_err());
        assert!(c.set("window", "2.5").is_err());
    }
}
