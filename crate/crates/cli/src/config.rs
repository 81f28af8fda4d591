//! Plain-text `key = value` configuration shared by every subcommand.
//!
//! Layers, lowest first: built-in defaults, the config file (`--config` or
//! `MIDTERM_EPF_CONFIG`), `--set key=value` overrides, then explicit flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use epf_core::backtest::BacktestConfig;
use epf_core::fundamentals::{default_plants, derive_bounds, BoundGroup, BoundsMode, CoefficientBounds, Interval};
use epf_core::ingest::TzMode;
use serde::Serialize;
use thiserror::Error;

pub const CONFIG_ENV: &str = "MIDTERM_EPF_CONFIG";
pub const THREADS_ENV: &str = "MIDTERM_EPF_THREADS";

/// Every accepted key. `bounds.<group>` keys are listed separately.
pub const KEYS: &[&str] = &[
    "hourly",
    "futures",
    "data",
    "seasonal",
    "records",
    "out",
    "tz",
    "seed",
    "bounds",
    "models",
    "horizons",
    "eval_start",
    "eval_end",
    "window_rows",
    "step_days",
    "threads",
    "solver.alpha",
    "solver.grid_size",
    "solver.grid_ratio",
    "solver.tol",
    "solver.max_sweeps",
    "solver.unpenalized_endpoint",
    "synthetic.years",
    "synthetic.zero_noise",
];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Line { source_name: String, line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundsSetting {
    #[default]
    Table4,
    AppendixB,
    Custom,
}

impl FromStr for BoundsSetting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("custom") {
            return Ok(BoundsSetting::Custom);
        }
        match s.parse::<BoundsMode>()? {
            BoundsMode::Table4 => Ok(BoundsSetting::Table4),
            BoundsMode::AppendixB => Ok(BoundsSetting::AppendixB),
        }
    }
}

/// Resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub hourly: Option<PathBuf>,
    pub futures: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub seasonal: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tz: TzMode,
    pub bounds: BoundsSetting,
    /// Per-group overrides, only legal with `bounds = custom`.
    pub custom_bounds: Vec<(BoundGroup, Interval)>,
    pub backtest: BacktestConfig,
    /// Whether `threads` was set explicitly (otherwise the environment fallback applies).
    #[serde(skip)]
    pub threads_set: bool,
    pub synthetic_years: u32,
    pub zero_noise: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            hourly: None,
            futures: None,
            data: None,
            seasonal: None,
            records: None,
            out: None,
            tz: TzMode::Local,
            bounds: BoundsSetting::Table4,
            custom_bounds: Vec::new(),
            backtest: BacktestConfig::default(),
            threads_set: false,
            synthetic_years: 5,
            zero_noise: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{key}`: cannot parse `{value}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{key}`: expected true|false, got `{value}`")),
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_bound(key: &str, value: &str) -> Result<f64, String> {
    match value.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        v => parse(key, v),
    }
}

/// `lower,upper`, with `inf`/`-inf` allowed.
fn parse_interval(key: &str, value: &str) -> Result<Interval, String> {
    let parts: Vec<&str> = value.split(',').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(format!("`{key}`: expected `lower,upper`, got `{value}`"));
    };
    let interval = Interval::new(parse_bound(key, lo)?, parse_bound(key, hi)?);
    if !(interval.lower <= interval.upper) {
        return Err(format!("`{key}`: lower bound exceeds upper bound"));
    }
    Ok(interval)
}

impl Config {
    /// Applies one setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        let bt = &mut self.backtest;
        match key {
            "hourly" => self.hourly = Some(value.into()),
            "futures" => self.futures = Some(value.into()),
            "data" => self.data = Some(value.into()),
            "seasonal" => self.seasonal = Some(value.into()),
            "records" => self.records = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "tz" => self.tz = parse(key, value)?,
            "seed" => bt.seed = parse(key, value)?,
            "bounds" => self.bounds = parse(key, value)?,
            "models" => bt.models = parse_list(key, value)?,
            "horizons" => bt.horizons = parse_list(key, value)?,
            "eval_start" => bt.eval_start = parse::<NaiveDate>(key, value)?,
            "eval_end" => bt.eval_end = parse::<NaiveDate>(key, value)?,
            "window_rows" => bt.window_rows = parse(key, value)?,
            "step_days" => bt.step_days = parse(key, value)?,
            "threads" => {
                bt.threads = parse(key, value)?;
                self.threads_set = true;
            }
            "solver.alpha" => bt.solver.alpha = parse(key, value)?,
            "solver.grid_size" => bt.solver.grid_size = parse(key, value)?,
            "solver.grid_ratio" => bt.solver.grid_ratio = parse(key, value)?,
            "solver.tol" => bt.solver.tol = parse(key, value)?,
            "solver.max_sweeps" => bt.solver.max_sweeps = parse(key, value)?,
            "solver.unpenalized_endpoint" => bt.solver.unpenalized_endpoint = parse_bool(key, value)?,
            "synthetic.years" => self.synthetic_years = parse(key, value)?,
            "synthetic.zero_noise" => self.zero_noise = parse_bool(key, value)?,
            _ => match key.strip_prefix("bounds.") {
                Some(group) => {
                    let group: BoundGroup = group.parse().map_err(|e| format!("`{key}`: {e}"))?;
                    if group == BoundGroup::Calendar {
                        return Err(format!("`{key}`: calendar dummies are always unconstrained"));
                    }
                    let interval = parse_interval(key, value)?;
                    self.custom_bounds.retain(|(g, _)| *g != group);
                    self.custom_bounds.push((group, interval));
                }
                None => return Err(format!("unknown key `{key}`")),
            },
        }
        Ok(())
    }

    /// Applies a whole file's worth of `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Line { source_name: source_name.to_string(), line: i + 1, message };
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("expected `key = value`, got `{line}`")));
            };
            self.set(key.trim(), value).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `--set key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for (i, o) in overrides.iter().enumerate() {
            let err = |message: String| ConfigError::Line { source_name: "--set".into(), line: i + 1, message };
            let (key, value) = o.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{o}`")))?;
            self.set(key.trim(), value).map_err(err)?;
        }
        Ok(())
    }

    /// Uses `MIDTERM_EPF_THREADS` when no layer set `threads`.
    pub fn apply_thread_env(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if self.threads_set {
            return Ok(());
        }
        if let Some(v) = value {
            self.backtest.threads = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{THREADS_ENV}: expected a thread count, got `{v}`")))?;
        }
        Ok(())
    }

    /// Resolves the coefficient boxes and stores them in the backtest config.
    pub fn resolve_bounds(&mut self) -> Result<(), ConfigError> {
        if self.bounds != BoundsSetting::Custom && !self.custom_bounds.is_empty() {
            return Err(ConfigError::Invalid(format!(
                "`bounds.{}` is only allowed with `bounds = custom`",
                self.custom_bounds[0].0
            )));
        }
        let mode = match self.bounds {
            BoundsSetting::AppendixB => BoundsMode::AppendixB,
            _ => BoundsMode::Table4,
        };
        let mut bounds: CoefficientBounds =
            derive_bounds(&default_plants(), mode).map_err(|e| ConfigError::Invalid(format!("bounds: {e}")))?;
        for &(g, interval) in &self.custom_bounds {
            bounds.set(g, interval).map_err(|e| ConfigError::Invalid(format!("bounds: {e}")))?;
        }
        self.backtest.bounds = bounds;
        Ok(())
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        self.resolve_bounds()?;
        self.backtest.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.synthetic_years < 4 {
            return Err(ConfigError::Invalid(format!("synthetic.years must be at least 4, got {}", self.synthetic_years)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_documented_key() {
        let text = "\
# comment
hourly = a.csv
futures = b.csv
data = d
seasonal = s
records = r
out = o
tz = utc
seed = 7
bounds = appendixB
models = naive, constr
horizons = 1,30
eval_start = 2019-01-01
eval_end = 2019-06-30
window_rows = 730
step_days = 2
threads = 3
solver.alpha = 0.9
solver.grid_size = 50
solver.grid_ratio = 0.001
solver.tol = 1e-6
solver.max_sweeps = 500
solver.unpenalized_endpoint = false
synthetic.years = 6
synthetic.zero_noise = true
";
        let mut c = Config::default();
        c.apply_text(text, "test").unwrap();
        c.validate().unwrap();
        assert_eq!(c.tz, TzMode::Utc);
        assert_eq!(c.backtest.models, ["naive", "constr"]);
        assert_eq!(c.backtest.horizons, [1, 30]);
        assert_eq!(c.backtest.threads, 3);
        assert!(!c.backtest.solver.unpenalized_endpoint);
        assert_eq!(c.backtest.bounds, derive_bounds(&default_plants(), BoundsMode::AppendixB).unwrap());
        assert_eq!(c.synthetic_years, 6);
        assert_eq!(c.out.as_deref(), Some(Path::new("o")));
        // Every key in the text is documented.
        for line in text.lines().filter(|l| l.contains('=')) {
            let key = line.split('=').next().unwrap().trim();
            assert!(KEYS.contains(&key), "{key}");
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let mut c = Config::default();
        let err = c.apply_text("seed = 1\nsolver.lambda = 3\n", "cfg.txt").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Line { source_name: "cfg.txt".into(), line: 2, message: "unknown key `solver.lambda`".into() }
        );
    }

    #[test]
    fn custom_bounds_require_custom_mode() {
        let mut c = Config::default();
        c.apply_text("bounds.gas = 0, 2.5\n", "x").unwrap();
        assert!(c.validate().is_err());
        c.set("bounds", "custom").unwrap();
        c.validate().unwrap();
        assert_eq!(c.backtest.bounds.gas, Interval::new(0.0, 2.5));
        assert_eq!(c.backtest.bounds.res, Interval::new(f64::NEG_INFINITY, 0.0));
        assert!(c.set("bounds.gas", "3,1").is_err());
        assert!(c.set("bounds.calendar", "0,1").is_err());
        c.set("bounds.load", "-inf,inf").unwrap();
        c.resolve_bounds().unwrap();
        assert!(c.backtest.bounds.load.is_free());
    }

    #[test]
    fn impossible_values_fail_validation() {
        for (k, v) in [("window_rows", "10"), ("horizons", "30,1"), ("models", "ridge"), ("solver.alpha", "2"), ("synthetic.years", "3")] {
            let mut c = Config::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
        assert!(Config::default().set("seed", "-1").is_err());
        assert!(Config::default().set("eval_start", "2019-13-01").is_err());
    }

    #[test]
    fn thread_fallback_only_when_unset() {
        let mut c = Config::default();
        c.apply_thread_env(Some("5")).unwrap();
        assert_eq!(c.backtest.threads, 5);
        let mut c = Config::default();
        c.set("threads", "2").unwrap();
        c.apply_thread_env(Some("5")).unwrap();
        assert_eq!(c.backtest.threads, 2);
        assert!(Config::default().apply_thread_env(Some("many")).is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut c = Config::default();
        c.apply_overrides(&["seed=1".into(), "seed = 9".into()]).unwrap();
        assert_eq!(c.backtest.seed, 9);
        assert!(c.apply_overrides(&["seed".into()]).is_err());
    }
}
