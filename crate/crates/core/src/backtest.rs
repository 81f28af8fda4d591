//! Rolling-window backtests: one fit per (model, target, horizon) with origin `target - h`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Component, FeatureContext, NoisePanel, N_COMPONENTS};
use crate::fundamentals::CoefficientBounds;
use crate::ingest::{Column, FuturesStore, HourlyDataset};
use crate::models::{
    describe_flags, fit_daily, forecast_daily, model_by_name, DailyFit, FitOptions, ForecastRecord, HourModel, ModelSpec, FLAG_FAILED,
};
use crate::seasonal::SeasonalSet;
use crate::solver::SolverConfig;

pub const DEFAULT_HORIZONS: [u32; 15] = [1, 7, 14, 30, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330, 360];
pub const MIN_WINDOW_ROWS: usize = 400;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_DIR: &str = "records";
/// Scaled coefficients above this magnitude count as selected.
pub const SELECTION_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("backtest: invalid config: {0}")]
    InvalidConfig(String),
    #[error("backtest: config does not match data: {0}")]
    DataMismatch(String),
    #[error("backtest: io: {0}")]
    Io(#[from] std::io::Error),
    #[error("backtest: record store: {0}")]
    Store(String),
}

pub type Result<T> = std::result::Result<T, BacktestError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub models: Vec<String>,
    pub horizons: Vec<u32>,
    pub eval_start: NaiveDate,
    pub eval_end: NaiveDate,
    pub window_rows: usize,
    pub step_days: usize,
    pub seed: u64,
    /// Worker count; 0 uses every core.
    pub threads: usize,
    pub bounds: CoefficientBounds,
    pub solver: SolverConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            models: vec!["naive".into(), "expert".into(), "constr".into(), "current".into()],
            horizons: DEFAULT_HORIZONS.to_vec(),
            eval_start: NaiveDate::from_ymd_opt(2018, 4, 1).expect("valid date"),
            eval_end: NaiveDate::from_ymd_opt(2024, 4, 1).expect("valid date"),
            window_rows: 3 * 365,
            step_days: 1,
            seed: 0,
            threads: 0,
            bounds: CoefficientBounds::table4(),
            solver: SolverConfig::default(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<Vec<ModelSpec>> {
        let bad = |m: String| Err(BacktestError::InvalidConfig(m));
        if self.horizons.is_empty() || self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("horizons must be positive and strictly ascending, got {:?}", self.horizons));
        }
        if self.window_rows < MIN_WINDOW_ROWS {
            return bad(format!("window_rows {} below {MIN_WINDOW_ROWS}", self.window_rows));
        }
        if self.step_days == 0 {
            return bad("step_days must be positive".into());
        }
        if self.eval_start > self.eval_end {
            return bad(format!("eval_start {} after eval_end {}", self.eval_start, self.eval_end));
        }
        if self.models.is_empty() {
            return bad("no models".into());
        }
        self.solver.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))?;
        self.models
            .iter()
            .map(|m| model_by_name(m).ok_or_else(|| BacktestError::InvalidConfig(format!("unknown model `{m}`"))))
            .collect()
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { bounds: self.bounds.clone(), solver: self.solver, window: self.window_rows }
    }

    /// Target days of the evaluation span that exist in `dataset`.
    pub fn target_days(&self, dataset: &HourlyDataset) -> Vec<NaiveDate> {
        let first = self.eval_start.max(dataset.start_day());
        let last = self.eval_end.min(dataset.end_day());
        let mut out = Vec::new();
        let mut d = self.eval_start;
        while d <= last {
            if d >= first {
                out.push(d);
            }
            d += Duration::days(self.step_days as i64);
        }
        out
    }
}

/// All records of a run, sorted by (model, target, horizon, hour).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordStore {
    pub records: Vec<ForecastRecord>,
}

fn record_key(r: &ForecastRecord) -> (&str, NaiveDate, u32, u8) {
    (r.model.as_str(), r.target, r.horizon, r.hour)
}

fn shard_name(model: &str, horizon: u32) -> String {
    format!("{model}_h{horizon:03}.csv")
}

fn record_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["model", "origin", "horizon", "target", "hour", "prediction", "actual", "intercept"].iter().map(|s| s.to_string()).collect();
    h.extend(Component::ALL.iter().map(|c| c.as_str().to_string()));
    h.push("flags".into());
    h
}

impl RecordStore {
    pub fn new(mut records: Vec<ForecastRecord>) -> Self {
        records.sort_by(|a, b| record_key(a).cmp(&record_key(b)));
        RecordStore { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn models(&self) -> Vec<String> {
        let mut m: Vec<String> = self.records.iter().map(|r| r.model.clone()).collect();
        m.dedup();
        m.sort();
        m.dedup();
        m
    }

    pub fn horizons(&self) -> Vec<u32> {
        let mut h: Vec<u32> = self.records.iter().map(|r| r.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    pub fn select(&self, model: &str, horizon: u32) -> Vec<&ForecastRecord> {
        self.records.iter().filter(|r| r.model == model && r.horizon == horizon).collect()
    }

    /// Writes one delimited shard per (model, horizon) into `dir`, replacing existing shards.
    pub fn write_shards(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut groups: BTreeMap<(String, u32), Vec<&ForecastRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry((r.model.clone(), r.horizon)).or_default().push(r);
        }
        let mut paths = Vec::new();
        for ((model, horizon), recs) in groups {
            let path = dir.join(shard_name(&model, horizon));
            let mut w = csv::Writer::from_writer(std::io::BufWriter::new(fs::File::create(&path)?));
            let store_err = |e: csv::Error| BacktestError::Store(e.to_string());
            w.write_record(record_header()).map_err(store_err)?;
            for r in recs {
                let mut row = vec![
                    r.model.clone(),
                    r.origin.to_string(),
                    r.horizon.to_string(),
                    r.target.to_string(),
                    r.hour.to_string(),
                    r.prediction.to_string(),
                    r.actual.to_string(),
                    r.intercept.to_string(),
                ];
                row.extend(r.components.iter().map(|v| v.to_string()));
                row.push(r.flags.to_string());
                w.write_record(&row).map_err(store_err)?;
            }
            w.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Reads every shard in `dir`.
    pub fn read_shards(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let header = record_header();
        let mut records = Vec::new();
        for path in paths {
            let mut rdr = csv::Reader::from_path(&path).map_err(|e| BacktestError::Store(e.to_string()))?;
            let got: Vec<String> = rdr.headers().map_err(|e| BacktestError::Store(e.to_string()))?.iter().map(String::from).collect();
            if got != header {
                return Err(BacktestError::Store(format!("{}: unexpected header", path.display())));
            }
            for (i, row) in rdr.records().enumerate() {
                let row = row.map_err(|e| BacktestError::Store(e.to_string()))?;
                let bad = |what: &str| BacktestError::Store(format!("{}:{}: bad {what}", path.display(), i + 2));
                let date = |k: usize, what: &str| NaiveDate::parse_from_str(&row[k], "%Y-%m-%d").map_err(|_| bad(what));
                let num = |k: usize, what: &str| row[k].parse::<f64>().map_err(|_| bad(what));
                let mut components = [0.0; N_COMPONENTS];
                for (c, slot) in components.iter_mut().enumerate() {
                    *slot = num(8 + c, "component")?;
                }
                records.push(ForecastRecord {
                    model: row[0].to_string(),
                    origin: date(1, "origin")?,
                    horizon: row[2].parse().map_err(|_| bad("horizon"))?,
                    target: date(3, "target")?,
                    hour: row[4].parse().map_err(|_| bad("hour"))?,
                    prediction: num(5, "prediction")?,
                    actual: num(6, "actual")?,
                    intercept: num(7, "intercept")?,
                    components,
                    flags: row[8 + N_COMPONENTS].parse().map_err(|_| bad("flags"))?,
                });
            }
        }
        Ok(RecordStore::new(records))
    }
}

/// A record carrying a nonzero flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCell {
    pub model: String,
    pub target: NaiveDate,
    pub horizon: u32,
    pub hour: u8,
    pub flags: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: BacktestConfig,
    pub dataset_sha256: String,
    pub futures_sha256: String,
    pub code_version: String,
    pub eval_days: usize,
    /// Records written per model (failed cells included).
    pub records_per_model: BTreeMap<String, usize>,
    /// Records per model with a usable prediction.
    pub usable_per_model: BTreeMap<String, usize>,
    pub flagged: Vec<FlaggedCell>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| BacktestError::Store(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| BacktestError::Store(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub store: RecordStore,
    pub manifest: RunManifest,
}

impl BacktestOutput {
    /// Writes `records/*.csv` and `manifest.json` under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        let records = dir.join(RECORDS_DIR);
        if records.exists() {
            for e in fs::read_dir(&records)? {
                let p = e?.path();
                if p.extension().is_some_and(|x| x == "csv") {
                    fs::remove_file(p)?;
                }
            }
        }
        self.store.write_shards(&records)?;
        self.manifest.write(&dir.join(MANIFEST_FILE))
    }
}

fn check_inputs(specs: &[ModelSpec], dataset: &HourlyDataset, futures: &FuturesStore, seasonal: Option<&SeasonalSet>) -> Result<()> {
    for spec in specs {
        let Some(design) = spec.design() else { continue };
        if design.needs_futures() && futures.is_empty() {
            return Err(BacktestError::DataMismatch(format!("model `{}` needs futures but the store is empty", spec.name)));
        }
        if design.needs_seasonal() && seasonal.is_none_or(|s| s.is_empty()) {
            return Err(BacktestError::DataMismatch(format!("model `{}` needs seasonal models but none were supplied", spec.name)));
        }
    }
    let _ = dataset;
    Ok(())
}

pub(crate) fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BacktestError::InvalidConfig(format!("thread pool: {e}")))
}

fn origin_fit(
    spec: &ModelSpec,
    ctx: &FeatureContext<'_>,
    options: &FitOptions,
    target: NaiveDate,
    h: u32,
    noise: Option<&NoisePanel>,
) -> DailyFit {
    fit_daily(spec, ctx, options, target - Duration::days(h as i64), h, noise)
}

/// Runs every (model, target, horizon) cell of the evaluation span.
pub fn run_backtest(
    config: &BacktestConfig,
    dataset: &HourlyDataset,
    futures: &FuturesStore,
    seasonal: Option<&SeasonalSet>,
) -> Result<BacktestOutput> {
    let started = Instant::now();
    let specs = config.validate()?;
    check_inputs(&specs, dataset, futures, seasonal)?;
    let targets = config.target_days(dataset);
    if targets.is_empty() {
        return Err(BacktestError::DataMismatch(format!(
            "evaluation span {}..{} does not overlap data {}..{}",
            config.eval_start,
            config.eval_end,
            dataset.start_day(),
            dataset.end_day()
        )));
    }
    let ctx = FeatureContext::new(dataset, futures, seasonal);
    let options = config.fit_options();
    let cells: Vec<(usize, NaiveDate, u32)> = specs
        .iter()
        .enumerate()
        .flat_map(|(m, _)| targets.iter().flat_map(move |&t| config.horizons.iter().map(move |&h| (m, t, h))))
        .collect();
    let records: Vec<ForecastRecord> = pool(config.threads)?.install(|| {
        cells
            .par_iter()
            .flat_map_iter(|&(m, t, h)| forecast_daily(&origin_fit(&specs[m], &ctx, &options, t, h, None), Some(dataset)))
            .collect()
    });
    let store = RecordStore::new(records);

    let mut records_per_model = BTreeMap::new();
    let mut usable_per_model = BTreeMap::new();
    let mut flagged = Vec::new();
    for r in &store.records {
        *records_per_model.entry(r.model.clone()).or_insert(0) += 1;
        if !r.is_failed() {
            *usable_per_model.entry(r.model.clone()).or_insert(0) += 1;
        }
        if r.flags != 0 {
            flagged.push(FlaggedCell {
                model: r.model.clone(),
                target: r.target,
                horizon: r.horizon,
                hour: r.hour,
                flags: r.flags,
                reason: describe_flags(r.flags),
            });
        }
    }
    let manifest = RunManifest {
        config: config.clone(),
        dataset_sha256: dataset.content_hash(),
        futures_sha256: futures.content_hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        eval_days: targets.len(),
        records_per_model,
        usable_per_model,
        flagged,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(BacktestOutput { store, manifest })
}

/// Selection statistics for the noise regressors at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSelection {
    pub horizon: u32,
    /// Fraction of (fit, hour, column) cells with |scaled coefficient| > [`SELECTION_THRESHOLD`].
    pub white_frequency: f64,
    pub brownian_frequency: f64,
    pub white_mean_abs: f64,
    pub brownian_mean_abs: f64,
    pub fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousReport {
    pub model: String,
    pub noise_count: usize,
    pub seed: u64,
    pub by_horizon: Vec<NoiseSelection>,
    /// Least-squares slope of the Brownian selection frequency against the horizon (per day).
    pub brownian_trend: f64,
    pub white_trend: f64,
    /// Mean |scaled coefficient| of each noise column (rows = horizons).
    pub mean_abs_path: crate::models::CoefficientPath,
}

impl SpuriousReport {
    pub fn to_delimited(&self) -> String {
        let mut s = String::from("horizon,fits,white_frequency,brownian_frequency,white_mean_abs,brownian_mean_abs\n");
        for r in &self.by_horizon {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.horizon, r.fits, r.white_frequency, r.brownian_frequency, r.white_mean_abs, r.brownian_mean_abs
            ));
        }
        s
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Fits the constrained lagged-fuel model with `noise_count` white-noise and
/// random-walk regressors over the evaluation span and horizon grid.
pub fn spurious_experiment(
    config: &BacktestConfig,
    dataset: &HourlyDataset,
    futures: &FuturesStore,
    seasonal: Option<&SeasonalSet>,
    noise_count: usize,
    seed: u64,
) -> Result<SpuriousReport> {
    config.validate()?;
    let spec = model_by_name("constr").expect("catalog has constr");
    check_inputs(std::slice::from_ref(&spec), dataset, futures, seasonal)?;
    let targets = config.target_days(dataset);
    let panel = NoisePanel::new(noise_count, seed, dataset.n_days());
    let ctx = FeatureContext::new(dataset, futures, seasonal);
    let options = config.fit_options();
    let cells: Vec<(u32, NaiveDate)> = config.horizons.iter().flat_map(|&h| targets.iter().map(move |&t| (h, t))).collect();
    let fits: Vec<DailyFit> =
        pool(config.threads)?.install(|| cells.par_iter().map(|&(h, t)| origin_fit(&spec, &ctx, &options, t, h, Some(&panel))).collect());

    let names: Vec<String> =
        (0..noise_count).map(|i| format!("white_{i}")).chain((0..noise_count).map(|i| format!("brownian_{i}"))).collect();
    let mut by_horizon = Vec::new();
    let mut path_rows = Vec::new();
    for &h in &config.horizons {
        let mut sums = vec![0.0; names.len()];
        let mut hits = vec![0usize; names.len()];
        let mut cells = 0usize;
        let mut n_fits = 0usize;
        for fit in fits.iter().filter(|f| f.horizon == h) {
            n_fits += 1;
            for hf in &fit.hours {
                let HourModel::Regression { columns, fit: r, .. } = &hf.model else { continue };
                cells += 1;
                for (c, v) in columns.iter().zip(&r.coefficients_scaled) {
                    if let Some(k) = names.iter().position(|n| *n == c.name) {
                        sums[k] += v.abs();
                        hits[k] += usize::from(v.abs() > SELECTION_THRESHOLD);
                    }
                }
            }
        }
        let denom = |k: std::ops::Range<usize>| (cells * k.len()).max(1) as f64;
        let white = 0..noise_count;
        let brown = noise_count..2 * noise_count;
        by_horizon.push(NoiseSelection {
            horizon: h,
            white_frequency: hits[white.clone()].iter().sum::<usize>() as f64 / denom(white.clone()),
            brownian_frequency: hits[brown.clone()].iter().sum::<usize>() as f64 / denom(brown.clone()),
            white_mean_abs: sums[white.clone()].iter().sum::<f64>() / denom(white),
            brownian_mean_abs: sums[brown.clone()].iter().sum::<f64>() / denom(brown),
            fits: n_fits,
        });
        path_rows.push(sums.iter().map(|s| if cells == 0 { f64::NAN } else { s / cells as f64 }).collect());
    }
    let hs: Vec<f64> = by_horizon.iter().map(|r| r.horizon as f64).collect();
    let brownian_trend = slope(&hs, &by_horizon.iter().map(|r| r.brownian_frequency).collect::<Vec<_>>());
    let white_trend = slope(&hs, &by_horizon.iter().map(|r| r.white_frequency).collect::<Vec<_>>());
    Ok(SpuriousReport {
        model: spec.name.to_string(),
        noise_count,
        seed,
        by_horizon,
        brownian_trend,
        white_trend,
        mean_abs_path: crate::models::CoefficientPath {
            model: spec.name.to_string(),
            hour: 0,
            horizons: config.horizons.clone(),
            columns: names,
            scaled: path_rows,
        },
    })
}

/// Outcome of re-running origins on data that ends the day after the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub origins: Vec<NaiveDate>,
    pub cells_checked: usize,
    pub mismatches: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.cells_checked > 0
    }
}

const POISON: f64 = 1.0e6;
const REALIZED_COLUMNS: [Column; 5] = [Column::Price, Column::LoadActual, Column::SolarActual, Column::WindOnActual, Column::WindOffActual];

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

/// Checks that forecasts issued at each origin `T` use nothing observed after `T`.
///
/// The dataset is cut after `T + 1` (whose day-ahead forecast columns are
/// legitimately known at `T`), realized values on `T + 1` are overwritten with
/// a large constant, futures quoted after `T` are removed and seasonal models
/// trained after `T` are dropped. Every model and horizon is re-forecast and
/// compared bit for bit with the full-data forecast.
pub fn truncation_audit(
    config: &BacktestConfig,
    dataset: &HourlyDataset,
    futures: &FuturesStore,
    seasonal: Option<&SeasonalSet>,
    origins: &[NaiveDate],
) -> Result<AuditReport> {
    let specs = config.validate()?;
    check_inputs(&specs, dataset, futures, seasonal)?;
    let full_ctx = FeatureContext::new(dataset, futures, seasonal);
    let options = config.fit_options();
    let pool = pool(config.threads)?;
    let mut mismatches = Vec::new();
    let mut cells_checked = 0;
    for &origin in origins {
        let Some(t) = dataset.day_index(origin) else {
            return Err(BacktestError::DataMismatch(format!("audit origin {origin} outside data")));
        };
        let last = dataset.day_at((t + 1).min(dataset.n_days() - 1));
        let mut cut = dataset.truncated(last).expect("last day is in the dataset");
        if last > origin {
            for c in REALIZED_COLUMNS {
                cut = cut.map_column_days(c, t + 1..t + 2, |_, _, v| v + POISON);
            }
        }
        let mut past_futures = FuturesStore::new();
        for q in futures.iter().filter(|q| q.quote_date <= origin) {
            past_futures.insert(q).expect("quotes from a valid store");
        }
        let past_seasonal = seasonal.map(|s| SeasonalSet::from_fits(s.fits().iter().filter(|f| f.train_end < origin).cloned().collect()));
        let cut_ctx = FeatureContext::new(&cut, &past_futures, past_seasonal.as_ref());
        let cells: Vec<(usize, u32)> = (0..specs.len()).flat_map(|m| config.horizons.iter().map(move |&h| (m, h))).collect();
        let pairs: Vec<(Vec<ForecastRecord>, Vec<ForecastRecord>)> = pool.install(|| {
            cells
                .par_iter()
                .map(|&(m, h)| {
                    let a = forecast_daily(&fit_daily(&specs[m], &full_ctx, &options, origin, h, None), None);
                    let b = forecast_daily(&fit_daily(&specs[m], &cut_ctx, &options, origin, h, None), None);
                    (a, b)
                })
                .collect()
        });
        for (a, b) in pairs {
            for (ra, rb) in a.iter().zip(&b) {
                cells_checked += 1;
                let equal = same_bits(ra.prediction, rb.prediction)
                    && same_bits(ra.intercept, rb.intercept)
                    && ra.components.iter().zip(&rb.components).all(|(x, y)| same_bits(*x, *y))
                    && ra.flags == rb.flags;
                if !equal {
                    mismatches.push(format!(
                        "{} origin {} h={} hour {}: {} vs {} (flags {} vs {})",
                        ra.model, origin, ra.horizon, ra.hour, ra.prediction, rb.prediction, ra.flags, rb.flags
                    ));
                }
            }
        }
    }
    Ok(AuditReport { origins: origins.to_vec(), cells_checked, mismatches })
}

/// Writes a manifest-only summary line per model to `w` (used by the command line).
pub fn write_summary<W: Write>(manifest: &RunManifest, mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,records,usable")?;
    for (m, n) in &manifest.records_per_model {
        writeln!(w, "{m},{n},{}", manifest.usable_per_model.get(m).copied().unwrap_or(0))?;
    }
    Ok(())
}

/// Number of records that carry the failure flag.
pub fn failed_count(store: &RecordStore) -> usize {
    store.records.iter().filter(|r| r.flags & FLAG_FAILED != 0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::merit_fixture;

    fn config(models: &[&str], horizons: &[u32], ds: &HourlyDataset, first: usize, days: usize) -> BacktestConfig {
        BacktestConfig {
            models: models.iter().map(|m| m.to_string()).collect(),
            horizons: horizons.to_vec(),
            eval_start: ds.day_at(first),
            eval_end: ds.day_at(first + days - 1),
            window_rows: 400,
            threads: 1,
            ..BacktestConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let ok = BacktestConfig::default();
        assert_eq!(ok.validate().unwrap().len(), 4);
        assert_eq!(ok.horizons, DEFAULT_HORIZONS);
        for bad in [
            BacktestConfig { horizons: vec![7, 1], ..ok.clone() },
            BacktestConfig { horizons: vec![0, 1], ..ok.clone() },
            BacktestConfig { window_rows: 399, ..ok.clone() },
            BacktestConfig { models: vec!["bogus".into()], ..ok.clone() },
            BacktestConfig { step_days: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(BacktestError::InvalidConfig(_))));
        }
    }

    #[test]
    fn ten_day_span_gives_240_records_per_model_and_horizon() {
        let (ds, store) = merit_fixture(4, 600);
        let cfg = config(&["naive"], &[1], &ds, 500, 10);
        let out = run_backtest(&cfg, &ds, &store, None).unwrap();
        assert_eq!(out.store.len(), 240);
        assert_eq!(out.manifest.records_per_model["naive"], 240);
        assert_eq!(out.manifest.eval_days, 10);
        assert!(out.manifest.flagged.is_empty());
        let keys: Vec<_> = out.store.records.iter().map(record_key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(out.store.records.iter().all(|r| r.origin == r.target - Duration::days(1) && r.actual.is_finite()));
    }

    #[test]
    fn failures_become_flagged_records() {
        let (ds, _) = merit_fixture(4, 600);
        let cfg = config(&["wd", "naive"], &[1, 30], &ds, 420, 3);
        // the 400-row window at h=30 needs origins past day 436
        let out = run_backtest(&cfg, &ds, &FuturesStore::new(), None).unwrap();
        assert_eq!(out.store.len(), 2 * 2 * 3 * 24);
        let failed = failed_count(&out.store);
        assert_eq!(failed, 3 * 24);
        assert_eq!(out.manifest.flagged.len(), failed);
        assert_eq!(out.manifest.usable_per_model["wd"], 3 * 24);
        assert!(out.manifest.flagged.iter().all(|f| f.model == "wd" && f.horizon == 30));
    }

    #[test]
    fn data_mismatch_aborts_before_work() {
        let (ds, store) = merit_fixture(4, 600);
        let cfg = config(&["constr"], &[1], &ds, 500, 2);
        assert!(matches!(run_backtest(&cfg, &ds, &FuturesStore::new(), None), Err(BacktestError::DataMismatch(_))));
        let cur = config(&["current"], &[1], &ds, 500, 2);
        assert!(matches!(run_backtest(&cur, &ds, &store, None), Err(BacktestError::DataMismatch(_))));
        let mut late = config(&["naive"], &[1], &ds, 500, 2);
        late.eval_start = ds.end_day() + Duration::days(10);
        late.eval_end = late.eval_start + Duration::days(5);
        assert!(matches!(run_backtest(&late, &ds, &store, None), Err(BacktestError::DataMismatch(_))));
    }

    #[test]
    fn deterministic_across_threads_and_round_trips_through_shards() {
        let (ds, store) = merit_fixture(6, 560);
        let mut cfg = config(&["constr", "naive"], &[1, 7], &ds, 520, 6);
        let a = run_backtest(&cfg, &ds, &store, None).unwrap();
        cfg.threads = 3;
        let b = run_backtest(&cfg, &ds, &store, None).unwrap();
        assert_eq!(a.store, b.store);
        let dir = tempfile::tempdir().unwrap();
        a.persist(dir.path()).unwrap();
        let back = RecordStore::read_shards(&dir.path().join(RECORDS_DIR)).unwrap();
        assert_eq!(back.len(), a.store.len());
        for (x, y) in back.records.iter().zip(&a.store.records) {
            assert_eq!(x.prediction.to_bits(), y.prediction.to_bits());
            assert_eq!(x.components.map(f64::to_bits), y.components.map(f64::to_bits));
            assert_eq!((x.origin, x.target, x.hour, x.flags), (y.origin, y.target, y.hour, y.flags));
        }
        let m = RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.records_per_model, a.manifest.records_per_model);
        assert_eq!(m.dataset_sha256, ds.content_hash());
    }

    #[test]
    fn windows_have_exactly_the_configured_rows() {
        let (ds, store) = merit_fixture(6, 560);
        let spec = model_by_name("constr").unwrap();
        let ctx = FeatureContext::new(&ds, &store, None);
        let opts = FitOptions { window: 400, ..FitOptions::default() };
        let target = ds.day_at(540);
        for h in [1, 7, 30] {
            let fit = origin_fit(&spec, &ctx, &opts, target, h, None);
            let (first, last) = fit.window.unwrap();
            assert_eq!(last - first + 1, 400);
            assert_eq!(last, 540 - 2 * h as usize);
        }
    }

    #[test]
    fn truncation_audit_passes() {
        let (ds, store) = merit_fixture(8, 560);
        let cfg = config(&["constr", "expert", "naive", "wd"], &[1, 14], &ds, 530, 5);
        let report = truncation_audit(&cfg, &ds, &store, None, &[ds.day_at(540), ds.day_at(545)]).unwrap();
        assert!(report.passed(), "{:?}", report.mismatches);
        assert_eq!(report.cells_checked, 2 * 4 * 2 * 24);
    }

    #[test]
    fn spurious_with_no_noise_matches_plain_backtest() {
        let (ds, store) = merit_fixture(9, 560);
        let cfg = config(&["constr"], &[1, 7], &ds, 540, 3);
        let report = spurious_experiment(&cfg, &ds, &store, None, 0, 1).unwrap();
        assert!(report.mean_abs_path.columns.is_empty());
        assert!(report.by_horizon.iter().all(|r| r.fits == 3 && r.white_frequency == 0.0));
        let with = spurious_experiment(&cfg, &ds, &store, None, 2, 1).unwrap();
        assert_eq!(with.mean_abs_path.columns, ["white_0", "white_1", "brownian_0", "brownian_1"]);
        assert!(with.by_horizon.iter().all(|r| (0.0..=1.0).contains(&r.brownian_frequency)));
        assert!(with.to_delimited().starts_with("horizon,fits,"));
    }
}
