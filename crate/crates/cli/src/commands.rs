//! Subcommand bodies. Every command writes its artifacts and a
//! `run_manifest.json` into its output directory; reruns overwrite in place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Datelike, Duration, NaiveDate};
use epf_core::backtest::{self, run_backtest, spurious_experiment, write_summary, BacktestOutput, RecordStore, RECORDS_DIR};
use epf_core::eval::{
    adf_test, compute_metrics, default_adf_lag, dm_matrix, dm_test, render_coefficient_paths, render_components, render_series,
    render_tables, stack_components, EvalError, GroupBy, Metric, MetricsResult, Table, TableInput, TableShape,
};
use epf_core::ingest::{
    adjust_clock_change, parse_futures_csv, parse_hourly_csv, read_processed, write_processed, FuturesStore, HourlyDataset,
};
use epf_core::models::{model_by_name, ForecastRecord};
use epf_core::seasonal::{SeasonalFit, SeasonalModel, SeasonalSet, SmoothingGrid};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::synthetic::{generate_synthetic, SyntheticConfig, SyntheticMarket};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const SEASONAL_INDEX_FILE: &str = "seasonal_index.csv";

/// Models, horizons and number of trailing days shown by the demo.
pub const DEMO_MODELS: [&str; 3] = ["naive", "constr", "current"];
pub const DEMO_HORIZONS: [u32; 3] = [1, 30, 180];
pub const DEMO_COMPONENT_DAYS: i64 = 14;

/// Bookkeeping for one invocation.
#[derive(Debug)]
pub struct Run {
    pub command: String,
    pub arguments: Vec<String>,
    pub config: Config,
    pub out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct CommandManifest<'a> {
    command: &'a str,
    arguments: &'a [String],
    code_version: &'static str,
    status: &'static str,
    error: Option<String>,
    config: &'a Config,
    /// Input label to SHA-256 of its bytes.
    inputs: &'a BTreeMap<String, String>,
    outputs: Vec<String>,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::user("io", format!("cannot read {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Run {
    pub fn new(command: impl Into<String>, arguments: Vec<String>, config: Config, out: PathBuf) -> Self {
        Run { command: command.into(), arguments, config, out, inputs: BTreeMap::new(), outputs: Vec::new() }
    }

    /// Records the hash of an input file, or of every regular file in an input directory.
    pub fn input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| CliError::user("io", format!("cannot read {}: {e}", path.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != RUN_MANIFEST_FILE))
                .collect();
            files.sort();
            for f in files {
                let name = f.file_name().expect("file entries have names").to_string_lossy().into_owned();
                self.inputs.insert(format!("{label}/{name}"), sha256_file(&f)?);
            }
        } else {
            self.inputs.insert(label.to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    pub fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::write(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::write(&path, e))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn produced(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    pub fn outputs(&self) -> &[PathBuf] {
        &self.outputs
    }

    /// Writes `run_manifest.json`, recording the error if the command failed.
    pub fn finish(&self, outcome: Result<(), &CliError>) -> CliResult<PathBuf> {
        let mut outputs: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.strip_prefix(&self.out).unwrap_or(p).display().to_string())
            .collect();
        outputs.sort();
        outputs.dedup();
        let manifest = CommandManifest {
            command: &self.command,
            arguments: &self.arguments,
            code_version: env!("CARGO_PKG_VERSION"),
            status: if outcome.is_ok() { "ok" } else { "error" },
            error: outcome.err().map(|e| e.to_string()),
            config: &self.config,
            inputs: &self.inputs,
            outputs,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::internal("manifest", e.to_string()))?;
        fs::create_dir_all(&self.out).map_err(|e| CliError::write(&self.out, e))?;
        let path = self.out.join(RUN_MANIFEST_FILE);
        fs::write(&path, json + "\n").map_err(|e| CliError::write(&path, e))?;
        Ok(path)
    }
}

// ---------------------------------------------------------------------------
// generate / ingest / seasonal

pub fn generate(run: &mut Run, dir: &Path) -> CliResult<SyntheticMarket> {
    let config = SyntheticConfig {
        years: run.config.synthetic_years,
        seed: run.config.backtest.seed,
        zero_noise: run.config.zero_noise,
        ..SyntheticConfig::default()
    };
    let market = generate_synthetic(&config)?;
    let (hourly, futures) = market.write(dir)?;
    run.produced([hourly, futures]);
    Ok(market)
}

pub fn ingest(run: &mut Run, hourly: &Path, futures: &Path, dir: &Path) -> CliResult<(HourlyDataset, FuturesStore)> {
    run.input("hourly", hourly)?;
    run.input("futures", futures)?;
    let raw = parse_hourly_csv(hourly, run.config.tz)?;
    let (dataset, report) = adjust_clock_change(&raw)?;
    let store = parse_futures_csv(futures)?;
    write_processed(dir, &dataset, &store, run.config.tz, &report)?;
    run.produced(
        [epf_core::ingest::PROCESSED_HOURLY_FILE, epf_core::ingest::PROCESSED_FUTURES_FILE, epf_core::ingest::DATASET_MANIFEST_FILE]
            .map(|f| dir.join(f)),
    );
    Ok((dataset, store))
}

pub fn load_data(run: &mut Run, dir: &Path) -> CliResult<(HourlyDataset, FuturesStore)> {
    run.input("data", dir)?;
    let (dataset, futures, _) = read_processed(dir)?;
    Ok((dataset, futures))
}

fn model_file(kind: &str, train_end: NaiveDate) -> String {
    format!("{kind}_{train_end}.txt")
}

/// Writes one text file per fitted model and an index.
pub fn write_seasonal(run: &mut Run, dir: &Path, set: &SeasonalSet) -> CliResult<()> {
    let mut index = String::from("train_end,served_year,load_file,res_file,load_gcv,res_gcv,load_edf,res_edf,load_trend_mw_per_hour\n");
    for f in set.fits() {
        let (load, res) = (model_file("load", f.train_end), model_file("res", f.train_end));
        run.write(dir.join(&load), f.load.to_text())?;
        run.write(dir.join(&res), f.res.to_text())?;
        index.push_str(&format!(
            "{},{},{load},{res},{},{},{},{},{}\n",
            f.train_end,
            f.train_end.year() + 1,
            f.load.gcv,
            f.res.gcv,
            f.load.edf,
            f.res.edf,
            f.load.trend_slope()
        ));
    }
    run.write(dir.join(SEASONAL_INDEX_FILE), index)?;
    Ok(())
}

pub fn read_seasonal(run: &mut Run, dir: &Path) -> CliResult<SeasonalSet> {
    run.input("seasonal", dir)?;
    let read = |name: &str| -> CliResult<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| CliError::user("seasonal", format!("cannot read {}: {e}", p.display())))
    };
    let index = read(SEASONAL_INDEX_FILE)?;
    let mut fits = Vec::new();
    for (i, line) in index.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 4 {
            return Err(CliError::user("seasonal", format!("{SEASONAL_INDEX_FILE}:{}: expected at least 4 fields", i + 1)));
        }
        let train_end = cells[0]
            .parse::<NaiveDate>()
            .map_err(|_| CliError::user("seasonal", format!("{SEASONAL_INDEX_FILE}:{}: bad date `{}`", i + 1, cells[0])))?;
        let load = SeasonalModel::from_text(&read(cells[2])?)?;
        let res = SeasonalModel::from_text(&read(cells[3])?)?;
        fits.push(SeasonalFit { train_end, load, res });
    }
    Ok(SeasonalSet::from_fits(fits))
}

pub fn seasonal_fit(run: &mut Run, dataset: &HourlyDataset, dir: &Path) -> CliResult<SeasonalSet> {
    let set = SeasonalSet::fit(dataset, &SmoothingGrid::default())?;
    write_seasonal(run, dir, &set)?;
    Ok(set)
}

/// Load and renewable forecasts of the model serving `origin`, for the `days` days after it.
pub fn seasonal_forecast(run: &mut Run, set: &SeasonalSet, origin: NaiveDate, days: usize, dir: &Path) -> CliResult<()> {
    let Some(fit) = set.serving(origin) else {
        return Err(CliError::user("seasonal", format!("no seasonal model trained before {origin}")));
    };
    let mut csv = String::from("day,hour,load_mw,res_mw,train_end\n");
    let mut load = Vec::new();
    for d in 1..=days as i64 {
        let day = origin + Duration::days(d);
        for h in 1..=24u8 {
            let (l, r) = (fit.load.forecast(day, h), fit.res.forecast(day, h));
            load.push(l);
            csv.push_str(&format!("{day},{h},{l},{r},{}\n", fit.train_end));
        }
    }
    run.write(dir.join("seasonal_forecast.csv"), csv)?;
    let title = format!("Seasonal load forecast from {origin} (model trained to {})", fit.train_end);
    run.write(dir.join("seasonal_forecast_load.svg"), render_series(&title, &load)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// backtest

pub fn backtest(
    run: &mut Run,
    dataset: &HourlyDataset,
    futures: &FuturesStore,
    seasonal: Option<&SeasonalSet>,
    dir: &Path,
) -> CliResult<BacktestOutput> {
    let days = (dataset.end_day() - dataset.start_day()).num_days() as usize + 1;
    let seasonal = seasonal.map(|s| s.clone().with_cache(dataset.start_day(), days));
    let output = run_backtest(&run.config.backtest, dataset, futures, seasonal.as_ref())?;
    output.persist(dir)?;
    let shards = fs::read_dir(dir.join(RECORDS_DIR)).map_err(|e| CliError::write(dir, e))?;
    let mut shards: Vec<PathBuf> = shards.filter_map(|e| e.ok().map(|e| e.path())).collect();
    shards.sort();
    run.produced(shards);
    run.produced([dir.join(backtest::MANIFEST_FILE)]);
    let mut summary = Vec::new();
    write_summary(&output.manifest, &mut summary).map_err(|e| CliError::internal("backtest", e.to_string()))?;
    run.write(dir.join("summary.csv"), summary)?;
    Ok(output)
}

/// Reads the record store of a backtest output directory (or a bare shard directory).
pub fn load_records(run: &mut Run, dir: &Path) -> CliResult<RecordStore> {
    let shards = if dir.join(RECORDS_DIR).is_dir() { dir.join(RECORDS_DIR) } else { dir.to_path_buf() };
    run.input("records", &shards)?;
    let store = RecordStore::read_shards(&shards)?;
    if store.is_empty() {
        return Err(CliError::user("eval", format!("no forecast records under {}", shards.display())));
    }
    Ok(store)
}

// ---------------------------------------------------------------------------
// eval

fn metrics_csv(results: &[MetricsResult]) -> String {
    let mut s = String::from("model,horizon,grouping,rmse,mae,n_days,n_hours\n");
    for r in results {
        s.push_str(&format!("{},{},{},{},{},{},{}\n", r.model, r.horizon, r.grouping, r.rmse, r.mae, r.n_days, r.n_hours));
    }
    s
}

pub fn eval_metrics(run: &mut Run, store: &RecordStore, by: GroupBy, dir: &Path) -> CliResult<Vec<MetricsResult>> {
    let results = compute_metrics(&store.records, by)?;
    let name = match by {
        GroupBy::Overall => "metrics.csv",
        GroupBy::Year => "metrics_by_year.csv",
    };
    run.write(dir.join(name), metrics_csv(&results))?;
    Ok(results)
}

fn owned(records: Vec<&ForecastRecord>) -> Vec<ForecastRecord> {
    records.into_iter().cloned().collect()
}

/// One pairwise test. Identical losses are reported as "no difference" rather than failing.
pub fn eval_dm_pair(run: &mut Run, store: &RecordStore, a: &str, b: &str, horizon: u32, dir: &Path) -> CliResult<()> {
    let (ra, rb) = (owned(store.select(a, horizon)), owned(store.select(b, horizon)));
    for (m, r) in [(a, &ra), (b, &rb)] {
        if r.is_empty() {
            return Err(CliError::user("eval", format!("no records for model `{m}` at horizon {horizon}")));
        }
    }
    let mut s = String::from("model_a,model_b,horizon,statistic,p_value,loss,hac_lag,n_days,note\n");
    match dm_test(&ra, &rb, horizon) {
        Ok(r) => s.push_str(&format!(
            "{},{},{},{},{},{},{},{},\n",
            r.model_a, r.model_b, r.horizon, r.statistic, r.p_value, r.loss, r.hac_lag, r.n_days
        )),
        Err(EvalError::DegenerateVariance) => {
            s.push_str(&format!("{a},{b},{horizon},,,daily_l1,{},,no difference\n", epf_core::eval::dm_lag(horizon)))
        }
        Err(e) => return Err(e.into()),
    }
    run.write(dir.join(format!("dm_{a}_{b}_h{horizon}.csv")), s)?;
    Ok(())
}

/// Full pairwise matrix at one horizon, as delimited text and a shaded SVG.
pub fn eval_dm_matrix(run: &mut Run, store: &RecordStore, horizon: u32, dir: &Path) -> CliResult<Table> {
    let models: Vec<String> = store.models().into_iter().filter(|m| !store.select(m, horizon).is_empty()).collect();
    if models.len() < 2 {
        return Err(CliError::user("eval", format!("need at least two models with records at horizon {horizon}")));
    }
    let mut results = Vec::new();
    let mut log = String::from("model_a,model_b,horizon,statistic,p_value,loss,hac_lag,n_days,note\n");
    for r in dm_matrix(&store.records, &models, horizon) {
        match r {
            Ok(r) => {
                log.push_str(&format!(
                    "{},{},{},{},{},{},{},{},\n",
                    r.model_a, r.model_b, r.horizon, r.statistic, r.p_value, r.loss, r.hac_lag, r.n_days
                ));
                results.push(r);
            }
            Err((a, b, e)) => log.push_str(&format!("{a},{b},{horizon},,,daily_l1,{},,{e}\n", epf_core::eval::dm_lag(horizon))),
        }
    }
    let table = render_tables(TableInput::Dm { results: &results, models: &models, horizon }, TableShape::DmMatrix)?;
    run.write(dir.join(format!("dm_h{horizon}.csv")), log)?;
    run.write(dir.join(format!("dm_matrix_h{horizon}.csv")), table.to_delimited())?;
    run.write(dir.join(format!("dm_matrix_h{horizon}.svg")), table.to_svg())?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// diagnostics

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdfTarget {
    Price,
    Load,
    Res,
}

impl std::str::FromStr for AdfTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "price" => Ok(AdfTarget::Price),
            "load" => Ok(AdfTarget::Load),
            "res" => Ok(AdfTarget::Res),
            _ => Err(format!("unknown ADF target `{s}` (expected price|load|res)")),
        }
    }
}

impl AdfTarget {
    fn name(self) -> &'static str {
        match self {
            AdfTarget::Price => "price",
            AdfTarget::Load => "load",
            AdfTarget::Res => "res",
        }
    }

    fn value(self, ds: &HourlyDataset, d: usize, hour: u8) -> f64 {
        match self {
            AdfTarget::Price => ds.price(d, hour),
            AdfTarget::Load => ds.load_actual(d, hour),
            AdfTarget::Res => ds.res_actual(d, hour),
        }
    }
}

/// ADF tests of the daily series at each requested hour and calendar year.
///
/// Without `hour`, every hour is tested; without `year`, every calendar
/// year in the data. The panel of p-values is written as a shaded table.
pub fn diag_adf(
    run: &mut Run,
    ds: &HourlyDataset,
    target: AdfTarget,
    hour: Option<u8>,
    year: Option<i32>,
    max_lag: Option<usize>,
    dir: &Path,
) -> CliResult<Table> {
    if let Some(h) = hour {
        if !(1..=24).contains(&h) {
            return Err(CliError::user("diag", format!("hour must be in 1..=24, got {h}")));
        }
    }
    let hours: Vec<u8> = hour.map_or((1..=24).collect(), |h| vec![h]);
    let years: Vec<i32> = match year {
        Some(y) => vec![y],
        None => (ds.start_day().year()..=ds.end_day().year()).collect(),
    };
    let single = hours.len() == 1 && years.len() == 1;
    let mut csv = String::from("series,hour,year,lag_order,statistic,p_value,reject_5pct,n_obs\n");
    let mut header = vec!["hour".to_string()];
    header.extend(years.iter().map(|y| y.to_string()));
    let (mut rows, mut values) = (Vec::new(), Vec::new());
    let mut last_series = Vec::new();
    for &h in &hours {
        let mut row = vec![h.to_string()];
        let mut vals = Vec::new();
        for &y in &years {
            let series: Vec<f64> =
                (0..ds.n_days()).filter(|&d| ds.day_at(d).year() == y).map(|d| target.value(ds, d, h)).collect();
            let id = format!("{}_h{h:02}_{y}", target.name());
            let lag = max_lag.unwrap_or_else(|| default_adf_lag(series.len()));
            match adf_test(&id, &series, lag) {
                Ok(r) => {
                    csv.push_str(&format!(
                        "{},{h},{y},{},{},{},{},{}\n",
                        r.series, r.lag_order, r.statistic, r.p_value, r.reject_at_5pct, r.n_obs
                    ));
                    row.push(format!("{:.3}", r.p_value));
                    vals.push(r.p_value);
                }
                Err(e) if !single => {
                    csv.push_str(&format!("{id},{h},{y},,,,,{}\n", series.len()));
                    row.push(String::new());
                    vals.push(f64::NAN);
                    let _ = e;
                }
                Err(e) => return Err(CliError::user("diag", format!("{id}: {}", e.to_string().trim_start_matches("eval: ")))),
            }
            last_series = series;
        }
        rows.push(row);
        values.push(vals);
    }
    let table = Table { title: format!("ADF p-values, {} (constant, AIC lag)", target.name()), header, rows, values, lower_is_better: true };
    let stem = match (hour, year) {
        (Some(h), Some(y)) => format!("adf_{}_h{h:02}_{y}", target.name()),
        _ => format!("adf_{}", target.name()),
    };
    run.write(dir.join(format!("{stem}.csv")), csv)?;
    run.write(dir.join(format!("{stem}_panel.svg")), table.to_svg())?;
    if single {
        run.write(dir.join(format!("{stem}_series.svg")), render_series(&stem, &last_series)?)?;
    }
    Ok(table)
}

pub fn diag_spurious(
    run: &mut Run,
    ds: &HourlyDataset,
    futures: &FuturesStore,
    seasonal: Option<&SeasonalSet>,
    noise: usize,
    dir: &Path,
) -> CliResult<backtest::SpuriousReport> {
    let seed = run.config.backtest.seed;
    let report = spurious_experiment(&run.config.backtest, ds, futures, seasonal, noise, seed)?;
    run.write(dir.join("spurious_selection.csv"), report.to_delimited())?;
    run.write(dir.join("spurious_paths.csv"), report.mean_abs_path.to_delimited())?;
    run.write(dir.join("spurious_trend.csv"), format!("brownian_trend,white_trend\n{},{}\n", report.brownian_trend, report.white_trend))?;
    if !report.mean_abs_path.horizons.is_empty() {
        run.write(dir.join("spurious_paths.svg"), render_coefficient_paths(&report.mean_abs_path)?)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// reports

/// RMSE and MAE by horizon (rows are models).
pub fn report_table9(run: &mut Run, store: &RecordStore, dir: &Path) -> CliResult<[Table; 2]> {
    let results = compute_metrics(&store.records, GroupBy::Overall)?;
    let mut tables = Vec::new();
    for (metric, name) in [(Metric::Rmse, "rmse"), (Metric::Mae, "mae")] {
        let t = render_tables(TableInput::Metrics { results: &results, metric }, TableShape::ByHorizon)?;
        run.write(dir.join(format!("table9_{name}.csv")), t.to_delimited())?;
        run.write(dir.join(format!("table9_{name}.svg")), t.to_svg())?;
        tables.push(t);
    }
    run.write(dir.join("metrics.csv"), metrics_csv(&results))?;
    Ok(tables.try_into().expect("two metrics"))
}

/// RMSE by target year, one table per horizon (or only `horizon`).
pub fn report_years(run: &mut Run, store: &RecordStore, horizon: Option<u32>, dir: &Path) -> CliResult<Vec<Table>> {
    let results = compute_metrics(&store.records, GroupBy::Year)?;
    let horizons: Vec<u32> = horizon.map_or(store.horizons(), |h| vec![h]);
    let mut tables = Vec::new();
    for h in horizons {
        let subset: Vec<MetricsResult> = results.iter().filter(|r| r.horizon == h).cloned().collect();
        if subset.is_empty() {
            return Err(CliError::user("report", format!("no records at horizon {h}")));
        }
        let t = render_tables(TableInput::Metrics { results: &subset, metric: Metric::Rmse }, TableShape::ByYear)?;
        run.write(dir.join(format!("rmse_by_year_h{h}.csv")), t.to_delimited())?;
        run.write(dir.join(format!("rmse_by_year_h{h}.svg")), t.to_svg())?;
        tables.push(t);
    }
    Ok(tables)
}

/// Stacked forecast components of one model over `days` target days starting at `from`.
pub fn report_components(
    run: &mut Run,
    store: &RecordStore,
    model: &str,
    horizon: u32,
    from: NaiveDate,
    days: i64,
    dir: &Path,
) -> CliResult<()> {
    let Some(spec) = model_by_name(model) else {
        return Err(CliError::user("report", format!("unknown model `{model}`")));
    };
    let until = from + Duration::days(days);
    let records: Vec<ForecastRecord> =
        owned(store.select(spec.name, horizon).into_iter().filter(|r| r.target >= from && r.target < until).collect());
    if records.is_empty() {
        return Err(CliError::user(
            "report",
            format!("no `{}` records at horizon {horizon} targeting {from}..{until}", spec.name),
        ));
    }
    let layers = stack_components(&records);
    let mut csv = String::from("target,hour,prediction,actual");
    for (name, _) in &layers {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (i, r) in records.iter().enumerate() {
        csv.push_str(&format!("{},{},{},{}", r.target, r.hour, r.prediction, r.actual));
        for (_, v) in &layers {
            csv.push_str(&format!(",{}", v[i]));
        }
        csv.push('\n');
    }
    let stem = format!("components_{}_h{horizon}", spec.name);
    run.write(dir.join(format!("{stem}.csv")), csv)?;
    run.write(dir.join(format!("{stem}.svg")), render_components(&records)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// demo

#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub table9_rmse: PathBuf,
    pub records_dir: PathBuf,
    pub report_dir: PathBuf,
    pub flagged_records: usize,
    pub wall_time_secs: f64,
}

/// The self-contained pipeline: synthetic data, ingestion, seasonal fits,
/// a three-model backtest over the last generated year, and the reports.
pub fn demo(run: &mut Run) -> CliResult<DemoSummary> {
    let started = Instant::now();
    let out = run.out.clone();
    let market = generate(run, &out.join("synthetic"))?;
    let (hourly, futures) = (out.join("synthetic").join(crate::synthetic::HOURLY_FILE), out.join("synthetic").join(crate::synthetic::FUTURES_FILE));
    let (dataset, store) = ingest(run, &hourly, &futures, &out.join("data"))?;
    debug_assert_eq!(dataset.content_hash(), market.dataset.content_hash());
    let seasonal = seasonal_fit(run, &dataset, &out.join("seasonal"))?;

    let last_year = dataset.end_day().year();
    let bt = &mut run.config.backtest;
    bt.models = DEMO_MODELS.iter().map(|m| m.to_string()).collect();
    bt.horizons = DEMO_HORIZONS.to_vec();
    bt.eval_start = NaiveDate::from_ymd_opt(last_year, 1, 1).expect("valid date");
    bt.eval_end = dataset.end_day();
    let output = backtest(run, &dataset, &store, Some(&seasonal), &out.join("backtest"))?;

    let report = out.join("report");
    let [rmse, _] = report_table9(run, &output.store, &report)?;
    let table9_rmse = report.join("table9_rmse.csv");
    debug_assert_eq!(fs::read_to_string(&table9_rmse).ok(), Some(rmse.to_delimited()));
    eval_dm_matrix(run, &output.store, DEMO_HORIZONS[1], &report)?;
    let from = dataset.end_day() - Duration::days(DEMO_COMPONENT_DAYS - 1);
    report_components(run, &output.store, "current", DEMO_HORIZONS[1], from, DEMO_COMPONENT_DAYS, &report)?;
    diag_adf(run, &dataset, AdfTarget::Price, None, None, None, &report)?;
    Ok(DemoSummary {
        table9_rmse,
        records_dir: out.join("backtest").join(RECORDS_DIR),
        report_dir: report,
        flagged_records: output.manifest.flagged.len(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
