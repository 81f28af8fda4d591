//! Command-line front end: configuration, subcommands and the synthetic market generator.

pub mod commands;
pub mod config;
pub mod error;
pub mod synthetic;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use epf_core::eval::GroupBy;

use commands::{AdfTarget, Run};
use config::{Config, CONFIG_ENV, THREADS_ENV};
use error::{CliError, CliResult};

pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(
    name = "midterm-epf",
    version,
    about = "Mid-term electricity price forecasting with fundamentally constrained regressions",
    after_help = "Configuration: --config FILE (or MIDTERM_EPF_CONFIG) holds `key = value` lines; \
                  --set key=value overrides single keys; explicit flags win over both. \
                  MIDTERM_EPF_THREADS sets the worker count when `threads` is not configured."
)]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic market (hourly.csv, futures.csv).
    Generate {
        #[arg(long)]
        years: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Price equals the merit-order clearing price exactly.
        #[arg(long)]
        zero_noise: bool,
    },
    /// Parse, clock-adjust and store the hourly and futures files.
    Ingest {
        #[arg(long)]
        hourly: Option<PathBuf>,
        #[arg(long)]
        futures: Option<PathBuf>,
        /// Timestamp interpretation: local or utc.
        #[arg(long)]
        tz: Option<String>,
    },
    /// Fit or apply the seasonal load and renewable models.
    #[command(subcommand)]
    Seasonal(SeasonalCommand),
    /// Rolling-window backtest over the evaluation span.
    Backtest(BacktestArgs),
    /// Metrics and Diebold-Mariano tests on a record store.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Unit-root and spurious-regression diagnostics.
    #[command(subcommand)]
    Diag(DiagCommand),
    /// Tables and charts from a record store.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Run generate, ingest, seasonal, backtest and report end to end.
    Demo {
        #[arg(long)]
        years: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SeasonalCommand {
    /// Fit the expanding-window model family.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Forecast from the model serving an origin day.
    Forecast {
        #[arg(long)]
        seasonal: Option<PathBuf>,
        #[arg(long)]
        origin: NaiveDate,
        #[arg(long, default_value_t = 360)]
        days: usize,
    },
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seasonal: Option<PathBuf>,
    /// Comma-separated model names.
    #[arg(long)]
    pub models: Option<String>,
    /// Comma-separated horizons in days.
    #[arg(long)]
    pub horizons: Option<String>,
    #[arg(long)]
    pub eval_start: Option<String>,
    #[arg(long)]
    pub eval_end: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long)]
    pub window_rows: Option<String>,
    #[arg(long)]
    pub step_days: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ByArg {
    Overall,
    Year,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// RMSE and MAE per model and horizon.
    Metrics {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "overall")]
        by: ByArg,
    },
    /// Diebold-Mariano test of `a` against `b`, or the full matrix when omitted.
    Dm {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, requires = "b")]
        a: Option<String>,
        #[arg(long, requires = "a")]
        b: Option<String>,
        #[arg(long)]
        horizon: u32,
    },
}

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Augmented Dickey-Fuller tests on daily series at fixed hours.
    Adf {
        #[arg(long)]
        data: Option<PathBuf>,
        /// price, load or res.
        #[arg(long, default_value = "price")]
        target: String,
        #[arg(long)]
        hour: Option<u8>,
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Selection frequency of white-noise and random-walk regressors.
    Spurious {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seasonal: Option<PathBuf>,
        /// Noise columns of each kind.
        #[arg(long, default_value_t = 4)]
        noise: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// RMSE and MAE by horizon, one row per model.
    Table9 {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// RMSE by target year.
    Years {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<u32>,
    },
    /// Stacked forecast components over consecutive target days.
    Components {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 30)]
        horizon: u32,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long, default_value_t = 14)]
        days: i64,
    },
    /// Diebold-Mariano p-value matrix at one horizon.
    Dm {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        horizon: u32,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Ingest { .. } => "ingest",
            Command::Seasonal(SeasonalCommand::Fit { .. }) => "seasonal fit",
            Command::Seasonal(SeasonalCommand::Forecast { .. }) => "seasonal forecast",
            Command::Backtest(_) => "backtest",
            Command::Eval(EvalCommand::Metrics { .. }) => "eval metrics",
            Command::Eval(EvalCommand::Dm { .. }) => "eval dm",
            Command::Diag(DiagCommand::Adf { .. }) => "diag adf",
            Command::Diag(DiagCommand::Spurious { .. }) => "diag spurious",
            Command::Report(ReportCommand::Table9 { .. }) => "report table9",
            Command::Report(ReportCommand::Years { .. }) => "report years",
            Command::Report(ReportCommand::Components { .. }) => "report components",
            Command::Report(ReportCommand::Dm { .. }) => "report dm",
            Command::Demo { .. } => "demo",
        }
    }

    /// Flags that map onto configuration keys.
    fn config_flags(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |key: &'static str, value: Option<String>| {
            if let Some(value) = value {
                v.push((key, value));
            }
        };
        match self {
            Command::Generate { years, seed, zero_noise } => {
                push("synthetic.years", years.map(|y| y.to_string()));
                push("seed", seed.map(|s| s.to_string()));
                push("synthetic.zero_noise", zero_noise.then(|| "true".to_string()));
            }
            Command::Ingest { hourly, futures, tz } => {
                push("hourly", hourly.as_ref().map(|p| p.display().to_string()));
                push("futures", futures.as_ref().map(|p| p.display().to_string()));
                push("tz", tz.clone());
            }
            Command::Backtest(a) => {
                push("models", a.models.clone());
                push("horizons", a.horizons.clone());
                push("eval_start", a.eval_start.clone());
                push("eval_end", a.eval_end.clone());
                push("threads", a.threads.clone());
                push("window_rows", a.window_rows.clone());
                push("step_days", a.step_days.clone());
            }
            Command::Demo { years, seed, threads } => {
                push("synthetic.years", years.map(|y| y.to_string()));
                push("seed", seed.map(|s| s.to_string()));
                push("threads", threads.map(|t| t.to_string()));
            }
            _ => {}
        }
        v
    }
}

/// Builds the layered configuration for a parsed command line.
pub fn resolve_config(cli: &Cli, env_config: Option<PathBuf>, env_threads: Option<String>) -> CliResult<Config> {
    let mut config = Config::default();
    if let Some(path) = cli.config.clone().or(env_config) {
        config.apply_file(&path)?;
    }
    config.apply_overrides(&cli.set)?;
    for (key, value) in cli.command.config_flags() {
        config.set(key, &value).map_err(|m| CliError::user("config", format!("--{}: {m}", key.replace(['_', '.'], "-"))))?;
    }
    config.apply_thread_env(env_threads.as_deref())?;
    config.validate()?;
    Ok(config)
}

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or(fallback)
        .cloned()
        .ok_or_else(|| CliError::user("config", format!("missing --{what} (or `{what} = ...` in the config file)")))
}

fn optional(flag: Option<&PathBuf>, fallback: Option<&PathBuf>) -> Option<PathBuf> {
    flag.or(fallback).cloned()
}

fn seasonal_set(run: &mut Run, dir: Option<PathBuf>) -> CliResult<Option<epf_core::seasonal::SeasonalSet>> {
    dir.map(|d| commands::read_seasonal(run, &d)).transpose()
}

fn execute(command: &Command, run: &mut Run) -> CliResult<()> {
    let out = run.out.clone();
    let cfg = run.config.clone();
    match command {
        Command::Generate { .. } => {
            commands::generate(run, &out)?;
        }
        Command::Ingest { .. } => {
            let hourly = required(None, cfg.hourly.as_ref(), "hourly")?;
            let futures = required(None, cfg.futures.as_ref(), "futures")?;
            commands::ingest(run, &hourly, &futures, &out)?;
        }
        Command::Seasonal(SeasonalCommand::Fit { data }) => {
            let (ds, _) = commands::load_data(run, &required(data.as_ref(), cfg.data.as_ref(), "data")?)?;
            commands::seasonal_fit(run, &ds, &out)?;
        }
        Command::Seasonal(SeasonalCommand::Forecast { seasonal, origin, days }) => {
            let set = commands::read_seasonal(run, &required(seasonal.as_ref(), cfg.seasonal.as_ref(), "seasonal")?)?;
            commands::seasonal_forecast(run, &set, *origin, *days, &out)?;
        }
        Command::Backtest(a) => {
            let (ds, futures) = commands::load_data(run, &required(a.data.as_ref(), cfg.data.as_ref(), "data")?)?;
            let set = seasonal_set(run, optional(a.seasonal.as_ref(), cfg.seasonal.as_ref()))?;
            commands::backtest(run, &ds, &futures, set.as_ref(), &out)?;
        }
        Command::Eval(EvalCommand::Metrics { records, by }) => {
            let store = commands::load_records(run, &required(records.as_ref(), cfg.records.as_ref(), "records")?)?;
            let by = match by {
                ByArg::Overall => GroupBy::Overall,
                ByArg::Year => GroupBy::Year,
            };
            commands::eval_metrics(run, &store, by, &out)?;
        }
        Command::Eval(EvalCommand::Dm { records, a, b, horizon }) => {
            let store = commands::load_records(run, &required(records.as_ref(), cfg.records.as_ref(), "records")?)?;
            match (a, b) {
                (Some(a), Some(b)) => commands::eval_dm_pair(run, &store, a, b, *horizon, &out)?,
                _ => {
                    commands::eval_dm_matrix(run, &store, *horizon, &out)?;
                }
            }
        }
        Command::Diag(DiagCommand::Adf { data, target, hour, year, max_lag }) => {
            let target: AdfTarget = target.parse().map_err(|m: String| CliError::user("diag", m))?;
            let (ds, _) = commands::load_data(run, &required(data.as_ref(), cfg.data.as_ref(), "data")?)?;
            commands::diag_adf(run, &ds, target, *hour, *year, *max_lag, &out)?;
        }
        Command::Diag(DiagCommand::Spurious { data, seasonal, noise }) => {
            let (ds, futures) = commands::load_data(run, &required(data.as_ref(), cfg.data.as_ref(), "data")?)?;
            let set = seasonal_set(run, optional(seasonal.as_ref(), cfg.seasonal.as_ref()))?;
            commands::diag_spurious(run, &ds, &futures, set.as_ref(), *noise, &out)?;
        }
        Command::Report(ReportCommand::Table9 { records }) => {
            let store = commands::load_records(run, &required(records.as_ref(), cfg.records.as_ref(), "records")?)?;
            commands::report_table9(run, &store, &out)?;
        }
        Command::Report(ReportCommand::Years { records, horizon }) => {
            let store = commands::load_records(run, &required(records.as_ref(), cfg.records.as_ref(), "records")?)?;
            commands::report_years(run, &store, *horizon, &out)?;
        }
        Command::Report(ReportCommand::Components { records, model, horizon, from, days }) => {
            let store = commands::load_records(run, &required(records.as_ref(), cfg.records.as_ref(), "records")?)?;
            commands::report_components(run, &store, model, *horizon, *from, *days, &out)?;
        }
        Command::Report(ReportCommand::Dm { records, horizon }) => {
            let store = commands::load_records(run, &required(records.as_ref(), cfg.records.as_ref(), "records")?)?;
            commands::eval_dm_matrix(run, &store, *horizon, &out)?;
        }
        Command::Demo { .. } => {
            let summary = commands::demo(run)?;
            println!(
                "demo finished in {:.1} s: {} ({} flagged records)",
                summary.wall_time_secs,
                summary.table9_rmse.display(),
                summary.flagged_records
            );
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
///
/// `env` supplies `MIDTERM_EPF_CONFIG` and `MIDTERM_EPF_THREADS`.
pub fn run_with_env<I, T>(argv: I, env: impl Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    1
                }
            };
        }
    };
    let arguments: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let config = resolve_config(&cli, env(CONFIG_ENV).map(PathBuf::from), env(THREADS_ENV));
    let out = cli
        .out
        .clone()
        .or_else(|| config.as_ref().ok().and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let mut run = Run::new(cli.command.name(), arguments, config, out);
    let outcome = execute(&cli.command, &mut run);
    let manifest = run.finish(outcome.as_ref().map(|_| ()));
    match (outcome, manifest) {
        (Ok(()), Ok(path)) => {
            let mut stdout = std::io::stdout().lock();
            for p in run.outputs() {
                let _ = writeln!(stdout, "wrote {}", display(p));
            }
            let _ = writeln!(stdout, "wrote {}", display(&path));
            0
        }
        (Err(e), _) | (Ok(()), Err(e)) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// [`run_with_env`] with the process environment.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(argv, |k| std::env::var(k).ok())
}
