//! The model catalog and per-origin fitting and forecasting.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::features::{
    add_noise_regressors, assemble_design, ColumnInfo, Component, DesignSpec, FeatureContext, FeatureError, FuelAlignment, NoisePanel,
    ResLoadAlignment, N_COMPONENTS,
};
use crate::fundamentals::CoefficientBounds;
use crate::ingest::HourlyDataset;
use crate::solver::{fit_path, FitResult, SolverConfig};

/// Record flags.
pub const FLAG_NONCONVERGED: u8 = 1;
pub const FLAG_STALE_QUOTE: u8 = 2;
pub const FLAG_INSUFFICIENT_HISTORY: u8 = 4;
pub const FLAG_MISSING_SEASONAL: u8 = 8;
pub const FLAG_SOLVER_ERROR: u8 = 16;
/// No prediction could be produced.
pub const FLAG_FAILED: u8 = 32;

/// Describes a flag set as `a|b|c`.
pub fn describe_flags(flags: u8) -> String {
    let names = [
        (FLAG_NONCONVERGED, "nonconverged"),
        (FLAG_STALE_QUOTE, "stale_quote"),
        (FLAG_INSUFFICIENT_HISTORY, "insufficient_history"),
        (FLAG_MISSING_SEASONAL, "missing_seasonal"),
        (FLAG_SOLVER_ERROR, "solver_error"),
        (FLAG_FAILED, "failed"),
    ];
    let parts: Vec<&str> = names.iter().filter(|(f, _)| flags & f != 0).map(|(_, n)| *n).collect();
    parts.join("|")
}

/// Variable-group check marks of a catalog row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableGroups {
    pub week_dummies: bool,
    pub annual_seasons: bool,
    pub autoreg: bool,
    pub res_load: bool,
    pub fuels: bool,
}

/// Method check marks of a catalog row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodFlags {
    pub constrained: bool,
    pub differencing: bool,
    pub current: bool,
    /// Current alignment for RES/load only, fuels at their lags.
    pub short_term_hybrid: bool,
    pub portfolio: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// CLI name.
    pub name: &'static str,
    /// Display name.
    pub label: &'static str,
    pub variables: VariableGroups,
    pub method: MethodFlags,
}

impl ModelSpec {
    pub fn is_naive(&self) -> bool {
        self.variables == VariableGroups { week_dummies: false, annual_seasons: false, autoreg: false, res_load: false, fuels: false }
    }

    /// The realized regressor layout, `None` for the naive benchmark.
    pub fn design(&self) -> Option<DesignSpec> {
        if self.is_naive() {
            return None;
        }
        let v = self.variables;
        let m = self.method;
        let res_load = v.res_load.then(|| {
            if m.current || m.short_term_hybrid {
                ResLoadAlignment::Current
            } else if v.autoreg || v.fuels {
                ResLoadAlignment::DayAhead
            } else {
                // RES/load without any origin-dated regressor: seasonal forecasts in estimation and prediction.
                ResLoadAlignment::Seasonal
            }
        });
        let fuels = v.fuels.then(|| {
            if m.portfolio {
                FuelAlignment::Portfolio
            } else if m.current && !m.short_term_hybrid {
                FuelAlignment::Current
            } else {
                FuelAlignment::FrontMonth
            }
        });
        Some(DesignSpec {
            week_dummies: v.week_dummies,
            annual_seasons: v.annual_seasons,
            autoreg: v.autoreg,
            res_load,
            fuels,
            differencing: m.differencing,
        })
    }

    /// Coefficient bounds the model is fitted under.
    pub fn effective_bounds(&self, bounds: &CoefficientBounds) -> CoefficientBounds {
        if self.method.constrained {
            bounds.clone()
        } else {
            CoefficientBounds::unconstrained()
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

const fn vars(week_dummies: bool, annual_seasons: bool, autoreg: bool, res_load: bool, fuels: bool) -> VariableGroups {
    VariableGroups { week_dummies, annual_seasons, autoreg, res_load, fuels }
}

const fn method(constrained: bool, differencing: bool, current: bool, short_term_hybrid: bool, portfolio: bool) -> MethodFlags {
    MethodFlags { constrained, differencing, current, short_term_hybrid, portfolio }
}

/// All thirteen model variants.
pub fn model_catalog() -> Vec<ModelSpec> {
    let all = vars(true, true, true, true, true);
    let none = method(false, false, false, false, false);
    let constr = method(true, false, false, false, false);
    let current = method(true, false, true, false, false);
    vec![
        ModelSpec { name: "naive", label: "naive", variables: vars(false, false, false, false, false), method: none },
        ModelSpec { name: "wd", label: "WD", variables: vars(true, false, false, false, false), method: none },
        ModelSpec { name: "expert", label: "Expert", variables: all, method: none },
        ModelSpec { name: "constr", label: "Constr", variables: all, method: constr },
        ModelSpec { name: "constr-diff", label: "ConstrDiff", variables: all, method: method(true, true, false, false, false) },
        ModelSpec { name: "portfolio", label: "Portfolio", variables: all, method: method(true, false, false, false, true) },
        ModelSpec { name: "short-term", label: "Short-term", variables: all, method: method(true, false, true, true, false) },
        ModelSpec { name: "current", label: "Current", variables: all, method: current },
        ModelSpec { name: "wd-rl", label: "WD+RL", variables: vars(true, false, false, true, false), method: constr },
        ModelSpec { name: "wd-rl-c", label: "WD+RL+C", variables: vars(true, false, false, true, false), method: current },
        ModelSpec { name: "wd-arl-c", label: "WD+ARL+C", variables: vars(true, false, true, true, false), method: current },
        ModelSpec { name: "wd-f", label: "WD+F", variables: vars(true, false, false, false, true), method: constr },
        ModelSpec { name: "wd-f-c", label: "WD+F+C", variables: vars(true, false, false, false, true), method: current },
    ]
}

/// Looks up a catalog entry by CLI name or display label.
pub fn model_by_name(name: &str) -> Option<ModelSpec> {
    model_catalog().into_iter().find(|m| m.name == name || m.label.eq_ignore_ascii_case(name))
}

impl FromStr for ModelSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        model_by_name(s).ok_or_else(|| {
            let names: Vec<&str> = model_catalog().iter().map(|m| m.name).collect();
            format!("unknown model `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// The seasonal-naive benchmark: Tue–Thu targets repeat the origin's price,
/// other weekdays repeat the latest same-weekday price on or before the origin.
pub fn naive_forecast(dataset: &HourlyDataset, origin: NaiveDate, h: u32, hour: u8) -> Result<f64, FeatureError> {
    let target = origin + Duration::days(h as i64);
    let t = dataset.day_index(origin).ok_or(FeatureError::OutOfRange(origin))?;
    let source = match target.weekday() {
        Weekday::Tue | Weekday::Wed | Weekday::Thu => t,
        wd => {
            let back = (origin.weekday().num_days_from_monday() + 7 - wd.num_days_from_monday()) % 7;
            t.checked_sub(back as usize)
                .ok_or_else(|| FeatureError::InsufficientHistory(format!("no {wd:?} on or before {origin} in the dataset")))?
        }
    };
    Ok(dataset.price(source, hour))
}

#[derive(Debug, Clone, PartialEq)]
pub enum HourModel {
    Naive(f64),
    Regression {
        columns: Vec<ColumnInfo>,
        prediction_row: Vec<f64>,
        level: Option<f64>,
        fit: FitResult,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourFit {
    pub hour: u8,
    pub model: HourModel,
    pub flags: u8,
}

/// The 24 hourly fits of one model at one origin and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyFit {
    pub model: String,
    pub origin: NaiveDate,
    pub horizon: u32,
    /// Day index range `[first, last]` of the estimation origins shared by all hours.
    pub window: Option<(usize, usize)>,
    pub hours: Vec<HourFit>,
}

/// One hourly forecast with its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub origin: NaiveDate,
    pub horizon: u32,
    pub target: NaiveDate,
    pub hour: u8,
    /// EUR/MWh; NaN for failed cells.
    pub prediction: f64,
    /// Observed price at the target, NaN when unknown.
    pub actual: f64,
    pub intercept: f64,
    /// Contribution per [`Component`], indexed by `Component::index`.
    pub components: [f64; N_COMPONENTS],
    pub flags: u8,
}

impl ForecastRecord {
    pub fn error(&self) -> f64 {
        self.actual - self.prediction
    }

    pub fn component(&self, c: Component) -> f64 {
        self.components[c.index()]
    }

    pub fn is_failed(&self) -> bool {
        self.flags & FLAG_FAILED != 0
    }
}

fn flag_for(err: &FeatureError) -> u8 {
    match err {
        FeatureError::StaleQuote { .. } => FLAG_STALE_QUOTE,
        FeatureError::MissingSeasonal(_) => FLAG_MISSING_SEASONAL,
        FeatureError::InsufficientHistory(_) | FeatureError::OutOfRange(_) | FeatureError::InvalidHorizon(_) => FLAG_INSUFFICIENT_HISTORY,
    }
}

/// Options shared by every fit of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub bounds: CoefficientBounds,
    pub solver: SolverConfig,
    pub window: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { bounds: CoefficientBounds::table4(), solver: SolverConfig::default(), window: 3 * 365 }
    }
}

/// Fits the 24 hourly models of `spec` for forecasts issued at `origin` for `origin + h`.
///
/// Failures are per hour: a failed hour is recorded with flags, the others proceed.
pub fn fit_daily(
    spec: &ModelSpec,
    ctx: &FeatureContext<'_>,
    options: &FitOptions,
    origin: NaiveDate,
    h: u32,
    noise: Option<&NoisePanel>,
) -> DailyFit {
    let mut hours = Vec::with_capacity(24);
    let mut window = None;
    let Some(design_spec) = spec.design() else {
        for hour in 1..=24u8 {
            let (model, flags) = match naive_forecast(ctx.dataset, origin, h, hour) {
                Ok(v) => (HourModel::Naive(v), 0),
                Err(e) => (HourModel::Failed(e.to_string()), flag_for(&e) | FLAG_FAILED),
            };
            hours.push(HourFit { hour, model, flags });
        }
        return DailyFit { model: spec.name.to_string(), origin, horizon: h, window, hours };
    };
    let bounds = spec.effective_bounds(&options.bounds);
    for hour in 1..=24u8 {
        let design = assemble_design(ctx, &design_spec, &bounds, origin, h, hour, options.window).map(|d| match noise {
            Some(panel) => {
                let t = ctx.dataset.day_index(origin).expect("design origin is in the dataset");
                add_noise_regressors(&d, panel, t)
            }
            None => d,
        });
        let design = match design {
            Ok(d) => d,
            Err(e) => {
                hours.push(HourFit { hour, model: HourModel::Failed(e.to_string()), flags: flag_for(&e) | FLAG_FAILED });
                continue;
            }
        };
        window = Some((design.row_days[0], *design.row_days.last().expect("non-empty window")));
        match fit_path(&design.x, &design.y, &design.bounds(), &options.solver) {
            Ok(fit) => {
                let flags = if fit.converged { 0 } else { FLAG_NONCONVERGED };
                hours.push(HourFit {
                    hour,
                    model: HourModel::Regression { columns: design.columns, prediction_row: design.prediction, level: design.level, fit },
                    flags,
                });
            }
            Err(e) => hours.push(HourFit { hour, model: HourModel::Failed(e.to_string()), flags: FLAG_SOLVER_ERROR | FLAG_FAILED }),
        }
    }
    DailyFit { model: spec.name.to_string(), origin, horizon: h, window, hours }
}

/// Turns a daily fit into 24 records (actuals filled from `dataset` when the target is covered).
pub fn forecast_daily(fit: &DailyFit, dataset: Option<&HourlyDataset>) -> Vec<ForecastRecord> {
    let target = fit.origin + Duration::days(fit.horizon as i64);
    let target_index = dataset.and_then(|d| d.day_index(target).map(|i| (d, i)));
    fit.hours
        .iter()
        .map(|hf| {
            let mut components = [0.0; N_COMPONENTS];
            let (prediction, intercept) = match &hf.model {
                HourModel::Naive(v) => {
                    components[Component::Level.index()] = *v;
                    (*v, 0.0)
                }
                HourModel::Regression { columns, prediction_row, level, fit } => {
                    for ((c, b), x) in columns.iter().zip(&fit.coefficients).zip(prediction_row) {
                        components[c.group.index()] += b * x;
                    }
                    if let Some(l) = level {
                        components[Component::Level.index()] = *l;
                    }
                    (components.iter().fold(fit.intercept, |acc, c| acc + c), fit.intercept)
                }
                HourModel::Failed(_) => (f64::NAN, 0.0),
            };
            let actual = target_index.map_or(f64::NAN, |(d, i)| d.price(i, hf.hour));
            ForecastRecord {
                model: fit.model.clone(),
                origin: fit.origin,
                horizon: fit.horizon,
                target,
                hour: hf.hour,
                prediction,
                actual,
                intercept,
                components,
                flags: hf.flags,
            }
        })
        .collect()
}

/// Scaled coefficients of one hour across horizons (rows) and regressors (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPath {
    pub model: String,
    pub hour: u8,
    pub horizons: Vec<u32>,
    pub columns: Vec<String>,
    /// `horizons × columns`; NaN where a column is absent at that horizon or the fit failed.
    pub scaled: Vec<Vec<f64>>,
}

impl CoefficientPath {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.scaled.iter().map(|r| r[j]).collect())
    }

    pub fn to_delimited(&self) -> String {
        let mut s = format!("horizon,{}\n", self.columns.join(","));
        for (h, row) in self.horizons.iter().zip(&self.scaled) {
            s.push_str(&h.to_string());
            for v in row {
                if v.is_nan() {
                    s.push(',');
                } else {
                    s.push_str(&format!(",{v}"));
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Builds a coefficient path from already fitted daily models (one per horizon).
pub fn coefficient_path_from_fits(model: &str, hour: u8, fits: &[DailyFit]) -> CoefficientPath {
    let mut columns: Vec<String> = Vec::new();
    let mut per_h: Vec<(u32, Vec<(String, f64)>)> = Vec::new();
    for fit in fits {
        let mut entries = Vec::new();
        if let Some(HourFit { model: HourModel::Regression { columns: cols, fit: r, .. }, .. }) = fit.hours.iter().find(|hf| hf.hour == hour) {
            for (c, v) in cols.iter().zip(&r.coefficients_scaled) {
                if !columns.contains(&c.name) {
                    columns.push(c.name.clone());
                }
                entries.push((c.name.clone(), *v));
            }
        }
        per_h.push((fit.horizon, entries));
    }
    let scaled = per_h
        .iter()
        .map(|(_, entries)| {
            columns.iter().map(|c| entries.iter().find(|(n, _)| n == c).map_or(f64::NAN, |(_, v)| *v)).collect()
        })
        .collect();
    CoefficientPath { model: model.to_string(), hour, horizons: per_h.iter().map(|(h, _)| *h).collect(), columns, scaled }
}

/// Fits `spec` at a fixed origin for each horizon and tabulates the scaled coefficients of `hour`.
pub fn coefficient_path(
    spec: &ModelSpec,
    ctx: &FeatureContext<'_>,
    options: &FitOptions,
    horizons: &[u32],
    origin: NaiveDate,
    hour: u8,
) -> CoefficientPath {
    let fits: Vec<DailyFit> = horizons.iter().map(|&h| fit_daily(spec, ctx, options, origin, h, None)).collect();
    coefficient_path_from_fits(spec.name, hour, &fits)
}
