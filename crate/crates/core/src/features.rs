//! Regressor construction: calendar dummies, price lags, RES/load, fuel
//! futures, portfolio averages, and the per-hour design matrices built from them.

use std::fmt;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fundamentals::{BoundGroup, CoefficientBounds, Interval};
use crate::ingest::{Commodity, FuturesStore, HourlyDataset, MAX_MATURITY};
use crate::seasonal::SeasonalSet;

/// Days per month when mapping horizons to futures maturities.
pub const DAYS_PER_MONTH: u32 = 30;
/// Averaging window of the portfolio features.
pub const PORTFOLIO_AVERAGE_DAYS: i64 = 30;
/// Largest lag (days) among the autoregressive terms.
pub const MAX_PRICE_LAG: usize = 6;
/// Extra history the fuel panel keeps before the dataset start (portfolio lags reach back 12 months).
const PANEL_LEAD_DAYS: i64 = 12 * DAYS_PER_MONTH as i64 + PORTFOLIO_AVERAGE_DAYS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("no {commodity} quote for maturity {maturity} on or before {date}")]
    StaleQuote { commodity: Commodity, date: NaiveDate, maturity: u8 },
    #[error("no seasonal model serves origin {0}")]
    MissingSeasonal(NaiveDate),
    #[error("{0} is outside the dataset")]
    OutOfRange(NaiveDate),
    #[error("invalid horizon {0}")]
    InvalidHorizon(u32),
}

impl FeatureError {
    pub fn is_stale_quote(&self) -> bool {
        matches!(self, FeatureError::StaleQuote { .. })
    }
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Contribution groups of a forecast; every design column belongs to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    WeekDummies,
    AnnualSeasons,
    Autoreg,
    Res,
    Load,
    Co2,
    Gas,
    Coal,
    Oil,
    Noise,
    /// Re-integration level of differenced models.
    Level,
}

pub const N_COMPONENTS: usize = 11;

impl Component {
    pub const ALL: [Component; N_COMPONENTS] = [
        Component::WeekDummies,
        Component::AnnualSeasons,
        Component::Autoreg,
        Component::Res,
        Component::Load,
        Component::Co2,
        Component::Gas,
        Component::Coal,
        Component::Oil,
        Component::Noise,
        Component::Level,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Component::WeekDummies => "week_dummies",
            Component::AnnualSeasons => "annual_seasons",
            Component::Autoreg => "autoreg",
            Component::Res => "res",
            Component::Load => "load",
            Component::Co2 => "co2",
            Component::Gas => "gas",
            Component::Coal => "coal",
            Component::Oil => "oil",
            Component::Noise => "noise",
            Component::Level => "level",
        }
    }

    fn bound_group(self) -> Option<BoundGroup> {
        match self {
            Component::WeekDummies | Component::AnnualSeasons => Some(BoundGroup::Calendar),
            Component::Autoreg => Some(BoundGroup::Autoregressive),
            Component::Res => Some(BoundGroup::Res),
            Component::Load => Some(BoundGroup::Load),
            Component::Co2 => Some(BoundGroup::Co2),
            Component::Gas => Some(BoundGroup::Gas),
            Component::Coal => Some(BoundGroup::Coal),
            Component::Oil => Some(BoundGroup::Oil),
            Component::Noise | Component::Level => None,
        }
    }

    fn of_commodity(c: Commodity) -> Component {
        match c {
            Commodity::Co2 => Component::Co2,
            Commodity::Gas => Component::Gas,
            Commodity::Coal => Component::Coal,
            Commodity::Oil => Component::Oil,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// When the information in a design cell becomes known, relative to the row's origin `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Deterministic function of the target date.
    Calendar,
    /// Observed on or before the origin.
    Origin,
    /// Day-ahead forecast for `t + 1`, published at `t`.
    DayAheadForecast,
    /// Seasonal model trained strictly before the forecast origin.
    SeasonalForecast,
    /// Actual value dated at the target `t + h`; only legal in estimation rows of current-alignment models.
    TargetDated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CalendarFeatures {
    pub mon: bool,
    pub fri: bool,
    pub sat: bool,
    pub sun: bool,
    pub winter: bool,
    pub spring: bool,
    pub summer: bool,
}

impl CalendarFeatures {
    pub fn week(&self) -> [f64; 4] {
        [self.mon, self.fri, self.sat, self.sun].map(f64::from)
    }

    pub fn seasons(&self) -> [f64; 3] {
        [self.winter, self.spring, self.summer].map(f64::from)
    }
}

/// Weekday dummies (Tue–Thu base) and meteorological-season dummies (autumn base).
pub fn calendar_features(date: NaiveDate) -> CalendarFeatures {
    let wd = date.weekday();
    let m = date.month();
    CalendarFeatures {
        mon: wd == Weekday::Mon,
        fri: wd == Weekday::Fri,
        sat: wd == Weekday::Sat,
        sun: wd == Weekday::Sun,
        winter: matches!(m, 12 | 1 | 2),
        spring: matches!(m, 3..=5),
        summer: matches!(m, 6..=8),
    }
}

/// `[Price_t, Price_{t-1}, Price_{t-6}, PriceLastHour_t]` for hour `hour` at day index `t`.
pub fn autoregressive_features(dataset: &HourlyDataset, t: usize, hour: u8) -> Result<[f64; 4]> {
    if t < MAX_PRICE_LAG || t >= dataset.n_days() {
        return Err(FeatureError::InsufficientHistory(format!(
            "autoregressive terms at day index {t} need indices {}..={t} of {}",
            t as isize - MAX_PRICE_LAG as isize,
            dataset.n_days()
        )));
    }
    Ok([dataset.price(t, hour), dataset.price(t - 1, hour), dataset.price(t - MAX_PRICE_LAG, hour), dataset.price(t, 24)])
}

/// Futures maturity (months) matched to a horizon in days: `⌈h/30⌉` clamped to `1..=13`.
pub fn maturity_for_horizon(h: u32) -> u8 {
    (h.div_ceil(DAYS_PER_MONTH)).clamp(1, MAX_MATURITY as u32) as u8
}

/// Carry-forward quotes and 30-day trailing means per day, commodity and maturity.
#[derive(Debug, Clone)]
pub struct FuelPanel {
    start: NaiveDate,
    n_days: usize,
    /// `[day][commodity][maturity-1]`, NaN when unavailable.
    quotes: Vec<[[f64; 13]; 4]>,
    trailing: Vec<[[f64; 13]; 4]>,
}

impl FuelPanel {
    /// Builds the panel over `[first - lead, last]`, where `lead` covers the portfolio lags.
    pub fn new(store: &FuturesStore, first: NaiveDate, last: NaiveDate) -> Self {
        let start = first - Duration::days(PANEL_LEAD_DAYS);
        let n_days = ((last - start).num_days() + 1).max(0) as usize;
        let mut quotes = vec![[[f64::NAN; 13]; 4]; n_days];
        let mut trailing = vec![[[f64::NAN; 13]; 4]; n_days];
        if !store.is_empty() {
            for d in 0..n_days {
                let date = start + Duration::days(d as i64);
                for (ci, &c) in Commodity::ALL.iter().enumerate() {
                    for m in 1..=MAX_MATURITY {
                        if let Ok(v) = store.last_quote_on_or_before(date, c, m) {
                            quotes[d][ci][m as usize - 1] = v;
                        }
                        if let Some(v) = store.trailing_mean(date, PORTFOLIO_AVERAGE_DAYS, c, m) {
                            trailing[d][ci][m as usize - 1] = v;
                        }
                    }
                }
            }
        }
        FuelPanel { start, n_days, quotes, trailing }
    }

    fn slot(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.n_days).then_some(d as usize)
    }

    fn lookup(&self, table: &[[[f64; 13]; 4]], date: NaiveDate, commodity: Commodity, maturity: u8) -> Result<f64> {
        let stale = FeatureError::StaleQuote { commodity, date, maturity };
        let ci = Commodity::ALL.iter().position(|c| *c == commodity).expect("known commodity");
        let d = self.slot(date).ok_or_else(|| stale.clone())?;
        let v = table[d][ci][maturity as usize - 1];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(stale)
        }
    }

    /// Latest settle on or before `date` (carry-forward rules of the store).
    pub fn quote(&self, date: NaiveDate, commodity: Commodity, maturity: u8) -> Result<f64> {
        self.lookup(&self.quotes, date, commodity, maturity)
    }

    /// Mean settle over the 30 calendar days ending at `date`.
    pub fn trailing_mean(&self, date: NaiveDate, commodity: Commodity, maturity: u8) -> Result<f64> {
        self.lookup(&self.trailing, date, commodity, maturity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuelMode {
    /// Maturity 1 quoted at the origin.
    FrontMonth,
    /// Maturity `⌈h/30⌉` quoted at the origin.
    MaturityH,
    /// Maturity 1 quoted at the target date (estimation only).
    Contemporaneous,
}

/// `[co2, gas, coal, oil]` prices under the given mode.
pub fn fuel_features(panel: &FuelPanel, origin: NaiveDate, mode: FuelMode, h: u32, target: NaiveDate) -> Result<[f64; 4]> {
    let (date, maturity) = match mode {
        FuelMode::FrontMonth => (origin, 1),
        FuelMode::MaturityH => (origin, maturity_for_horizon(h)),
        FuelMode::Contemporaneous => (target, 1),
    };
    let mut out = [0.0; 4];
    for (o, c) in out.iter_mut().zip(Commodity::ALL) {
        *o = panel.quote(date, c, maturity)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Delivery {
    D0,
    Dm1,
    Dp1,
}

impl Delivery {
    pub fn as_str(self) -> &'static str {
        match self {
            Delivery::D0 => "D0",
            Delivery::Dm1 => "Dm1",
            Delivery::Dp1 => "Dp1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioEntry {
    pub delivery: Delivery,
    pub lag_months: u8,
    pub maturity_months: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioLagSpec {
    pub horizon_months: u8,
    pub entries: Vec<PortfolioEntry>,
}

/// Lag structure of the portfolio features for a horizon in days.
///
/// With `m = min(⌊h/30⌋, 12)` horizon months: the delivery month `D0` is
/// reached by maturity `lag` for lags `max(m,1)..=12`, `D-1` by `lag-1` for
/// lags `max(m,2)..=12`, and `D+1` by `lag+1` for lags `m..=11`.
pub fn portfolio_lag_spec(h: u32) -> PortfolioLagSpec {
    let m = (h / DAYS_PER_MONTH).min(12) as u8;
    let mut entries = Vec::new();
    for lag in m.max(1)..=12 {
        entries.push(PortfolioEntry { delivery: Delivery::D0, lag_months: lag, maturity_months: lag });
    }
    for lag in m.max(2)..=12 {
        entries.push(PortfolioEntry { delivery: Delivery::Dm1, lag_months: lag, maturity_months: lag - 1 });
    }
    for lag in m..=11 {
        entries.push(PortfolioEntry { delivery: Delivery::Dp1, lag_months: lag, maturity_months: lag + 1 });
    }
    PortfolioLagSpec { horizon_months: m, entries }
}

/// Trailing 30-day means of the contracts in the lag structure, observed at `origin - 30·lag`.
pub fn portfolio_features(panel: &FuelPanel, origin: NaiveDate, h: u32, commodity: Commodity) -> Result<Vec<f64>> {
    portfolio_lag_spec(h)
        .entries
        .iter()
        .map(|e| {
            let date = origin - Duration::days(DAYS_PER_MONTH as i64 * e.lag_months as i64);
            panel.trailing_mean(date, commodity, e.maturity_months).map_err(|err| match err {
                FeatureError::StaleQuote { .. } => FeatureError::InsufficientHistory(format!(
                    "portfolio feature {commodity} {} lag {} needs quotes before {date}",
                    e.delivery.as_str(),
                    e.lag_months
                )),
                other => other,
            })
        })
        .collect()
}

/// How RES and load enter a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResLoadAlignment {
    /// Day-ahead forecasts for `t + 1` in both estimation and prediction.
    DayAhead,
    /// Seasonal forecasts for the target date in both estimation and prediction.
    Seasonal,
    /// Actuals at the target date in estimation, seasonal forecasts in prediction.
    Current,
}

/// How fuel prices enter a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuelAlignment {
    /// Front-month at the origin in both estimation and prediction.
    FrontMonth,
    /// Front-month at the target date in estimation, maturity-matched future at the origin in prediction.
    Current,
    /// Portfolio averages at the origin.
    Portfolio,
}

/// Which regressor groups a design contains and how they are aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub week_dummies: bool,
    pub annual_seasons: bool,
    pub autoreg: bool,
    pub res_load: Option<ResLoadAlignment>,
    pub fuels: Option<FuelAlignment>,
    pub differencing: bool,
}

impl DesignSpec {
    pub fn needs_seasonal(&self) -> bool {
        matches!(self.res_load, Some(ResLoadAlignment::Seasonal | ResLoadAlignment::Current))
    }

    pub fn needs_futures(&self) -> bool {
        self.fuels.is_some()
    }

    /// Whether any estimation cell is dated at the target.
    pub fn uses_target_dated(&self) -> bool {
        matches!(self.res_load, Some(ResLoadAlignment::Current)) || matches!(self.fuels, Some(FuelAlignment::Current))
    }

    /// Days of price history needed before the first estimation origin.
    pub fn history_days(&self) -> usize {
        MAX_PRICE_LAG + usize::from(self.differencing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub group: Component,
    pub bound: Interval,
    pub estimation: Provenance,
    pub prediction: Provenance,
}

/// Shared read-only inputs for design construction.
#[derive(Debug, Clone)]
pub struct FeatureContext<'a> {
    pub dataset: &'a HourlyDataset,
    pub fuels: FuelPanel,
    pub seasonal: Option<&'a SeasonalSet>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(dataset: &'a HourlyDataset, futures: &FuturesStore, seasonal: Option<&'a SeasonalSet>) -> Self {
        FeatureContext { dataset, fuels: FuelPanel::new(futures, dataset.start_day(), dataset.end_day()), seasonal }
    }
}

/// Estimation matrix for one model, origin, horizon and hour, with its paired prediction row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub origin: NaiveDate,
    pub horizon: u32,
    pub hour: u8,
    pub columns: Vec<ColumnInfo>,
    /// `rows × columns` regressors in physical units.
    pub x: DMatrix<f64>,
    /// Response: the price at `t + h`, or `Price_{t+h} - Price_t` when differenced.
    pub y: Vec<f64>,
    /// Dataset day index of each row's origin `t`.
    pub row_days: Vec<usize>,
    /// Regressors for the forecast of `origin + h`, built from information at the origin.
    pub prediction: Vec<f64>,
    /// Level added back to the predicted difference (`Price_T`), for differenced designs.
    pub level: Option<f64>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn bounds(&self) -> Vec<Interval> {
        self.columns.iter().map(|c| c.bound).collect()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn target(&self) -> NaiveDate {
        self.origin + Duration::days(self.horizon as i64)
    }

    /// Writes the matrix as delimited text: one line per estimation row, then the prediction row.
    pub fn write_delimited<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "row,origin_index,response")?;
        for c in &self.columns {
            write!(w, ",{}", c.name)?;
        }
        writeln!(w)?;
        for r in 0..self.n_rows() {
            write!(w, "{r},{},{}", self.row_days[r], self.y[r])?;
            for j in 0..self.n_columns() {
                write!(w, ",{}", self.x[(r, j)])?;
            }
            writeln!(w)?;
        }
        write!(w, "prediction,{},", self.origin)?;
        for v in &self.prediction {
            write!(w, ",{v}")?;
        }
        writeln!(w)
    }
}

struct ColumnBuilder<'b> {
    bounds: &'b CoefficientBounds,
    columns: Vec<ColumnInfo>,
}

impl ColumnBuilder<'_> {
    fn push(&mut self, name: impl Into<String>, group: Component, estimation: Provenance, prediction: Provenance) {
        let bound = group.bound_group().map_or(Interval::new(0.0, f64::INFINITY), |g| self.bounds.get(g));
        self.columns.push(ColumnInfo { name: name.into(), group, bound, estimation, prediction });
    }
}

fn design_columns(spec: &DesignSpec, h: u32, bounds: &CoefficientBounds) -> Vec<ColumnInfo> {
    use Provenance::*;
    let mut b = ColumnBuilder { bounds, columns: Vec::new() };
    if spec.week_dummies {
        for n in ["mon", "fri", "sat", "sun"] {
            b.push(n, Component::WeekDummies, Calendar, Calendar);
        }
    }
    if spec.annual_seasons {
        for n in ["winter", "spring", "summer"] {
            b.push(n, Component::AnnualSeasons, Calendar, Calendar);
        }
    }
    if spec.autoreg {
        for n in ["price_t", "price_t-1", "price_t-6", "price_last_hour_t"] {
            b.push(n, Component::Autoreg, Origin, Origin);
        }
    }
    if let Some(a) = spec.res_load {
        let (e, p) = match a {
            ResLoadAlignment::DayAhead => (DayAheadForecast, DayAheadForecast),
            ResLoadAlignment::Seasonal => (SeasonalForecast, SeasonalForecast),
            ResLoadAlignment::Current => (TargetDated, SeasonalForecast),
        };
        b.push("res", Component::Res, e, p);
        b.push("load", Component::Load, e, p);
    }
    if let Some(a) = spec.fuels {
        match a {
            FuelAlignment::FrontMonth | FuelAlignment::Current => {
                let e = if a == FuelAlignment::Current { TargetDated } else { Origin };
                for c in Commodity::ALL {
                    b.push(c.as_str(), Component::of_commodity(c), e, Origin);
                }
            }
            FuelAlignment::Portfolio => {
                let lags = portfolio_lag_spec(h);
                for c in Commodity::ALL {
                    for e in &lags.entries {
                        b.push(
                            format!("{}_{}_lag{}_m{}", c.as_str(), e.delivery.as_str(), e.lag_months, e.maturity_months),
                            Component::of_commodity(c),
                            Origin,
                            Origin,
                        );
                    }
                }
            }
        }
    }
    b.columns
}

/// Column schema of a design without building it.
pub fn design_schema(spec: &DesignSpec, h: u32, bounds: &CoefficientBounds) -> Vec<ColumnInfo> {
    design_columns(spec, h, bounds)
}

/// Which row is being built: an estimation row or the prediction row.
#[derive(Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Estimation,
    Prediction,
}

struct RowBuilder<'c, 'a> {
    ctx: &'c FeatureContext<'a>,
    spec: &'c DesignSpec,
    h: u32,
    hour: u8,
    /// Seasonal model index serving the forecast origin.
    seasonal: Option<usize>,
}

impl RowBuilder<'_, '_> {
    /// Level (undifferenced) regressors for origin day index `t`.
    fn levels(&self, t: usize, kind: RowKind, out: &mut Vec<f64>) -> Result<()> {
        let ds = self.ctx.dataset;
        let origin = ds.day_at(t);
        let target = origin + Duration::days(self.h as i64);
        let cal = calendar_features(target);
        if self.spec.week_dummies {
            out.extend(cal.week());
        }
        if self.spec.annual_seasons {
            out.extend(cal.seasons());
        }
        if self.spec.autoreg {
            out.extend(autoregressive_features(ds, t, self.hour)?);
        }
        if let Some(a) = self.spec.res_load {
            let seasonal = |day: NaiveDate| -> Result<(f64, f64)> {
                let set = self.ctx.seasonal.ok_or(FeatureError::MissingSeasonal(origin))?;
                let idx = self.seasonal.ok_or(FeatureError::MissingSeasonal(origin))?;
                let (load, res) = set.forecast(idx, day, self.hour);
                Ok((res, load))
            };
            let (res, load) = match (a, kind) {
                (ResLoadAlignment::DayAhead, _) => {
                    let next = t + 1;
                    if next >= ds.n_days() {
                        return Err(FeatureError::OutOfRange(origin + Duration::days(1)));
                    }
                    (ds.res_da_fc(next, self.hour), ds.load_da_fc(next, self.hour))
                }
                (ResLoadAlignment::Seasonal, _) | (ResLoadAlignment::Current, RowKind::Prediction) => seasonal(target)?,
                (ResLoadAlignment::Current, RowKind::Estimation) => {
                    let ti = ds.day_index(target).ok_or(FeatureError::OutOfRange(target))?;
                    (ds.res_actual(ti, self.hour), ds.load_actual(ti, self.hour))
                }
            };
            out.push(res);
            out.push(load);
        }
        if let Some(a) = self.spec.fuels {
            let panel = &self.ctx.fuels;
            match (a, kind) {
                (FuelAlignment::FrontMonth, _) => out.extend(fuel_features(panel, origin, FuelMode::FrontMonth, self.h, target)?),
                (FuelAlignment::Current, RowKind::Estimation) => {
                    out.extend(fuel_features(panel, origin, FuelMode::Contemporaneous, self.h, target)?)
                }
                (FuelAlignment::Current, RowKind::Prediction) => {
                    out.extend(fuel_features(panel, origin, FuelMode::MaturityH, self.h, target)?)
                }
                (FuelAlignment::Portfolio, _) => {
                    for c in Commodity::ALL {
                        out.extend(portfolio_features(panel, origin, self.h, c)?);
                    }
                }
            }
        }
        Ok(())
    }

    /// Full regressor row, differenced at lag one day where required.
    fn row(&self, t: usize, kind: RowKind, columns: &[ColumnInfo], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        self.levels(t, kind, out)?;
        if self.spec.differencing {
            let mut prev = Vec::with_capacity(out.len());
            self.levels(t - 1, kind, &mut prev)?;
            for ((v, p), c) in out.iter_mut().zip(&prev).zip(columns) {
                if !matches!(c.group, Component::WeekDummies | Component::AnnualSeasons) {
                    *v -= p;
                }
            }
        }
        Ok(())
    }
}

/// Builds the estimation matrix and prediction row for forecasting hour `hour`
/// of `origin + h` from `origin`.
///
/// Estimation rows have origins `t ∈ [T-h-W+1, T-h]`, so every response is
/// observed by the origin `T` and exactly `window` rows are used; lag history
/// is read from before the window.
pub fn assemble_design(
    ctx: &FeatureContext<'_>,
    spec: &DesignSpec,
    bounds: &CoefficientBounds,
    origin: NaiveDate,
    h: u32,
    hour: u8,
    window: usize,
) -> Result<DesignMatrix> {
    if h == 0 {
        return Err(FeatureError::InvalidHorizon(h));
    }
    let ds = ctx.dataset;
    let t_origin = ds.day_index(origin).ok_or(FeatureError::OutOfRange(origin))?;
    let first = t_origin as i64 - h as i64 - window as i64 + 1;
    if window == 0 || first < spec.history_days() as i64 {
        return Err(FeatureError::InsufficientHistory(format!(
            "{window} rows at horizon {h} before {origin} need {} days of history, dataset starts {}",
            spec.history_days(),
            ds.start_day()
        )));
    }
    let first = first as usize;
    let seasonal = match ctx.seasonal {
        Some(set) if spec.needs_seasonal() => Some(set.serving_index(origin).ok_or(FeatureError::MissingSeasonal(origin))?),
        None if spec.needs_seasonal() => return Err(FeatureError::MissingSeasonal(origin)),
        _ => None,
    };
    let columns = design_columns(spec, h, bounds);
    let builder = RowBuilder { ctx, spec, h, hour, seasonal };

    let p = columns.len();
    let mut x = DMatrix::zeros(window, p);
    let mut y = Vec::with_capacity(window);
    let mut row_days = Vec::with_capacity(window);
    let mut row = Vec::with_capacity(p);
    for (r, t) in (first..first + window).enumerate() {
        builder.row(t, RowKind::Estimation, &columns, &mut row)?;
        for (j, v) in row.iter().enumerate() {
            x[(r, j)] = *v;
        }
        let target = ds.price(t + h as usize, hour);
        y.push(if spec.differencing { target - ds.price(t, hour) } else { target });
        row_days.push(t);
    }
    let mut prediction = Vec::with_capacity(p);
    builder.row(t_origin, RowKind::Prediction, &columns, &mut prediction)?;
    let level = spec.differencing.then(|| ds.price(t_origin, hour));
    Ok(DesignMatrix { origin, horizon: h, hour, columns, x, y, row_days, prediction, level })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Brownian,
}

/// Seeded day-indexed noise series: white noise and unit-step random walks.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePanel {
    pub count: usize,
    pub seed: u64,
    white: Vec<Vec<f64>>,
    brownian: Vec<Vec<f64>>,
}

impl NoisePanel {
    pub fn new(count: usize, seed: u64, n_days: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let white: Vec<Vec<f64>> = (0..count).map(|_| draw(n_days)).collect();
        let brownian = (0..count)
            .map(|_| {
                draw(n_days)
                    .into_iter()
                    .scan(0.0, |s, e| {
                        *s += e;
                        Some(*s)
                    })
                    .collect()
            })
            .collect();
        NoisePanel { count, seed, white, brownian }
    }

    pub fn series(&self, kind: NoiseKind, i: usize) -> &[f64] {
        match kind {
            NoiseKind::White => &self.white[i],
            NoiseKind::Brownian => &self.brownian[i],
        }
    }
}

/// Appends the panel's white-noise and random-walk columns (origin-dated, bounded to `[0, ∞)`).
pub fn add_noise_regressors(design: &DesignMatrix, panel: &NoisePanel, origin_index: usize) -> DesignMatrix {
    if panel.count == 0 {
        return design.clone();
    }
    let mut out = design.clone();
    let (n, p) = design.x.shape();
    let extra = 2 * panel.count;
    let mut x = design.x.clone().resize_horizontally(p + extra, 0.0);
    let mut k = p;
    for kind in [NoiseKind::White, NoiseKind::Brownian] {
        for i in 0..panel.count {
            let s = panel.series(kind, i);
            for r in 0..n {
                x[(r, k)] = s[design.row_days[r]];
            }
            out.prediction.push(s[origin_index]);
            let name = match kind {
                NoiseKind::White => format!("white_{i}"),
                NoiseKind::Brownian => format!("brownian_{i}"),
            };
            out.columns.push(ColumnInfo {
                name,
                group: Component::Noise,
                bound: Interval::new(0.0, f64::INFINITY),
                estimation: Provenance::Origin,
                prediction: Provenance::Origin,
            });
            k += 1;
        }
    }
    out.x = x;
    out
}
