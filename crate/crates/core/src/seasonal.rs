//! Seasonal load and renewable forecasts from a penalized-spline additive model.
//!
//! The model is a linear trend plus smooth daily, weekly and annual profiles
//! and their interactions:
//!
//! ```text
//! load ~ t + ps(HoD,24) + ps(DoW,7) + cp(SoY,12) + ti(ps(HoD,12), cp(SoY,6)) + ti(ps(HoD,12), ps(DoW,6))
//! res  ~ t + ps(HoD,24) + cp(SoY,12) + ti(ps(HoD,12), cp(SoY,6))
//! ```
//!
//! `ps` is a cubic B-spline basis on equally spaced knots, `cp` its cyclic
//! counterpart, and `ti` a tensor-product interaction of sum-to-zero
//! constrained margins. Each term carries a second-order difference penalty;
//! smoothing parameters are chosen by GCV.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::HourlyDataset;

/// Length of the meteorological year in hours (365.24 days).
pub const SOY_PERIOD_HOURS: f64 = 8765.76;
/// Minimum training length in days.
pub const MIN_TRAINING_DAYS: usize = 3 * 365;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeasonalError {
    #[error("invalid term: {0}")]
    InvalidTerm(String),
    #[error("{knots} knots exceed the {distinct} distinct values of {covariate:?}")]
    TooManyKnots { covariate: Covariate, knots: usize, distinct: usize },
    #[error("penalized system is singular")]
    SingularFit,
    #[error("need at least {needed} days of training data, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SeasonalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Covariate {
    /// Hour of day, `hour - 1` in `[0, 24)`.
    HoD,
    /// Day of week, Monday = 0.
    DoW,
    /// Position in the meteorological year, hours in `[0, 8765.76)`.
    SoY,
}

impl Covariate {
    fn range(self) -> (f64, f64) {
        match self {
            Covariate::HoD => (0.0, 23.0),
            Covariate::DoW => (0.0, 6.0),
            Covariate::SoY => (0.0, SOY_PERIOD_HOURS),
        }
    }

    fn period(self) -> f64 {
        match self {
            Covariate::HoD => 24.0,
            Covariate::DoW => 7.0,
            Covariate::SoY => SOY_PERIOD_HOURS,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Covariate::HoD => "HoD",
            Covariate::DoW => "DoW",
            Covariate::SoY => "SoY",
        }
    }
}

impl FromStr for Covariate {
    type Err = SeasonalError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HoD" => Ok(Covariate::HoD),
            "DoW" => Ok(Covariate::DoW),
            "SoY" => Ok(Covariate::SoY),
            other => Err(SeasonalError::Format(format!("unknown covariate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    /// Cubic P-spline.
    Ps,
    /// Cyclic cubic P-spline.
    Cp,
}

/// One marginal smooth: a basis family on a covariate with `knots` basis functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub kind: BasisKind,
    pub covariate: Covariate,
    pub knots: usize,
}

impl Margin {
    pub fn ps(covariate: Covariate, knots: usize) -> Self {
        Margin { kind: BasisKind::Ps, covariate, knots }
    }

    pub fn cp(covariate: Covariate, knots: usize) -> Self {
        Margin { kind: BasisKind::Cp, covariate, knots }
    }

    fn validate(&self) -> Result<()> {
        if self.knots < 4 {
            return Err(SeasonalError::InvalidTerm(format!("{:?}: cubic bases need at least 4 knots", self.covariate)));
        }
        Ok(())
    }

    /// Knot locations (extended beyond the domain for `ps`, one period for `cp`).
    pub fn knot_vector(&self) -> Vec<f64> {
        match self.kind {
            BasisKind::Ps => {
                let (lo, hi) = self.covariate.range();
                let dx = (hi - lo) / (self.knots - 3) as f64;
                (0..self.knots + 4).map(|i| lo + (i as f64 - 3.0) * dx).collect()
            }
            BasisKind::Cp => {
                let dx = self.covariate.period() / self.knots as f64;
                (0..=self.knots).map(|i| i as f64 * dx).collect()
            }
        }
    }

    /// Nonzero basis values at `x`: the four `(index, value)` pairs.
    pub fn eval(&self, x: f64) -> [(usize, f64); 4] {
        let k = self.knots;
        let (first, t) = match self.kind {
            BasisKind::Ps => {
                let (lo, hi) = self.covariate.range();
                let dx = (hi - lo) / (k - 3) as f64;
                let u = (x - lo) / dx;
                let i = (u.floor().max(0.0) as usize).min(k - 4);
                (i as isize, u - i as f64)
            }
            BasisKind::Cp => {
                let period = self.covariate.period();
                let dx = period / k as f64;
                let u = x.rem_euclid(period) / dx;
                let i = (u.floor() as usize).min(k - 1);
                (i as isize - 3, u - i as f64)
            }
        };
        let w = cubic_weights(t);
        let idx = |m: isize| -> usize {
            match self.kind {
                BasisKind::Ps => (first + m) as usize,
                BasisKind::Cp => (first + m).rem_euclid(k as isize) as usize,
            }
        };
        [(idx(0), w[0]), (idx(1), w[1]), (idx(2), w[2]), (idx(3), w[3])]
    }

    /// Difference penalty `DᵀD` of the given order (cyclic for `cp`).
    pub fn penalty(&self, order: usize) -> DMatrix<f64> {
        let k = self.knots;
        let coeffs = difference_coefficients(order);
        let d = match self.kind {
            BasisKind::Ps => {
                let rows = k.saturating_sub(order);
                DMatrix::from_fn(rows, k, |r, c| if c >= r && c - r <= order { coeffs[c - r] } else { 0.0 })
            }
            BasisKind::Cp => DMatrix::from_fn(k, k, |r, c| {
                let off = (c + k - r) % k;
                if off <= order {
                    coeffs[off]
                } else {
                    0.0
                }
            }),
        };
        d.transpose() * d
    }
}

fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 1.0 - t;
    [s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0]
}

fn difference_coefficients(order: usize) -> Vec<f64> {
    // binomial coefficients with alternating sign
    let mut c = vec![1.0];
    for _ in 0..order {
        let mut next = vec![0.0; c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += -v;
            next[i + 1] += v;
        }
        c = next;
    }
    c
}

/// A smooth term: one margin (`ps`/`cp`) or a two-margin tensor interaction (`ti`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineTermSpec {
    pub margins: Vec<Margin>,
    pub penalty_order: usize,
}

impl SplineTermSpec {
    pub fn single(margin: Margin) -> Self {
        SplineTermSpec { margins: vec![margin], penalty_order: 2 }
    }

    pub fn ti(a: Margin, b: Margin) -> Self {
        SplineTermSpec { margins: vec![a, b], penalty_order: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.margins.is_empty() || self.margins.len() > 2 {
            return Err(SeasonalError::InvalidTerm("a term has one or two margins".into()));
        }
        if self.penalty_order == 0 || self.penalty_order > 3 {
            return Err(SeasonalError::InvalidTerm("penalty order must be 1..=3".into()));
        }
        self.margins.iter().try_for_each(Margin::validate)
    }

    /// Number of unconstrained basis columns.
    pub fn raw_columns(&self) -> usize {
        self.margins.iter().map(|m| m.knots).product()
    }

    /// Number of columns after the sum-to-zero constraints.
    pub fn constrained_columns(&self) -> usize {
        self.margins.iter().map(|m| m.knots - 1).product()
    }

    fn label(&self) -> String {
        let margin = |m: &Margin| {
            format!("{}({},{})", if m.kind == BasisKind::Ps { "ps" } else { "cp" }, m.covariate.as_str(), m.knots)
        };
        match self.margins.as_slice() {
            [m] => margin(m),
            [a, b] => format!("ti({},{})", margin(a), margin(b)),
            _ => "invalid".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonalTarget {
    Load,
    Res,
}

impl SeasonalTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            SeasonalTarget::Load => "load",
            SeasonalTarget::Res => "res",
        }
    }

    /// The additive structure used for each target.
    pub fn default_terms(self) -> Vec<SplineTermSpec> {
        use Covariate::*;
        let mut terms = vec![SplineTermSpec::single(Margin::ps(HoD, 24))];
        if self == SeasonalTarget::Load {
            terms.push(SplineTermSpec::single(Margin::ps(DoW, 7)));
        }
        terms.push(SplineTermSpec::single(Margin::cp(SoY, 12)));
        terms.push(SplineTermSpec::ti(Margin::ps(HoD, 12), Margin::cp(SoY, 6)));
        if self == SeasonalTarget::Load {
            terms.push(SplineTermSpec::ti(Margin::ps(HoD, 12), Margin::ps(DoW, 6)));
        }
        terms
    }

    /// Extracts the actual series for this target from a dataset.
    pub fn series(self, dataset: &HourlyDataset, last_day: NaiveDate) -> SeasonalSeries {
        let n_days = dataset.day_index(last_day).map_or(dataset.n_days(), |i| i + 1);
        let values = (0..n_days)
            .flat_map(|d| {
                (1..=24u8).map(move |h| match self {
                    SeasonalTarget::Load => dataset.load_actual(d, h),
                    SeasonalTarget::Res => dataset.res_actual(d, h),
                })
            })
            .collect();
        SeasonalSeries { start_day: dataset.start_day(), values }
    }
}

impl FromStr for SeasonalTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "load" => Ok(SeasonalTarget::Load),
            "res" => Ok(SeasonalTarget::Res),
            other => Err(format!("unknown seasonal target `{other}` (expected load|res)")),
        }
    }
}

/// A contiguous hourly series starting at hour 1 of `start_day`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalSeries {
    pub start_day: NaiveDate,
    pub values: Vec<f64>,
}

impl SeasonalSeries {
    pub fn n_days(&self) -> usize {
        self.values.len() / 24
    }

    pub fn end_day(&self) -> NaiveDate {
        self.start_day + Duration::days(self.n_days() as i64 - 1)
    }
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid epoch")
}

/// Global hour index (hours since 2000-01-01, 24 per day).
pub fn hour_index(day: NaiveDate, hour: u8) -> f64 {
    ((day - epoch()).num_days() * 24 + hour as i64 - 1) as f64
}

/// Covariates of one hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourCovariates {
    pub hod: f64,
    pub dow: f64,
    pub soy: f64,
    pub t: f64,
}

impl HourCovariates {
    pub fn at(day: NaiveDate, hour: u8) -> Self {
        let t = hour_index(day, hour);
        HourCovariates {
            hod: (hour - 1) as f64,
            dow: day.weekday().num_days_from_monday() as f64,
            soy: t.rem_euclid(SOY_PERIOD_HOURS),
            t,
        }
    }

    fn get(&self, c: Covariate) -> f64 {
        match c {
            Covariate::HoD => self.hod,
            Covariate::DoW => self.dow,
            Covariate::SoY => self.soy,
        }
    }
}

/// Orthonormal basis of the complement of `v` (a `k × (k-1)` matrix).
fn constraint_null_space(v: &DVector<f64>) -> DMatrix<f64> {
    let k = v.len();
    let norm = v.norm();
    let mut u = v.clone();
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign * norm;
    let uu = u.dot(&u);
    // Householder H = I - 2uuᵀ/uᵀu maps v onto e₁; its remaining columns span v⊥.
    DMatrix::from_fn(k, k - 1, |r, c| {
        let col = c + 1;
        let id = if r == col { 1.0 } else { 0.0 };
        id - 2.0 * u[r] * u[col] / uu
    })
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// A term realized on data: constraint transform and constrained penalty.
#[derive(Debug, Clone, PartialEq)]
struct TermLayout {
    spec: SplineTermSpec,
    /// `raw_columns × constrained_columns`.
    transform: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

/// Sparse unconstrained basis row of a term.
fn term_row(spec: &SplineTermSpec, cov: &HourCovariates, out: &mut Vec<(usize, f64)>, offset: usize) {
    match spec.margins.as_slice() {
        [m] => {
            for (i, v) in m.eval(cov.get(m.covariate)) {
                out.push((offset + i, v));
            }
        }
        [a, b] => {
            let ea = a.eval(cov.get(a.covariate));
            let eb = b.eval(cov.get(b.covariate));
            for (i, va) in ea {
                for (j, vb) in eb {
                    out.push((offset + i * b.knots + j, va * vb));
                }
            }
        }
        _ => unreachable!("validated"),
    }
}

/// Basis and penalty of one term on a set of covariate rows (dense, for inspection and tests).
pub fn build_basis(spec: &SplineTermSpec, covariates: &[HourCovariates]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    check_knots(spec, covariates.iter().copied())?;
    let raw = raw_block(spec, covariates);
    let layout = layout_term(spec, &raw)?;
    Ok((raw * &layout.transform, layout.penalty))
}

fn raw_block(spec: &SplineTermSpec, covariates: &[HourCovariates]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(covariates.len(), spec.raw_columns());
    let mut row = Vec::with_capacity(16);
    for (r, cov) in covariates.iter().enumerate() {
        row.clear();
        term_row(spec, cov, &mut row, 0);
        for &(c, v) in &row {
            m[(r, c)] += v;
        }
    }
    m
}

fn check_knots(spec: &SplineTermSpec, covariates: impl Iterator<Item = HourCovariates> + Clone) -> Result<()> {
    for m in &spec.margins {
        let distinct: BTreeSet<u64> = covariates.clone().map(|c| c.get(m.covariate).to_bits()).take(1_000_000).collect();
        if m.knots > distinct.len() {
            return Err(SeasonalError::TooManyKnots { covariate: m.covariate, knots: m.knots, distinct: distinct.len() });
        }
    }
    Ok(())
}

/// Builds the constraint transform from the column sums of each margin's raw basis.
fn layout_from_sums(spec: &SplineTermSpec, margin_sums: &[DVector<f64>]) -> Result<TermLayout> {
    let zs: Vec<DMatrix<f64>> = margin_sums.iter().map(constraint_null_space).collect();
    let ps: Vec<DMatrix<f64>> = spec
        .margins
        .iter()
        .zip(&zs)
        .map(|(m, z)| z.transpose() * m.penalty(spec.penalty_order) * z)
        .collect();
    let (transform, penalty) = match (zs.as_slice(), ps.as_slice()) {
        ([z], [p]) => (z.clone(), p.clone()),
        ([za, zb], [pa, pb]) => {
            let ia = DMatrix::identity(za.ncols(), za.ncols());
            let ib = DMatrix::identity(zb.ncols(), zb.ncols());
            (kron(za, zb), kron(pa, &ib) + kron(&ia, pb))
        }
        _ => return Err(SeasonalError::InvalidTerm("a term has one or two margins".into())),
    };
    Ok(TermLayout { spec: spec.clone(), transform, penalty })
}

fn layout_term(spec: &SplineTermSpec, raw: &DMatrix<f64>) -> Result<TermLayout> {
    // margin column sums: for a single margin these are the raw sums; for a
    // tensor product the marginal sums follow from summing over the other index.
    let sums = raw.row_sum().transpose();
    let margin_sums: Vec<DVector<f64>> = match spec.margins.as_slice() {
        [_] => vec![sums],
        [a, b] => {
            let mut sa = DVector::zeros(a.knots);
            let mut sb = DVector::zeros(b.knots);
            for i in 0..a.knots {
                for j in 0..b.knots {
                    sa[i] += sums[i * b.knots + j];
                    sb[j] += sums[i * b.knots + j];
                }
            }
            vec![sa, sb]
        }
        _ => unreachable!(),
    };
    layout_from_sums(spec, &margin_sums)
}

/// Smoothing-parameter search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingGrid {
    pub lambdas: Vec<f64>,
    pub passes: usize,
}

impl Default for SmoothingGrid {
    fn default() -> Self {
        SmoothingGrid { lambdas: (0..7).map(|i| 10f64.powi(i - 2)).collect(), passes: 2 }
    }
}

/// A fitted seasonal model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalModel {
    pub target: SeasonalTarget,
    pub terms: Vec<SplineTermSpec>,
    /// Smoothing parameter per term.
    pub lambdas: Vec<f64>,
    /// Constrained coefficients: intercept, trend, then term blocks.
    pub theta: Vec<f64>,
    /// Coefficients on the unconstrained basis (intercept, trend, raw term columns).
    pub raw_coefficients: Vec<f64>,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    trend_center: f64,
    trend_scale: f64,
    pub gcv: f64,
    pub edf: f64,
}

impl SeasonalModel {
    /// Trend slope in target units per hour.
    pub fn trend_slope(&self) -> f64 {
        self.raw_coefficients[1] / self.trend_scale
    }

    fn raw_row(&self, cov: &HourCovariates, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
        out.push((1, (cov.t - self.trend_center) / self.trend_scale));
        let mut offset = 2;
        for term in &self.terms {
            term_row(term, cov, out, offset);
            offset += term.raw_columns();
        }
    }

    /// Unfloored model value at covariates.
    pub fn evaluate(&self, cov: &HourCovariates) -> f64 {
        let mut row = Vec::with_capacity(64);
        self.raw_row(cov, &mut row);
        row.iter().map(|&(c, v)| self.raw_coefficients[c] * v).sum()
    }

    /// Forecast for a target day and hour; renewable forecasts are floored at zero.
    pub fn forecast(&self, day: NaiveDate, hour: u8) -> f64 {
        let v = self.evaluate(&HourCovariates::at(day, hour));
        match self.target {
            SeasonalTarget::Res => v.max(0.0),
            SeasonalTarget::Load => v,
        }
    }

    /// Writes the versioned text representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# seasonal model");
        let _ = writeln!(s, "version,{FORMAT_VERSION}");
        let _ = writeln!(s, "target,{}", self.target.as_str());
        let _ = writeln!(s, "train_start,{}", self.train_start);
        let _ = writeln!(s, "train_end,{}", self.train_end);
        let _ = writeln!(s, "trend,{},{}", self.trend_center, self.trend_scale);
        let _ = writeln!(s, "gcv,{},{}", self.gcv, self.edf);
        for (i, (term, lambda)) in self.terms.iter().zip(&self.lambdas).enumerate() {
            let margins: Vec<String> = term
                .margins
                .iter()
                .map(|m| format!("{}:{}:{}", if m.kind == BasisKind::Ps { "ps" } else { "cp" }, m.covariate.as_str(), m.knots))
                .collect();
            let _ = writeln!(s, "term,{i},{},{},{lambda},{}", term.label().replace(',', " "), term.penalty_order, margins.join(";"));
            for m in &term.margins {
                let knots: Vec<String> = m.knot_vector().iter().map(|k| k.to_string()).collect();
                let _ = writeln!(s, "knots,{i},{},{}", m.covariate.as_str(), knots.join(";"));
            }
        }
        for (i, v) in self.theta.iter().enumerate() {
            let _ = writeln!(s, "theta,{i},{v}");
        }
        for (i, v) in self.raw_coefficients.iter().enumerate() {
            let _ = writeln!(s, "coef,{i},{v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| SeasonalError::Format(msg.to_string());
        let mut target = None;
        let mut train = (None, None);
        let mut trend = None;
        let mut gcv = (f64::NAN, f64::NAN);
        let mut terms = Vec::new();
        let mut lambdas = Vec::new();
        let mut theta = Vec::new();
        let mut raw = Vec::new();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
        let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad(&format!("bad date `{s}`")));
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            match f[0] {
                "version" => {
                    if f.get(1) != Some(&"1") {
                        return Err(bad("unsupported version"));
                    }
                }
                "target" => target = Some(f[1].parse::<SeasonalTarget>().map_err(|e| bad(&e))?),
                "train_start" => train.0 = Some(date(f[1])?),
                "train_end" => train.1 = Some(date(f[1])?),
                "trend" => trend = Some((num(f[1])?, num(f[2])?)),
                "gcv" => gcv = (num(f[1])?, num(f[2])?),
                "term" => {
                    if f.len() != 6 {
                        return Err(bad("term line needs 6 fields"));
                    }
                    let penalty_order = f[3].parse().map_err(|_| bad("bad penalty order"))?;
                    lambdas.push(num(f[4])?);
                    let margins = f[5]
                        .split(';')
                        .map(|m| {
                            let p: Vec<&str> = m.split(':').collect();
                            if p.len() != 3 {
                                return Err(bad("bad margin"));
                            }
                            let kind = match p[0] {
                                "ps" => BasisKind::Ps,
                                "cp" => BasisKind::Cp,
                                _ => return Err(bad("bad basis kind")),
                            };
                            Ok(Margin { kind, covariate: p[1].parse()?, knots: p[2].parse().map_err(|_| bad("bad knots"))? })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    terms.push(SplineTermSpec { margins, penalty_order });
                }
                "knots" => {}
                "theta" => theta.push(num(f[2])?),
                "coef" => raw.push(num(f[2])?),
                other => return Err(bad(&format!("unknown record `{other}`"))),
            }
        }
        let (trend_center, trend_scale) = trend.ok_or_else(|| bad("missing trend"))?;
        let expected_raw = 2 + terms.iter().map(SplineTermSpec::raw_columns).sum::<usize>();
        if raw.len() != expected_raw {
            return Err(bad("coefficient count does not match terms"));
        }
        Ok(SeasonalModel {
            target: target.ok_or_else(|| bad("missing target"))?,
            terms,
            lambdas,
            theta,
            raw_coefficients: raw,
            train_start: train.0.ok_or_else(|| bad("missing train_start"))?,
            train_end: train.1.ok_or_else(|| bad("missing train_end"))?,
            trend_center,
            trend_scale,
            gcv: gcv.0,
            edf: gcv.1,
        })
    }
}

/// Normal equations of the unpenalized problem in the constrained parameterization.
struct NormalEquations {
    n: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// Penalties embedded in the full parameter space, one per term.
    penalties: Vec<DMatrix<f64>>,
    /// Full `raw × constrained` transform.
    transform: DMatrix<f64>,
}

struct Solved {
    theta: DVector<f64>,
    edf: f64,
    gcv: f64,
}

impl NormalEquations {
    fn solve(&self, lambdas: &[f64]) -> Result<Solved> {
        let mut a = self.xtx.clone();
        for (p, &l) in self.penalties.iter().zip(lambdas) {
            a += p * l;
        }
        let chol = a.cholesky().ok_or(SeasonalError::SingularFit)?;
        let theta = chol.solve(&self.xty);
        let rss = (self.yty - 2.0 * theta.dot(&self.xty) + theta.dot(&(&self.xtx * &theta))).max(0.0);
        let influence = chol.solve(&self.xtx);
        let edf = influence.trace();
        let n = self.n as f64;
        let gcv = n * rss / (n - edf).powi(2);
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(SeasonalError::SingularFit);
        }
        Ok(Solved { theta, edf, gcv })
    }
}

fn assemble(series: &SeasonalSeries, terms: &[SplineTermSpec], trend_center: f64, trend_scale: f64) -> Result<NormalEquations> {
    for t in terms {
        t.validate()?;
    }
    let covariates = |d: usize, h: u8| HourCovariates::at(series.start_day + Duration::days(d as i64), h);
    let n_days = series.n_days();
    let all_covs = (0..n_days).flat_map(|d| (1..=24u8).map(move |h| (d, h))).map(|(d, h)| covariates(d, h));
    for t in terms {
        check_knots(t, all_covs.clone())?;
    }

    let offsets: Vec<usize> = terms
        .iter()
        .scan(2usize, |acc, t| {
            let o = *acc;
            *acc += t.raw_columns();
            Some(o)
        })
        .collect();
    let raw_cols = 2 + terms.iter().map(SplineTermSpec::raw_columns).sum::<usize>();

    let mut gram = DMatrix::<f64>::zeros(raw_cols, raw_cols);
    let mut xty = DVector::<f64>::zeros(raw_cols);
    let mut yty = 0.0;
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(64);
    let mut n = 0usize;
    for d in 0..n_days {
        for h in 1..=24u8 {
            let y = series.values[d * 24 + h as usize - 1];
            if !y.is_finite() {
                continue;
            }
            let cov = covariates(d, h);
            row.clear();
            row.push((0, 1.0));
            row.push((1, (cov.t - trend_center) / trend_scale));
            for (t, &o) in terms.iter().zip(&offsets) {
                term_row(t, &cov, &mut row, o);
            }
            for &(i, vi) in &row {
                xty[i] += vi * y;
                for &(j, vj) in &row {
                    if j >= i {
                        gram[(i, j)] += vi * vj;
                    }
                }
            }
            yty += y * y;
            n += 1;
        }
    }
    for i in 0..raw_cols {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }

    // Column sums of each raw block give the identifiability constraints.
    let col_sums: DVector<f64> = DVector::from_iterator(raw_cols, (0..raw_cols).map(|c| gram[(0, c)]));
    let layouts: Vec<TermLayout> = terms
        .iter()
        .zip(&offsets)
        .map(|(t, &o)| {
            let block = col_sums.rows(o, t.raw_columns()).into_owned();
            let margin_sums = match t.margins.as_slice() {
                [_] => vec![block],
                [a, b] => {
                    let mut sa = DVector::zeros(a.knots);
                    let mut sb = DVector::zeros(b.knots);
                    for i in 0..a.knots {
                        for j in 0..b.knots {
                            sa[i] += block[i * b.knots + j];
                            sb[j] += block[i * b.knots + j];
                        }
                    }
                    vec![sa, sb]
                }
                _ => unreachable!(),
            };
            layout_from_sums(t, &margin_sums)
        })
        .collect::<Result<_>>()?;

    let con_cols = 2 + layouts.iter().map(|l| l.transform.ncols()).sum::<usize>();
    let mut transform = DMatrix::<f64>::zeros(raw_cols, con_cols);
    transform[(0, 0)] = 1.0;
    transform[(1, 1)] = 1.0;
    let mut penalties = Vec::with_capacity(layouts.len());
    let mut c_off = 2;
    for (l, &r_off) in layouts.iter().zip(&offsets) {
        let (rr, cc) = l.transform.shape();
        transform.view_mut((r_off, c_off), (rr, cc)).copy_from(&l.transform);
        let mut p = DMatrix::<f64>::zeros(con_cols, con_cols);
        p.view_mut((c_off, c_off), (cc, cc)).copy_from(&l.penalty);
        penalties.push(p);
        c_off += cc;
    }
    let xtx = transform.transpose() * &gram * &transform;
    let xty = transform.transpose() * xty;
    Ok(NormalEquations { n, xtx, xty, yty, penalties, transform })
}

/// Fits with fixed smoothing parameters (one per term).
pub fn fit_seasonal_fixed(
    series: &SeasonalSeries,
    target: SeasonalTarget,
    terms: &[SplineTermSpec],
    lambdas: &[f64],
) -> Result<SeasonalModel> {
    if lambdas.len() != terms.len() {
        return Err(SeasonalError::InvalidTerm(format!("{} smoothing parameters for {} terms", lambdas.len(), terms.len())));
    }
    let (center, scale) = trend_scaling(series)?;
    let eq = assemble(series, terms, center, scale)?;
    let solved = eq.solve(lambdas)?;
    Ok(finish(series, target, terms, lambdas.to_vec(), &eq, solved, center, scale))
}

fn trend_scaling(series: &SeasonalSeries) -> Result<(f64, f64)> {
    if series.values.is_empty() || series.values.len() % 24 != 0 {
        return Err(SeasonalError::InsufficientData { needed: 1, got: series.n_days() });
    }
    let first = hour_index(series.start_day, 1);
    let last = first + series.values.len() as f64 - 1.0;
    Ok((0.5 * (first + last), (last - first).max(1.0)))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    series: &SeasonalSeries,
    target: SeasonalTarget,
    terms: &[SplineTermSpec],
    lambdas: Vec<f64>,
    eq: &NormalEquations,
    solved: Solved,
    trend_center: f64,
    trend_scale: f64,
) -> SeasonalModel {
    let raw = &eq.transform * &solved.theta;
    SeasonalModel {
        target,
        terms: terms.to_vec(),
        lambdas,
        theta: solved.theta.iter().copied().collect(),
        raw_coefficients: raw.iter().copied().collect(),
        train_start: series.start_day,
        train_end: series.end_day(),
        trend_center,
        trend_scale,
        gcv: solved.gcv,
        edf: solved.edf,
    }
}

/// Fits the additive model, choosing each term's smoothing parameter by GCV
/// (coordinate-wise over `grid`).
pub fn fit_seasonal(series: &SeasonalSeries, target: SeasonalTarget, terms: &[SplineTermSpec], grid: &SmoothingGrid) -> Result<SeasonalModel> {
    if series.n_days() < MIN_TRAINING_DAYS {
        return Err(SeasonalError::InsufficientData { needed: MIN_TRAINING_DAYS, got: series.n_days() });
    }
    if grid.lambdas.is_empty() {
        return Err(SeasonalError::InvalidTerm("empty smoothing grid".into()));
    }
    let (center, scale) = trend_scaling(series)?;
    let eq = assemble(series, terms, center, scale)?;
    let start = grid.lambdas[grid.lambdas.len() / 2];
    let mut lambdas = vec![start; terms.len()];
    let mut best = eq.solve(&lambdas)?;
    for _ in 0..grid.passes {
        for t in 0..terms.len() {
            for &candidate in &grid.lambdas {
                if candidate == lambdas[t] {
                    continue;
                }
                let mut trial = lambdas.clone();
                trial[t] = candidate;
                let solved = eq.solve(&trial)?;
                if solved.gcv < best.gcv {
                    best = solved;
                    lambdas = trial;
                }
            }
        }
    }
    Ok(finish(series, target, terms, lambdas, &eq, best, center, scale))
}

/// Refit dates: each `train_end` (a December 31st with at least three years
/// of data before it) and the calendar year whose forecast origins it serves.
pub fn expanding_refit_schedule(data_start: NaiveDate, data_end: NaiveDate) -> Result<Vec<(NaiveDate, i32)>> {
    let span = (data_end - data_start).num_days() + 1;
    if span < MIN_TRAINING_DAYS as i64 {
        return Err(SeasonalError::InsufficientData { needed: MIN_TRAINING_DAYS, got: span.max(0) as usize });
    }
    let mut out = Vec::new();
    for year in data_start.year()..=data_end.year() {
        let end = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid date");
        if end > data_end {
            break;
        }
        if (end - data_start).num_days() + 1 >= MIN_TRAINING_DAYS as i64 {
            out.push((end, year + 1));
        }
    }
    if out.is_empty() {
        return Err(SeasonalError::InsufficientData { needed: MIN_TRAINING_DAYS, got: span as usize });
    }
    Ok(out)
}

/// A pair of load and renewable models fitted on the same data.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalFit {
    pub train_end: NaiveDate,
    pub load: SeasonalModel,
    pub res: SeasonalModel,
}

/// The expanding-window family of seasonal models with cached forecasts.
#[derive(Debug, Clone, Default)]
pub struct SeasonalSet {
    fits: Vec<SeasonalFit>,
    cache_start: Option<NaiveDate>,
    cache_days: usize,
    /// Per fit: `(load, res)` forecasts for every cached day and hour.
    cache: Vec<(Vec<f64>, Vec<f64>)>,
}

impl SeasonalSet {
    /// Fits every model in the refit schedule of `dataset`.
    pub fn fit(dataset: &HourlyDataset, grid: &SmoothingGrid) -> Result<Self> {
        let schedule = expanding_refit_schedule(dataset.start_day(), dataset.end_day())?;
        let fits = schedule
            .iter()
            .map(|&(train_end, _)| {
                let load = SeasonalTarget::Load.series(dataset, train_end);
                let res = SeasonalTarget::Res.series(dataset, train_end);
                Ok(SeasonalFit {
                    train_end,
                    load: fit_seasonal(&load, SeasonalTarget::Load, &SeasonalTarget::Load.default_terms(), grid)?,
                    res: fit_seasonal(&res, SeasonalTarget::Res, &SeasonalTarget::Res.default_terms(), grid)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_fits(fits))
    }

    pub fn from_fits(mut fits: Vec<SeasonalFit>) -> Self {
        fits.sort_by_key(|f| f.train_end);
        SeasonalSet { fits, cache_start: None, cache_days: 0, cache: Vec::new() }
    }

    /// Precomputes forecasts for `[start, start + days)`.
    pub fn with_cache(mut self, start: NaiveDate, days: usize) -> Self {
        self.cache = self
            .fits
            .iter()
            .map(|f| {
                let grid = |m: &SeasonalModel| -> Vec<f64> {
                    (0..days)
                        .flat_map(|d| (1..=24u8).map(move |h| (d, h)))
                        .map(|(d, h)| m.forecast(start + Duration::days(d as i64), h))
                        .collect()
                };
                (grid(&f.load), grid(&f.res))
            })
            .collect();
        self.cache_start = Some(start);
        self.cache_days = days;
        self
    }

    pub fn fits(&self) -> &[SeasonalFit] {
        &self.fits
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    /// Index of the model serving forecasts issued at `origin`: the latest one trained strictly before it.
    pub fn serving_index(&self, origin: NaiveDate) -> Option<usize> {
        self.fits.iter().rposition(|f| f.train_end < origin)
    }

    pub fn serving(&self, origin: NaiveDate) -> Option<&SeasonalFit> {
        self.serving_index(origin).map(|i| &self.fits[i])
    }

    /// `(load, res)` forecast of model `index` for a day and hour.
    pub fn forecast(&self, index: usize, day: NaiveDate, hour: u8) -> (f64, f64) {
        if let Some(start) = self.cache_start {
            let d = (day - start).num_days();
            if d >= 0 && (d as usize) < self.cache_days {
                let r = d as usize * 24 + hour as usize - 1;
                let (l, s) = &self.cache[index];
                return (l[r], s[r]);
            }
        }
        let f = &self.fits[index];
        (f.load.forecast(day, hour), f.res.forecast(day, hour))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn hours(start: NaiveDate, days: usize) -> Vec<HourCovariates> {
        (0..days).flat_map(|d| (1..=24u8).map(move |h| HourCovariates::at(start + Duration::days(d as i64), h))).collect()
    }

    fn rank(m: &DMatrix<f64>) -> usize {
        let svd = m.clone().svd(false, false);
        let max = svd.singular_values.max();
        svd.singular_values.iter().filter(|s| **s > max * 1e-10).count()
    }

    #[test]
    fn hour_of_day_basis_has_full_constrained_rank() {
        let covs = hours(day(2020, 1, 6), 1);
        let spec = SplineTermSpec::single(Margin::ps(Covariate::HoD, 24));
        let (basis, penalty) = build_basis(&spec, &covs).unwrap();
        assert_eq!(basis.ncols(), 23);
        assert_eq!(rank(&basis), 23);
        assert_eq!(penalty.shape(), (23, 23));
        // constrained columns sum to zero over the data
        for c in 0..23 {
            assert_abs_diff_eq!(basis.column(c).sum(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cyclic_basis_wraps() {
        let m = Margin::cp(Covariate::SoY, 12);
        let at = |x: f64| {
            let mut v = [0.0; 12];
            for (i, w) in m.eval(x) {
                v[i] += w;
            }
            v
        };
        let a = at(0.0);
        for eps in [1e-3, 1e-6, 1e-9] {
            let b = at(SOY_PERIOD_HOURS - eps);
            for i in 0..12 {
                assert!((a[i] - b[i]).abs() < 1e-8 + eps, "eps {eps} col {i}");
            }
        }
        // partition of unity
        for x in [0.0, 100.5, 4000.0, 8765.0] {
            assert_abs_diff_eq!(at(x).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tensor_interaction_dimensions() {
        let covs = hours(day(2020, 1, 1), 400);
        let spec = SplineTermSpec::ti(Margin::ps(Covariate::HoD, 12), Margin::cp(Covariate::SoY, 6));
        let (basis, penalty) = build_basis(&spec, &covs).unwrap();
        assert_eq!(basis.ncols(), 55);
        assert_eq!(penalty.shape(), (55, 55));
        assert_eq!(rank(&basis), 55);
    }

    #[test]
    fn too_many_knots_is_rejected() {
        let covs = hours(day(2020, 1, 6), 14);
        let spec = SplineTermSpec::single(Margin::ps(Covariate::DoW, 8));
        assert!(matches!(build_basis(&spec, &covs), Err(SeasonalError::TooManyKnots { distinct: 7, .. })));
        let bad = SplineTermSpec::single(Margin::ps(Covariate::DoW, 3));
        assert!(matches!(build_basis(&bad, &covs), Err(SeasonalError::InvalidTerm(_))));
    }

    #[test]
    fn penalty_annihilates_constants() {
        for m in [Margin::ps(Covariate::HoD, 24), Margin::cp(Covariate::SoY, 12)] {
            let p = m.penalty(2);
            let ones = DVector::from_element(m.knots, 1.0);
            assert!((p * ones).norm() < 1e-12);
        }
    }

    fn series_from(start: NaiveDate, days: usize, mut f: impl FnMut(NaiveDate, u8, usize) -> f64) -> SeasonalSeries {
        let mut values = Vec::with_capacity(days * 24);
        for d in 0..days {
            let date = start + Duration::days(d as i64);
            for h in 1..=24u8 {
                values.push(f(date, h, d * 24 + h as usize - 1));
            }
        }
        SeasonalSeries { start_day: start, values }
    }

    #[test]
    fn constant_series_is_recovered() {
        let s = series_from(day(2015, 1, 1), 3 * 365, |_, _, _| 42.0);
        let m = fit_seasonal(&s, SeasonalTarget::Load, &SeasonalTarget::Load.default_terms(), &SmoothingGrid::default()).unwrap();
        assert_abs_diff_eq!(m.theta[0], 42.0, epsilon = 1e-6);
        assert!(m.theta[1..].iter().all(|v| v.abs() < 1e-6));
        assert_abs_diff_eq!(m.forecast(day(2019, 5, 5), 7), 42.0, epsilon = 1e-6);
    }

    #[test]
    fn daily_sine_is_fitted_closely() {
        let s = series_from(day(2015, 1, 1), 3 * 365, |_, h, _| (2.0 * std::f64::consts::PI * (h - 1) as f64 / 24.0).sin());
        let m = fit_seasonal(&s, SeasonalTarget::Res, &SeasonalTarget::Res.default_terms(), &SmoothingGrid::default()).unwrap();
        let rmse = (s
            .values
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let d = s.start_day + Duration::days((i / 24) as i64);
                (m.evaluate(&HourCovariates::at(d, (i % 24) as u8 + 1)) - y).powi(2)
            })
            .sum::<f64>()
            / s.values.len() as f64)
            .sqrt();
        assert!(rmse < 0.01, "rmse {rmse}");
    }

    #[test]
    fn trend_slope_matches_ols_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let s = series_from(day(2015, 1, 1), 1095, |_, _, i| 0.001 * i as f64 + noise.sample(&mut rng));
        let n = s.values.len() as f64;
        // OLS slope of y on the hour index
        let xm = (n - 1.0) / 2.0;
        let ym = s.values.iter().sum::<f64>() / n;
        let sxy: f64 = s.values.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum();
        let sxx: f64 = (0..s.values.len()).map(|i| (i as f64 - xm).powi(2)).sum();
        let ols = sxy / sxx;
        let m = fit_seasonal(&s, SeasonalTarget::Load, &SeasonalTarget::Load.default_terms(), &SmoothingGrid::default()).unwrap();
        assert!((m.trend_slope() - 0.001).abs() < 0.05 * 0.001, "slope {}", m.trend_slope());
        assert!((ols - 0.001).abs() < 0.05 * 0.001);
    }

    #[test]
    fn forecast_extrapolates_trend_and_floors_res() {
        let s = series_from(day(2015, 1, 1), 1095, |_, _, i| 5.0 - 0.001 * i as f64);
        let terms = SeasonalTarget::Res.default_terms();
        let m = fit_seasonal(&s, SeasonalTarget::Res, &terms, &SmoothingGrid::default()).unwrap();
        let slope = m.trend_slope();
        assert_abs_diff_eq!(slope, -0.001, epsilon = 1e-9);
        let last = s.end_day();
        let base = m.evaluate(&HourCovariates::at(last, 24));
        let ahead = m.evaluate(&HourCovariates::at(last + Duration::days(10), 24));
        assert_abs_diff_eq!(ahead - base, slope * 240.0, epsilon = 1e-6);
        // far ahead the raw value turns negative and the forecast is floored
        let far = last + Duration::days(400);
        assert!(m.evaluate(&HourCovariates::at(far, 1)) < 0.0);
        assert_eq!(m.forecast(far, 1), 0.0);
        // inside the span the forecast is the fitted value
        let d = day(2016, 3, 3);
        assert_eq!(m.forecast(d, 5), m.evaluate(&HourCovariates::at(d, 5)).max(0.0));
    }

    #[test]
    fn insufficient_training_data() {
        let s = series_from(day(2015, 1, 1), 700, |_, _, _| 1.0);
        assert!(matches!(
            fit_seasonal(&s, SeasonalTarget::Load, &SeasonalTarget::Load.default_terms(), &SmoothingGrid::default()),
            Err(SeasonalError::InsufficientData { .. })
        ));
    }

    #[test]
    fn vanishing_penalty_reduces_to_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let start = day(2015, 1, 5);
        let days = 70;
        let s = series_from(start, days, |d, h, i| {
            (h as f64 / 5.0).cos() * 3.0 + d.weekday().num_days_from_monday() as f64 + 0.01 * i as f64 + noise.sample(&mut rng)
        });
        let terms = vec![SplineTermSpec::single(Margin::ps(Covariate::HoD, 8)), SplineTermSpec::single(Margin::ps(Covariate::DoW, 5))];
        let m = fit_seasonal_fixed(&s, SeasonalTarget::Load, &terms, &[1e-12, 1e-12]).unwrap();

        // OLS oracle on the explicitly constrained dense design
        let covs = hours(start, days);
        let (b1, _) = build_basis(&terms[0], &covs).unwrap();
        let (b2, _) = build_basis(&terms[1], &covs).unwrap();
        let n = covs.len();
        let (center, scale) = trend_scaling(&s).unwrap();
        let mut x = DMatrix::zeros(n, 2 + b1.ncols() + b2.ncols());
        for r in 0..n {
            x[(r, 0)] = 1.0;
            x[(r, 1)] = (covs[r].t - center) / scale;
        }
        x.view_mut((0, 2), (n, b1.ncols())).copy_from(&b1);
        x.view_mut((0, 2 + b1.ncols()), (n, b2.ncols())).copy_from(&b2);
        let y = DVector::from_vec(s.values.clone());
        let ols = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        let fitted_ols = &x * ols;
        for (r, cov) in covs.iter().enumerate() {
            assert!((m.evaluate(cov) - fitted_ols[r]).abs() < 1e-6);
        }
    }

    #[test]
    fn fitted_values_do_not_depend_on_constraint_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let start = day(2015, 1, 5);
        let s = series_from(start, 60, |_, h, _| (h as f64 / 3.0).sin() + noise.sample(&mut rng));
        let spec = SplineTermSpec::single(Margin::ps(Covariate::HoD, 10));
        let (center, scale) = trend_scaling(&s).unwrap();
        let eq = assemble(&s, std::slice::from_ref(&spec), center, scale).unwrap();
        let base = eq.solve(&[3.0]).unwrap();
        let fitted_base = &eq.transform * &base.theta;

        // shift the raw basis by a constant before deriving the constraint
        let covs = hours(start, 60);
        let raw = raw_block(&spec, &covs);
        let shifted = raw.add_scalar(0.25);
        let alt = layout_term(&spec, &shifted).unwrap();
        let mut transform = DMatrix::zeros(2 + spec.raw_columns(), 2 + spec.constrained_columns());
        transform[(0, 0)] = 1.0;
        transform[(1, 1)] = 1.0;
        transform.view_mut((2, 2), alt.transform.shape()).copy_from(&alt.transform);
        let mut x = DMatrix::zeros(covs.len(), 2 + spec.raw_columns());
        for (r, c) in covs.iter().enumerate() {
            x[(r, 0)] = 1.0;
            x[(r, 1)] = (c.t - center) / scale;
        }
        x.view_mut((0, 2), raw.shape()).copy_from(&raw);
        let xc = &x * &transform;
        let mut pen = DMatrix::zeros(xc.ncols(), xc.ncols());
        pen.view_mut((2, 2), alt.penalty.shape()).copy_from(&alt.penalty);
        let y = DVector::from_vec(s.values.clone());
        let theta = (xc.transpose() * &xc + pen * 3.0).cholesky().unwrap().solve(&(xc.transpose() * &y));
        let fitted_alt = &x * (&transform * theta);
        let fitted_ref = &x * fitted_base;
        assert!((fitted_alt - fitted_ref).amax() < 1e-8);
    }

    #[test]
    fn periodic_term_repeats_every_period() {
        let s = series_from(day(2015, 1, 1), 1095, |d, h, _| (d.ordinal() as f64 / 58.0).sin() * 10.0 + h as f64);
        let m = fit_seasonal(&s, SeasonalTarget::Res, &SeasonalTarget::Res.default_terms(), &SmoothingGrid::default()).unwrap();
        let slope = m.trend_slope();
        for x in [0.0, 1234.5, 8000.25] {
            let a = HourCovariates { hod: 5.0, dow: 2.0, soy: x, t: 100.0 };
            let b = HourCovariates { soy: x + SOY_PERIOD_HOURS, ..a };
            let b_wrapped = HourCovariates { soy: (x + SOY_PERIOD_HOURS).rem_euclid(SOY_PERIOD_HOURS), ..a };
            assert!((m.evaluate(&a) - m.evaluate(&b)).abs() < 1e-9);
            assert!((m.evaluate(&a) - m.evaluate(&b_wrapped)).abs() < 1e-9);
        }
        assert!(slope.is_finite());
    }

    #[test]
    fn refit_schedule() {
        let sched = expanding_refit_schedule(day(2015, 1, 1), day(2024, 4, 1)).unwrap();
        let ends: Vec<i32> = sched.iter().map(|(d, _)| d.year()).collect();
        assert_eq!(ends, (2017..=2023).collect::<Vec<_>>());
        assert!(sched.iter().all(|(d, y)| d.month() == 12 && d.day() == 31 && *y == d.year() + 1));

        let sched = expanding_refit_schedule(day(2015, 1, 1), day(2017, 12, 31)).unwrap();
        assert_eq!(sched, vec![(day(2017, 12, 31), 2018)]);

        assert!(expanding_refit_schedule(day(2015, 1, 1), day(2016, 12, 31)).is_err());
    }

    #[test]
    fn model_text_round_trip() {
        let s = series_from(day(2015, 1, 1), 1095, |d, h, _| d.ordinal() as f64 * 0.1 + h as f64);
        let m = fit_seasonal(&s, SeasonalTarget::Load, &SeasonalTarget::Load.default_terms(), &SmoothingGrid { lambdas: vec![1.0], passes: 1 }).unwrap();
        let back = SeasonalModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(SeasonalModel::from_text("version,2\n").is_err());
    }
}
