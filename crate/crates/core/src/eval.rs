//! Accuracy metrics, Diebold–Mariano and augmented Dickey–Fuller tests, and
//! delimited/SVG report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::features::Component;
use crate::models::{CoefficientPath, ForecastRecord};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("eval: empty input")]
    EmptyInput,
    #[error("eval: {0}")]
    InsufficientData(String),
    #[error("eval: loss differential has non-positive long-run variance")]
    DegenerateVariance,
    #[error("eval: singular regression")]
    Singular,
    #[error("eval: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Overall,
    Year(i32),
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Grouping::Overall => f.write_str("overall"),
            Grouping::Year(y) => write!(f, "{y}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupBy {
    Overall,
    Year,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub model: String,
    pub horizon: u32,
    pub grouping: Grouping,
    pub rmse: f64,
    pub mae: f64,
    /// Distinct target days.
    pub n_days: usize,
    /// Hourly errors pooled (24 per complete day).
    pub n_hours: usize,
}

fn usable(r: &ForecastRecord) -> bool {
    !r.is_failed() && r.prediction.is_finite() && r.actual.is_finite()
}

/// Pooled hourly RMSE and MAE per (model, horizon[, target year]).
///
/// Failed cells and cells without an observed price are left out of the pool.
pub fn compute_metrics(records: &[ForecastRecord], by: GroupBy) -> Result<Vec<MetricsResult>> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    #[derive(Default)]
    struct Acc {
        se: f64,
        ae: f64,
        n: usize,
        days: BTreeSet<NaiveDate>,
    }
    let mut groups: BTreeMap<(String, u32, Grouping), Acc> = BTreeMap::new();
    // Sorting the errors first makes the sums independent of record order.
    let mut ordered: Vec<&ForecastRecord> = records.iter().filter(|r| usable(r)).collect();
    ordered.sort_by(|a, b| (&a.model, a.horizon, a.target, a.hour).cmp(&(&b.model, b.horizon, b.target, b.hour)));
    for r in ordered {
        let g = match by {
            GroupBy::Overall => Grouping::Overall,
            GroupBy::Year => Grouping::Year(r.target.year()),
        };
        let acc = groups.entry((r.model.clone(), r.horizon, g)).or_default();
        let e = r.error();
        acc.se += e * e;
        acc.ae += e.abs();
        acc.n += 1;
        acc.days.insert(r.target);
    }
    if groups.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(groups
        .into_iter()
        .map(|((model, horizon, grouping), a)| {
            let n = a.n as f64;
            MetricsResult { model, horizon, grouping, rmse: (a.se / n).sqrt(), mae: a.ae / n, n_days: a.days.len(), n_hours: a.n }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub model_a: String,
    pub model_b: String,
    pub horizon: u32,
    pub statistic: f64,
    /// `P(Z ≤ statistic)`: small values favour model A.
    pub p_value: f64,
    pub loss: String,
    pub hac_lag: usize,
    pub n_days: usize,
}

pub const DM_MIN_DAYS: usize = 30;
pub const DM_MAX_LAG: usize = 30;

/// HAC lag used at horizon `h`.
pub fn dm_lag(h: u32) -> usize {
    (h.saturating_sub(1) as usize).min(DM_MAX_LAG)
}

/// Daily L1 loss per target day, keeping only days with all 24 hours usable.
pub fn daily_l1_loss(records: &[&ForecastRecord]) -> BTreeMap<NaiveDate, f64> {
    let mut by_day: BTreeMap<NaiveDate, [Option<f64>; 24]> = BTreeMap::new();
    for r in records {
        if usable(r) && (1..=24).contains(&r.hour) {
            by_day.entry(r.target).or_insert([None; 24])[r.hour as usize - 1] = Some(r.error().abs());
        }
    }
    by_day.into_iter().filter_map(|(d, hours)| hours.iter().copied().sum::<Option<f64>>().map(|s| (d, s))).collect()
}

/// Newey–West long-run variance with Bartlett weights and `1/N` autocovariances.
pub fn newey_west(d: &[f64], lag: usize) -> f64 {
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let gamma = |k: usize| (k..n).map(|i| (d[i] - mean) * (d[i - k] - mean)).sum::<f64>() / n as f64;
    let mut omega = gamma(0);
    for k in 1..=lag.min(n.saturating_sub(1)) {
        omega += 2.0 * (1.0 - k as f64 / (lag as f64 + 1.0)) * gamma(k);
    }
    omega
}

/// DM statistic of a loss-differential series.
pub fn dm_statistic(d: &[f64], lag: usize) -> Result<f64> {
    if d.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let omega = newey_west(d, lag);
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(EvalError::DegenerateVariance);
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    Ok(mean / (omega / n).sqrt())
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// One-sided Diebold–Mariano test of "A is more accurate than B" at horizon `h`.
pub fn dm_test(a: &[ForecastRecord], b: &[ForecastRecord], horizon: u32) -> Result<DmResult> {
    let ra: Vec<&ForecastRecord> = a.iter().filter(|r| r.horizon == horizon).collect();
    let rb: Vec<&ForecastRecord> = b.iter().filter(|r| r.horizon == horizon).collect();
    if ra.is_empty() || rb.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let name = |rs: &[&ForecastRecord]| rs[0].model.clone();
    let la = daily_l1_loss(&ra);
    let lb = daily_l1_loss(&rb);
    let d: Vec<f64> = la.iter().filter_map(|(day, x)| lb.get(day).map(|y| x - y)).collect();
    if d.len() < DM_MIN_DAYS {
        return Err(EvalError::InsufficientData(format!("{} aligned days, need {DM_MIN_DAYS}", d.len())));
    }
    let hac_lag = dm_lag(horizon);
    let statistic = dm_statistic(&d, hac_lag)?;
    Ok(DmResult {
        model_a: name(&ra),
        model_b: name(&rb),
        horizon,
        statistic,
        p_value: standard_normal_cdf(statistic),
        loss: "daily_l1".into(),
        hac_lag,
        n_days: d.len(),
    })
}

/// Pairwise DM tests among `models` at `horizon` (ordered pairs, diagonal excluded).
pub fn dm_matrix(records: &[ForecastRecord], models: &[String], horizon: u32) -> Vec<std::result::Result<DmResult, (String, String, EvalError)>> {
    let by_model: BTreeMap<&str, Vec<ForecastRecord>> = models
        .iter()
        .map(|m| (m.as_str(), records.iter().filter(|r| &r.model == m && r.horizon == horizon).cloned().collect()))
        .collect();
    let mut out = Vec::new();
    for a in models {
        for b in models {
            if a != b {
                out.push(dm_test(&by_model[a.as_str()], &by_model[b.as_str()], horizon).map_err(|e| (a.clone(), b.clone(), e)));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Augmented Dickey–Fuller

/// Probabilities of the tabulated Dickey–Fuller quantiles.
const DF_PROBS: [f64; 30] = [
    0.001, 0.005, 0.01, 0.025, 0.05, 0.075, 0.10, 0.125, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75,
    0.80, 0.85, 0.90, 0.925, 0.95, 0.975, 0.99, 0.995, 0.999,
];

/// Simulated quantiles of the constant-only Dickey–Fuller t-statistic by series
/// length: Gaussian random walks, 2·10⁶ replications per length.
const DF_TABLE: [(usize, [f64; 30]); 6] = [
    (50, [
        -4.3657, -3.8254, -3.5718, -3.2163, -2.9227, -2.7382, -2.5990, -2.4850, -2.3883, -2.2259, -2.0887, -1.9675, -1.8558, -1.7506,
        -1.6493, -1.5502, -1.4505, -1.3479, -1.2399, -1.1226, -0.9901, -0.8353, -0.6479, -0.4054, -0.2464, -0.0385, 0.2802, 0.6614,
        0.9221, 1.4610,
    ]),
    (100, [
        -4.2142, -3.7294, -3.4987, -3.1662, -2.8907, -2.7160, -2.5823, -2.4730, -2.3798, -2.2217, -2.0888, -1.9700, -1.8607, -1.7576,
        -1.6579, -1.5597, -1.4603, -1.3589, -1.2516, -1.1346, -1.0035, -0.8503, -0.6639, -0.4218, -0.2644, -0.0589, 0.2585, 0.6296,
        0.8814, 1.4249,
    ]),
    (250, [
        -4.1438, -3.6724, -3.4521, -3.1373, -2.8721, -2.7019, -2.5730, -2.4658, -2.3750, -2.2198, -2.0880, -1.9708, -1.8631, -1.7604,
        -1.6617, -1.5641, -1.4656, -1.3646, -1.2573, -1.1413, -1.0115, -0.8591, -0.6749, -0.4353, -0.2778, -0.0717, 0.2467, 0.6132,
        0.8647, 1.3882,
    ]),
    (500, [
        -4.1144, -3.6564, -3.4404, -3.1300, -2.8659, -2.6977, -2.5698, -2.4645, -2.3739, -2.2205, -2.0892, -1.9724, -1.8640, -1.7614,
        -1.6628, -1.5648, -1.4668, -1.3662, -1.2592, -1.1434, -1.0130, -0.8619, -0.6780, -0.4366, -0.2789, -0.0741, 0.2422, 0.6098,
        0.8614, 1.3856,
    ]),
    (1000, [
        -4.1040, -3.6515, -3.4361, -3.1259, -2.8642, -2.6965, -2.5685, -2.4630, -2.3719, -2.2185, -2.0880, -1.9719, -1.8637, -1.7613,
        -1.6625, -1.5653, -1.4669, -1.3662, -1.2595, -1.1434, -1.0129, -0.8620, -0.6772, -0.4382, -0.2808, -0.0753, 0.2397, 0.6074,
        0.8607, 1.3735,
    ]),
    (2500, [
        -4.0999, -3.6483, -3.4318, -3.1237, -2.8620, -2.6949, -2.5675, -2.4626, -2.3715, -2.2183, -2.0876, -1.9718, -1.8643, -1.7629,
        -1.6644, -1.5673, -1.4692, -1.3679, -1.2612, -1.1454, -1.0153, -0.8638, -0.6790, -0.4404, -0.2836, -0.0804, 0.2362, 0.6070,
        0.8577, 1.3658,
    ]),
];

pub const ADF_MIN_OBS: usize = 50;

/// Quantiles for a series of length `n`, interpolated linearly in `1/n`.
fn df_quantiles(n: usize) -> [f64; 30] {
    let n = n.max(DF_TABLE[0].0);
    if n >= DF_TABLE[DF_TABLE.len() - 1].0 {
        return DF_TABLE[DF_TABLE.len() - 1].1;
    }
    let k = DF_TABLE.iter().position(|(m, _)| *m > n).expect("n below the largest tabulated length");
    let (n0, q0) = DF_TABLE[k - 1];
    let (n1, q1) = DF_TABLE[k];
    let w = (1.0 / n0 as f64 - 1.0 / n as f64) / (1.0 / n0 as f64 - 1.0 / n1 as f64);
    std::array::from_fn(|i| q0[i] + w * (q1[i] - q0[i]))
}

/// Dickey–Fuller critical value at level `prob` for a series of length `n`.
pub fn df_critical_value(prob: f64, n: usize) -> f64 {
    let q = df_quantiles(n);
    interpolate(&DF_PROBS, &q, prob)
}

/// Left-tail probability of `stat` under the unit-root null.
pub fn df_p_value(stat: f64, n: usize) -> f64 {
    let q = df_quantiles(n);
    if stat.is_nan() {
        return f64::NAN;
    }
    interpolate(&q, &DF_PROBS, stat)
}

/// Piecewise-linear map from sorted `xs` to `ys`, clamped at both ends.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|v| *v <= x);
    let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub series: String,
    pub lag_order: usize,
    /// t-statistic of the coefficient on `y_{t-1}`.
    pub statistic: f64,
    pub p_value: f64,
    pub reject_at_5pct: bool,
    pub n_obs: usize,
}

/// Schwert's rule `⌊12 (n/100)^{1/4}⌋`.
pub fn default_adf_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

struct Ols {
    beta: DVector<f64>,
    rss: f64,
    se1: f64,
}

/// OLS with the standard error of coefficient 1.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Ols> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = xtx.clone().cholesky().ok_or(EvalError::Singular)?;
    let beta = chol.solve(&xty);
    let resid = y - x * &beta;
    let rss = resid.dot(&resid);
    let inv = chol.inverse();
    // Reject numerically singular designs (e.g. a constant series).
    let cond = xtx.diagonal().iter().zip(inv.diagonal().iter()).map(|(a, b)| a * b).fold(0.0, f64::max);
    if !cond.is_finite() || cond > 1e14 {
        return Err(EvalError::Singular);
    }
    let dof = x.nrows() as f64 - x.ncols() as f64;
    let s2 = rss / dof;
    Ok(Ols { se1: (s2 * inv[(1, 1)]).sqrt(), beta, rss })
}

fn adf_design(y: &[f64], p: usize, first: usize) -> (DMatrix<f64>, DVector<f64>) {
    // rows t = first..n-1 with Δy_t = y_t - y_{t-1}; requires first ≥ p + 1
    let n = y.len();
    let rows = n - first;
    let x = DMatrix::from_fn(rows, 2 + p, |r, c| {
        let t = first + r;
        match c {
            0 => 1.0,
            1 => y[t - 1],
            k => y[t - k + 1] - y[t - k],
        }
    });
    let z = DVector::from_fn(rows, |r, _| y[first + r] - y[first + r - 1]);
    (x, z)
}

/// ADF test with a constant, lag order chosen by AIC over `0..=max_lag` on a common sample.
pub fn adf_test(series_id: &str, y: &[f64], max_lag: usize) -> Result<AdfResult> {
    let n = y.len();
    if n < ADF_MIN_OBS {
        return Err(EvalError::InsufficientData(format!("{n} observations, need {ADF_MIN_OBS}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Mismatch("series contains non-finite values".into()));
    }
    let max_lag = max_lag.min((n - 1) / 3);
    let scale: f64 = y.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let mut best: Option<(f64, usize)> = None;
    for p in 0..=max_lag {
        let (x, z) = adf_design(y, p, max_lag + 1);
        // Lag orders whose differences are collinear with the constant are not candidates.
        let fit = match ols(&x, &z) {
            Ok(f) => f,
            Err(_) if p > 0 => continue,
            Err(e) => return Err(e),
        };
        let m = z.len() as f64;
        let aic = m * (fit.rss.max(f64::MIN_POSITIVE) / m).ln() + 2.0 * (p + 2) as f64;
        if best.is_none_or(|(a, _)| aic < a - 1e-12) {
            best = Some((aic, p));
        }
    }
    let (_, p) = best.expect("at least lag 0");
    let (x, z) = adf_design(y, p, p + 1);
    let fit = ols(&x, &z)?;
    let gamma = fit.beta[1];
    // A perfect fit leaves the t-ratio undefined; an exact zero coefficient carries no evidence of reversion.
    let statistic = if fit.rss <= 1e-20 * scale.max(f64::MIN_POSITIVE) {
        if gamma < -1e-9 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    } else {
        gamma / fit.se1
    };
    let p_value = df_p_value(statistic, n);
    Ok(AdfResult {
        series: series_id.to_string(),
        lag_order: p,
        statistic,
        p_value,
        reject_at_5pct: statistic < df_critical_value(0.05, n),
        n_obs: z.len(),
    })
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableShape {
    ByHorizon,
    ByYear,
    DmMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Rmse,
    Mae,
}

impl Metric {
    fn of(self, m: &MetricsResult) -> f64 {
        match self {
            Metric::Rmse => m.rmse,
            Metric::Mae => m.mae,
        }
    }
}

pub enum TableInput<'a> {
    Metrics { results: &'a [MetricsResult], metric: Metric },
    Dm { results: &'a [DmResult], models: &'a [String], horizon: u32 },
}

/// A rendered table: header row, row labels in column 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Numeric cell values (NaN where the cell is text or missing), same shape as `rows` minus the label column.
    pub values: Vec<Vec<f64>>,
    /// Whether smaller cell values are better (controls shading).
    pub lower_is_better: bool,
}

pub const DIAGONAL_MARK: &str = "—";

fn fmt_cell(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => String::new(),
    }
}

impl Table {
    pub fn to_delimited(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    /// Heatmap with three shading buckets per table (terciles of the numeric cells).
    pub fn to_svg(&self) -> String {
        let cell_w = 90.0;
        let label_w = 140.0;
        let cell_h = 28.0;
        let top = 56.0;
        let cols = self.header.len().saturating_sub(1);
        let width = label_w + cell_w * cols as f64 + 20.0;
        let height = top + cell_h * (self.rows.len() as f64 + 1.0) + 20.0;
        let mut finite: Vec<f64> = self.values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        let cut = |q: f64| finite.get(((finite.len() as f64 - 1.0) * q).round() as usize).copied().unwrap_or(f64::NAN);
        let (lo, hi) = (cut(1.0 / 3.0), cut(2.0 / 3.0));
        let shade = |v: f64| -> &'static str {
            if !v.is_finite() {
                return "#ffffff";
            }
            let good = if self.lower_is_better { v <= lo } else { v >= hi };
            let bad = if self.lower_is_better { v > hi } else { v < lo };
            if good {
                "#b7e1b0"
            } else if bad {
                "#f4b6b0"
            } else {
                "#fbe8a6"
            }
        };
        let mut s = svg_open(width, height);
        let _ = writeln!(s, r#"<text x="10" y="24" font-size="15" font-weight="bold">{}</text>"#, xml_escape(&self.title));
        for (j, h) in self.header.iter().enumerate() {
            let x = if j == 0 { 10.0 } else { label_w + cell_w * (j - 1) as f64 + cell_w / 2.0 };
            let anchor = if j == 0 { "start" } else { "middle" };
            let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="12" text-anchor="{anchor}" font-weight="bold">{}</text>"#, top - 8.0, xml_escape(h));
        }
        for (i, row) in self.rows.iter().enumerate() {
            let y = top + cell_h * i as f64;
            let _ = writeln!(s, r#"<text x="10" y="{}" font-size="12">{}</text>"#, y + 18.0, xml_escape(&row[0]));
            for (j, cell) in row.iter().enumerate().skip(1) {
                let x = label_w + cell_w * (j - 1) as f64;
                let v = self.values.get(i).and_then(|r| r.get(j - 1)).copied().unwrap_or(f64::NAN);
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" fill="{}" stroke="#888888" stroke-width="0.5"/>"##,
                    shade(v)
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
                    x + cell_w / 2.0,
                    y + 18.0,
                    xml_escape(cell)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Renders metrics or DM results in one of the report layouts.
pub fn render_tables(input: TableInput<'_>, shape: TableShape) -> Result<Table> {
    match (input, shape) {
        (TableInput::Metrics { results, metric }, TableShape::ByHorizon) => by_horizon(results, metric),
        (TableInput::Metrics { results, metric }, TableShape::ByYear) => by_year(results, metric),
        (TableInput::Dm { results, models, horizon }, TableShape::DmMatrix) => dm_table(results, models, horizon),
        _ => Err(EvalError::Mismatch("table shape does not match the input kind".into())),
    }
}

fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::Rmse => "RMSE",
        Metric::Mae => "MAE",
    }
}

fn by_horizon(results: &[MetricsResult], metric: Metric) -> Result<Table> {
    let overall: Vec<&MetricsResult> = results.iter().filter(|r| r.grouping == Grouping::Overall).collect();
    if overall.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut models: Vec<&str> = Vec::new();
    for r in &overall {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let horizons: BTreeSet<u32> = overall.iter().map(|r| r.horizon).collect();
    let mut header = vec!["model".to_string()];
    header.extend(horizons.iter().map(|h| h.to_string()));
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for m in &models {
        let vals: Vec<f64> = horizons
            .iter()
            .map(|h| overall.iter().find(|r| r.model == *m && r.horizon == *h).map_or(f64::NAN, |r| metric.of(r)))
            .collect();
        let mut row = vec![m.to_string()];
        row.extend(vals.iter().map(|v| fmt_cell(Some(*v), 2)));
        rows.push(row);
        values.push(vals);
    }
    Ok(Table { title: format!("{} (EUR/MWh) by horizon", metric_name(metric)), header, rows, values, lower_is_better: true })
}

fn by_year(results: &[MetricsResult], metric: Metric) -> Result<Table> {
    let yearly: Vec<&MetricsResult> = results.iter().filter(|r| matches!(r.grouping, Grouping::Year(_))).collect();
    if yearly.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let horizons: BTreeSet<u32> = yearly.iter().map(|r| r.horizon).collect();
    let mut variants: Vec<(String, u32)> = Vec::new();
    for r in &yearly {
        if !variants.contains(&(r.model.clone(), r.horizon)) {
            variants.push((r.model.clone(), r.horizon));
        }
    }
    let label = |(m, h): &(String, u32)| if horizons.len() == 1 { m.clone() } else { format!("{m} h={h}") };
    let years: BTreeSet<Grouping> = yearly.iter().map(|r| r.grouping).collect();
    let mut header = vec!["year".to_string()];
    header.extend(variants.iter().map(label));
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for y in &years {
        let vals: Vec<f64> = variants
            .iter()
            .map(|(m, h)| yearly.iter().find(|r| r.grouping == *y && &r.model == m && r.horizon == *h).map_or(f64::NAN, |r| metric.of(r)))
            .collect();
        let mut row = vec![y.to_string()];
        row.extend(vals.iter().map(|v| fmt_cell(Some(*v), 2)));
        rows.push(row);
        values.push(vals);
    }
    Ok(Table { title: format!("{} (EUR/MWh) by year", metric_name(metric)), header, rows, values, lower_is_better: true })
}

fn dm_table(results: &[DmResult], models: &[String], horizon: u32) -> Result<Table> {
    if models.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut header = vec!["a \\ b".to_string()];
    header.extend(models.iter().cloned());
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for a in models {
        let mut row = vec![a.clone()];
        let mut vals = Vec::new();
        for b in models {
            if a == b {
                row.push(DIAGONAL_MARK.to_string());
                vals.push(f64::NAN);
                continue;
            }
            let p = results.iter().find(|r| &r.model_a == a && &r.model_b == b && r.horizon == horizon).map(|r| r.p_value);
            row.push(fmt_cell(p, 3));
            vals.push(p.unwrap_or(f64::NAN));
        }
        rows.push(row);
        values.push(vals);
    }
    Ok(Table { title: format!("DM p-values, h = {horizon} (row better than column)"), header, rows, values, lower_is_better: true })
}

// ---------------------------------------------------------------------------
// Charts

const PALETTE: [&str; 12] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"];

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n"
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from data to pixel coordinates.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn new(xs: (f64, f64), ys: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if a == b { (a - 1.0, b + 1.0) } else { (a, b) };
        let (x0, x1) = pad(xs);
        let (y0, y1) = pad(ys);
        Frame { x0, x1, y0, y1, left: 70.0, top: 40.0, width: 620.0, height: 320.0 }
    }

    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + (self.y1 - y) / (self.y1 - self.y0) * self.height
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(s, r#"<text x="{l}" y="24" font-size="15" font-weight="bold">{}</text>"#, xml_escape(title));
        let _ = writeln!(s, r##"<rect x="{l}" y="{t}" width="{w}" height="{h}" fill="none" stroke="#444444"/>"##);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let yv = self.y0 + f * (self.y1 - self.y0);
            let xv = self.x0 + f * (self.x1 - self.x0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, l - 6.0, self.py(yv) + 3.0, short(yv));
            let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, self.px(xv), t + h + 14.0, short(xv));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#, l + w / 2.0, t + h + 32.0, xml_escape(xlabel));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            t + h / 2.0,
            t + h / 2.0,
            xml_escape(ylabel)
        );
    }

    fn points(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        pts.map(|(x, y)| format!("{:.3},{:.3}", self.px(x), self.py(y))).collect::<Vec<_>>().join(" ")
    }
}

fn short(v: f64) -> String {
    if v.abs() >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    vals.filter(|v| v.is_finite()).fold(None, |acc, v| Some(acc.map_or((v, v), |(a, b): (f64, f64)| (a.min(v), b.max(v)))))
}

/// Scaled-coefficient paths against the horizon, one polyline per regressor.
pub fn render_coefficient_paths(path: &CoefficientPath) -> Result<String> {
    if path.horizons.is_empty() || path.columns.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let xs = range(path.horizons.iter().map(|h| *h as f64)).ok_or(EvalError::EmptyInput)?;
    let ys = range(path.scaled.iter().flatten().copied().chain([0.0])).ok_or(EvalError::EmptyInput)?;
    let frame = Frame::new(xs, ys);
    let mut s = svg_open(900.0, 400.0);
    frame.axes(&mut s, &format!("Scaled coefficients, {} hour {}", path.model, path.hour), "horizon (days)", "scaled coefficient");
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#999999" stroke-dasharray="4 3"/>"##,
        frame.left,
        frame.left + frame.width,
        y = frame.py(0.0)
    );
    for (j, name) in path.columns.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let pts: Vec<(f64, f64)> =
            path.horizons.iter().zip(&path.scaled).filter(|(_, r)| r[j].is_finite()).map(|(h, r)| (*h as f64, r[j])).collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            xml_escape(name),
            frame.points(pts.iter().copied())
        );
        let ly = frame.top + 12.0 + 14.0 * j as f64;
        let lx = frame.left + frame.width + 12.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="10" height="3" fill="{color}"/>"#, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="10">{}</text>"#, lx + 14.0, xml_escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Cumulative layers of a component stack: layer 0 is the intercept and the
/// last layer is the forecast.
pub fn stack_components(records: &[ForecastRecord]) -> Vec<(String, Vec<f64>)> {
    let mut layers = vec![("intercept".to_string(), records.iter().map(|r| r.intercept).collect::<Vec<f64>>())];
    for c in Component::ALL {
        if records.iter().all(|r| r.component(c) == 0.0) {
            continue;
        }
        let prev = layers.last().expect("intercept layer").1.clone();
        layers.push((c.as_str().to_string(), prev.iter().zip(records).map(|(p, r)| p + r.component(c)).collect()));
    }
    layers
}

/// Stacked component chart of consecutive records with the forecast and the observed price.
pub fn render_components(records: &[ForecastRecord]) -> Result<String> {
    let recs: Vec<&ForecastRecord> = records.iter().filter(|r| r.prediction.is_finite()).collect();
    if recs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let owned: Vec<ForecastRecord> = recs.iter().map(|r| (*r).clone()).collect();
    let layers = stack_components(&owned);
    let xs: Vec<f64> = (0..owned.len()).map(|i| i as f64).collect();
    let ys = range(
        layers.iter().flat_map(|(_, v)| v.iter().copied()).chain(owned.iter().map(|r| r.actual)).chain(owned.iter().map(|r| r.prediction)).chain([0.0]),
    )
    .ok_or(EvalError::EmptyInput)?;
    let frame = Frame::new((0.0, (owned.len().max(2) - 1) as f64), ys);
    let mut s = svg_open(900.0, 400.0);
    let title = format!("Forecast components, {} h={} from {}", owned[0].model, owned[0].horizon, owned[0].target);
    frame.axes(&mut s, &title, "hour of evaluation window", "EUR/MWh");
    let mut lower = vec![0.0; owned.len()];
    for (k, (name, upper)) in layers.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let poly: Vec<(f64, f64)> =
            xs.iter().copied().zip(upper.iter().copied()).chain(xs.iter().copied().zip(lower.iter().copied()).rev()).collect();
        let _ = writeln!(
            s,
            r#"<polygon data-layer="{}" points="{}" fill="{color}" fill-opacity="0.45" stroke="none"/>"#,
            xml_escape(name),
            frame.points(poly.into_iter())
        );
        let ly = frame.top + 12.0 + 14.0 * k as f64;
        let lx = frame.left + frame.width + 12.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="10" height="8" fill="{color}" fill-opacity="0.45"/>"#, ly - 7.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="10">{}</text>"#, lx + 14.0, xml_escape(name));
        lower = upper.clone();
    }
    let envelope = &layers.last().expect("intercept layer").1;
    let _ = writeln!(
        s,
        r##"<polyline id="envelope" data-values="{}" points="{}" fill="none" stroke="#000000" stroke-width="0.8" stroke-dasharray="2 2"/>"##,
        envelope.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
        frame.points(xs.iter().copied().zip(envelope.iter().copied()))
    );
    let _ = writeln!(
        s,
        r##"<polyline id="forecast" data-values="{}" points="{}" fill="none" stroke="#000000" stroke-width="1.6"/>"##,
        owned.iter().map(|r| r.prediction.to_string()).collect::<Vec<_>>().join(" "),
        frame.points(xs.iter().copied().zip(owned.iter().map(|r| r.prediction)))
    );
    let actual: Vec<(f64, f64)> = xs.iter().copied().zip(owned.iter().map(|r| r.actual)).filter(|(_, y)| y.is_finite()).collect();
    if !actual.is_empty() {
        let _ = writeln!(s, r##"<polyline id="actual" points="{}" fill="none" stroke="#d62728" stroke-width="1.2"/>"##, frame.points(actual.into_iter()));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Line chart of a single numeric series (used for ADF diagnostics).
pub fn render_series(title: &str, values: &[f64]) -> Result<String> {
    let xs = (0.0, (values.len().max(2) - 1) as f64);
    let ys = range(values.iter().copied()).ok_or(EvalError::EmptyInput)?;
    let frame = Frame::new(xs, ys);
    let mut s = svg_open(900.0, 400.0);
    frame.axes(&mut s, title, "day", "value");
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.2"/>"##,
        frame.points(values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, v)| (i as f64, *v)))
    );
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::Duration;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rec(model: &str, h: u32, target: NaiveDate, hour: u8, prediction: f64, actual: f64) -> ForecastRecord {
        ForecastRecord {
            model: model.into(),
            origin: target - Duration::days(h as i64),
            horizon: h,
            target,
            hour,
            prediction,
            actual,
            intercept: prediction,
            components: [0.0; crate::features::N_COMPONENTS],
            flags: 0,
        }
    }

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
    }

    fn day_of(errors: &[f64], model: &str, h: u32, target: NaiveDate) -> Vec<ForecastRecord> {
        errors.iter().enumerate().map(|(i, e)| rec(model, h, target, i as u8 + 1, 0.0, *e)).collect()
    }

    #[test]
    fn metrics_hand_values() {
        let zero = compute_metrics(&day_of(&[0.0; 24], "m", 1, day0()), GroupBy::Overall).unwrap();
        assert_eq!((zero[0].rmse, zero[0].mae), (0.0, 0.0));
        let two = compute_metrics(&day_of(&[2.0; 24], "m", 1, day0()), GroupBy::Overall).unwrap();
        assert_eq!((two[0].rmse, two[0].mae, two[0].n_days), (2.0, 2.0, 1));
        let mixed: Vec<f64> = (0..24).map(|i| if i < 12 { 3.0 } else { 4.0 }).collect();
        let m = compute_metrics(&day_of(&mixed, "m", 1, day0()), GroupBy::Overall).unwrap();
        assert_eq!(m[0].mae, 3.5);
        assert_abs_diff_eq!(m[0].rmse, 12.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn metrics_group_by_year_and_skip_failed() {
        let mut recs = day_of(&[1.0; 24], "m", 7, day0());
        recs.extend(day_of(&[3.0; 24], "m", 7, NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()));
        recs[0].prediction = f64::NAN;
        recs[0].flags = crate::models::FLAG_FAILED;
        let by_year = compute_metrics(&recs, GroupBy::Year).unwrap();
        assert_eq!(by_year.len(), 2);
        assert_eq!(by_year[0].grouping, Grouping::Year(2020));
        assert_eq!(by_year[0].n_hours, 23);
        assert_eq!(by_year[1].mae, 3.0);
        assert_eq!(compute_metrics(&[], GroupBy::Overall), Err(EvalError::EmptyInput));
    }

    #[test]
    fn dm_identical_forecasts_are_degenerate() {
        let a: Vec<ForecastRecord> = (0..40).flat_map(|d| day_of(&[1.0; 24], "a", 1, day0() + Duration::days(d))).collect();
        let b: Vec<ForecastRecord> = a.iter().map(|r| ForecastRecord { model: "b".into(), ..r.clone() }).collect();
        assert_eq!(dm_test(&a, &b, 1), Err(EvalError::DegenerateVariance));
    }

    #[test]
    fn dm_plain_t_statistic_at_lag_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d: Vec<f64> = (0..200).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 0.3 + z }).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(dm_statistic(&d, 0).unwrap(), mean / (var / n).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn dm_antisymmetric_with_convention_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for d in 0..60 {
            let t = day0() + Duration::days(d);
            let ea: Vec<f64> = (0..24).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eb: Vec<f64> = (0..24).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 1.2 * z }).collect();
            a.extend(day_of(&ea, "a", 14, t));
            b.extend(day_of(&eb, "b", 14, t));
        }
        let ab = dm_test(&a, &b, 14).unwrap();
        let ba = dm_test(&b, &a, 14).unwrap();
        assert_abs_diff_eq!(ab.statistic, -ba.statistic, epsilon = 1e-12);
        assert_eq!(ab.hac_lag, 13);
        assert_eq!(ab.loss, "daily_l1");
        assert!((0.0..=1.0).contains(&ab.p_value));
        assert_abs_diff_eq!(ab.p_value + ba.p_value, 1.0, epsilon = 1e-12);
        assert_eq!(dm_lag(360), 30);
        assert!(matches!(dm_test(&a[..24 * 10], &b[..24 * 10], 14), Err(EvalError::InsufficientData(_))));
    }

    #[test]
    fn df_table_interpolation() {
        assert_abs_diff_eq!(df_critical_value(0.05, 1000), -2.8642, epsilon = 1e-12);
        let mid = df_critical_value(0.05, 700);
        assert!(mid < -2.8642 && mid > -2.8659);
        assert_abs_diff_eq!(df_p_value(-2.8642, 1000), 0.05, epsilon = 1e-9);
        assert_eq!(df_p_value(-10.0, 1000), 0.001);
        assert_eq!(df_p_value(10.0, 1000), 0.999);
        let mut last = 0.0;
        for k in 0..200 {
            let p = df_p_value(-5.0 + k as f64 * 0.04, 400);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn adf_white_noise_rejects_and_trend_does_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = adf_test("white", &w, default_adf_lag(1000)).unwrap();
        assert!(r.reject_at_5pct, "{r:?}");
        let trend: Vec<f64> = (0..1000).map(|t| t as f64).collect();
        let r = adf_test("trend", &trend, default_adf_lag(1000)).unwrap();
        assert!(!r.reject_at_5pct, "{r:?}");
        assert_eq!(adf_test("const", &[1.0; 100], 4), Err(EvalError::Singular));
        assert!(matches!(adf_test("short", &[1.0; 10], 2), Err(EvalError::InsufficientData(_))));
    }

    #[test]
    fn tables_have_expected_shapes() {
        let mut recs = Vec::new();
        for m in ["a", "b"] {
            for h in [1, 7, 30] {
                recs.extend(day_of(&[h as f64; 24], m, h, day0()));
            }
        }
        let metrics = compute_metrics(&recs, GroupBy::Overall).unwrap();
        let t = render_tables(TableInput::Metrics { results: &metrics, metric: Metric::Rmse }, TableShape::ByHorizon).unwrap();
        assert_eq!(t.header, vec!["model", "1", "7", "30"]);
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows.iter().all(|r| r.len() == 4));
        assert_eq!(t.to_delimited().lines().count(), 3);

        let models = vec!["a".to_string(), "b".to_string()];
        let dm = vec![DmResult {
            model_a: "a".into(),
            model_b: "b".into(),
            horizon: 1,
            statistic: -2.0,
            p_value: 0.0228,
            loss: "daily_l1".into(),
            hac_lag: 0,
            n_days: 50,
        }];
        let t = render_tables(TableInput::Dm { results: &dm, models: &models, horizon: 1 }, TableShape::DmMatrix).unwrap();
        assert_eq!(t.rows[0][1], DIAGONAL_MARK);
        assert_eq!(t.rows[1][2], DIAGONAL_MARK);
        assert_eq!(t.rows[0][2], "0.023");
        assert!(roxmltree::Document::parse(&t.to_svg()).is_ok());
    }

    #[test]
    fn coefficient_path_svg() {
        let path = CoefficientPath {
            model: "constr".into(),
            hour: 9,
            horizons: vec![1, 30, 180],
            columns: vec!["gas".into()],
            scaled: vec![vec![0.5], vec![0.3], vec![0.1]],
        };
        let svg = render_coefficient_paths(&path).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 1);
        let empty = CoefficientPath { horizons: vec![], scaled: vec![], ..path };
        assert_eq!(render_coefficient_paths(&empty), Err(EvalError::EmptyInput));
    }

    #[test]
    fn component_stack_envelope_is_the_forecast() {
        let mut recs = Vec::new();
        for i in 0..24u8 {
            let mut r = rec("current", 30, day0(), i + 1, 0.0, 50.0);
            r.intercept = 10.0;
            r.components[Component::Gas.index()] = 30.0 + i as f64;
            r.components[Component::Res.index()] = -5.0;
            r.prediction = r.intercept + r.components.iter().sum::<f64>();
            recs.push(r);
        }
        let layers = stack_components(&recs);
        assert_eq!(layers.len(), 3);
        for (v, r) in layers.last().unwrap().1.iter().zip(&recs) {
            assert_abs_diff_eq!(*v, r.prediction, epsilon = 1e-12);
        }
        let svg = render_components(&recs).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let values = |id: &str| -> Vec<f64> {
            let node = doc.descendants().find(|n| n.attribute("id") == Some(id)).unwrap();
            node.attribute("data-values").unwrap().split(' ').map(|v| v.parse().unwrap()).collect()
        };
        assert_eq!(values("envelope"), values("forecast"));
        assert_eq!(render_components(&[]), Err(EvalError::EmptyInput));
    }
}
