//! Box-constrained elastic net by cyclical coordinate descent.
//!
//! Minimizes, on standardized data,
//!
//! ```text
//! (1/2n) ||y - Xβ||² + λ ( α ||β||₁ + (1-α)/2 ||β||² )   subject to  l ≤ β ≤ u
//! ```
//!
//! The one-dimensional subproblem is a convex quadratic plus an absolute
//! value, so its constrained minimizer is the unconstrained one clipped to
//! `[l_j, u_j]`. All updates run on the Gram matrix `XᵀX/n`, which keeps a
//! sweep at O(p²) regardless of the window length.
//!
//! [`fit_path`] wraps the kernel: standardize, map physical bounds into the
//! standardized scale, walk an exponential λ grid with warm starts, pick λ by
//! BIC, and map the coefficients back to physical units.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fundamentals::Interval;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("response has zero variance")]
    DegenerateResponse,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("design has no rows")]
    EmptyDesign,
    #[error("non-finite value in design or response")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Columns with a standard deviation below this (relative to their scale) are dropped.
const ZERO_VARIANCE_REL: f64 = 1e-12;
/// Floor for α when deriving the largest λ.
const ALPHA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: f64,
    pub grid_size: usize,
    /// λ_min / λ_max.
    pub grid_ratio: f64,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Close the path with an unpenalized (bounded least squares) point at λ = 0.
    #[serde(default = "default_endpoint")]
    pub unpenalized_endpoint: bool,
}

fn default_endpoint() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { alpha: 0.5, grid_size: 100, grid_ratio: 1e-4, tol: 1e-7, max_sweeps: 10_000, unpenalized_endpoint: true }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SolverError::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.grid_ratio > 0.0 && self.grid_ratio < 1.0) {
            return Err(SolverError::InvalidConfig(format!("grid_ratio {} outside (0, 1)", self.grid_ratio)));
        }
        if !(self.tol > 0.0) {
            return Err(SolverError::InvalidConfig("tol must be positive".into()));
        }
        if self.grid_size == 0 || self.max_sweeps == 0 {
            return Err(SolverError::InvalidConfig("grid_size and max_sweeps must be positive".into()));
        }
        Ok(())
    }
}

/// `sign(z) · max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Sufficient statistics of a standardized problem: `XᵀX/n`, `Xᵀy/n`, `yᵀy/n`.
#[derive(Debug, Clone)]
pub struct Gram {
    n: usize,
    p: usize,
    /// Column-major `p × p`.
    xx: Vec<f64>,
    xy: Vec<f64>,
    yy: f64,
}

impl Gram {
    pub fn new(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(SolverError::Dimension(format!("{} rows vs {} responses", n, y.len())));
        }
        if n == 0 {
            return Err(SolverError::EmptyDesign);
        }
        let data = x.as_slice();
        let col = |j: usize| &data[j * n..(j + 1) * n];
        let inv_n = 1.0 / n as f64;
        let mut xx = vec![0.0; p * p];
        for j in 0..p {
            for k in j..p {
                let v = dot(col(j), col(k)) * inv_n;
                xx[j * p + k] = v;
                xx[k * p + j] = v;
            }
        }
        let xy = (0..p).map(|j| dot(col(j), y) * inv_n).collect();
        let yy = dot(y, y) * inv_n;
        Ok(Gram { n, p, xx, xy, yy })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.xx[j * self.p..(j + 1) * self.p]
    }

    fn product(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                axpy(b, self.col(j), &mut out);
            }
        }
        out
    }

    /// `‖y − Xβ‖² / n`, clamped at zero.
    pub fn mean_rss(&self, beta: &[f64]) -> f64 {
        let gb = self.product(beta);
        (self.yy - 2.0 * dot(&self.xy, beta) + dot(beta, &gb)).max(0.0)
    }

    pub fn objective(&self, beta: &[f64], lambda: f64, alpha: f64) -> f64 {
        0.5 * self.mean_rss(beta) + penalty(beta, lambda, alpha)
    }

    /// Largest violation of the box-constrained optimality conditions at `beta`.
    pub fn kkt_violation(&self, beta: &[f64], bounds: &[Interval], lambda: f64, alpha: f64) -> f64 {
        let gb = self.product(beta);
        let l1 = lambda * alpha;
        let l2 = lambda * (1.0 - alpha);
        let mut worst: f64 = 0.0;
        for j in 0..self.p {
            let b = beta[j];
            let g = gb[j] - self.xy[j] + l2 * b;
            // subgradient range of the smooth part plus the L1 term
            let (lo, hi) = if b > 0.0 {
                (g + l1, g + l1)
            } else if b < 0.0 {
                (g - l1, g - l1)
            } else {
                (g - l1, g + l1)
            };
            let at_lower = b <= bounds[j].lower;
            let at_upper = b >= bounds[j].upper;
            let violation = match (at_lower, at_upper) {
                (true, true) => 0.0,
                // moving up must not help: some subgradient ≥ 0
                (true, false) => (-hi).max(0.0),
                (false, true) => lo.max(0.0),
                (false, false) => {
                    if lo > 0.0 {
                        lo
                    } else if hi < 0.0 {
                        -hi
                    } else {
                        0.0
                    }
                }
            };
            worst = worst.max(violation);
        }
        worst
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn penalty(beta: &[f64], lambda: f64, alpha: f64) -> f64 {
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

/// Objective value on an explicit design.
pub fn objective(x: &DMatrix<f64>, y: &[f64], beta: &[f64], lambda: f64, alpha: f64) -> f64 {
    let n = x.nrows();
    let fitted = x * nalgebra::DVector::from_column_slice(beta);
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    0.5 * rss / n as f64 + penalty(beta, lambda, alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdOutcome {
    pub beta: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Runs coordinate descent from `beta` (updated in place). Returns `(sweeps, converged)`.
pub fn coordinate_descent(gram: &Gram, bounds: &[Interval], lambda: f64, config: &SolverConfig, beta: &mut [f64]) -> (usize, bool) {
    let p = gram.p;
    let l1 = lambda * config.alpha;
    let l2 = lambda * (1.0 - config.alpha);
    for (b, iv) in beta.iter_mut().zip(bounds) {
        *b = b.clamp(iv.lower, iv.upper);
    }
    let mut gb = gram.product(beta);
    for sweep in 1..=config.max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let gjj = gram.xx[j * p + j];
            let denom = gjj + l2;
            let old = beta[j];
            let new = if denom > 0.0 {
                let rho = gram.xy[j] - gb[j] + gjj * old;
                (soft_threshold(rho, l1) / denom).clamp(bounds[j].lower, bounds[j].upper)
            } else {
                0.0_f64.clamp(bounds[j].lower, bounds[j].upper)
            };
            let delta = new - old;
            if delta != 0.0 {
                axpy(delta, gram.col(j), &mut gb);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < config.tol {
            return (sweep, true);
        }
    }
    (config.max_sweeps, false)
}

/// Fits one λ on a standardized design, starting from zero (projected into the box).
pub fn fit_constrained(x: &DMatrix<f64>, y: &[f64], bounds: &[Interval], lambda: f64, config: &SolverConfig) -> Result<CdOutcome> {
    config.validate()?;
    if bounds.len() != x.ncols() {
        return Err(SolverError::Dimension(format!("{} bounds for {} columns", bounds.len(), x.ncols())));
    }
    let gram = Gram::new(x, y)?;
    let mut beta = vec![0.0; x.ncols()];
    let (sweeps, converged) = coordinate_descent(&gram, bounds, lambda, config, &mut beta);
    Ok(CdOutcome { beta, sweeps, converged })
}

fn lambda_max_from(xy: &[f64], alpha: f64) -> f64 {
    let a = alpha.max(ALPHA_FLOOR);
    xy.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / a
}

fn grid_from(lambda_max: f64, config: &SolverConfig) -> Vec<f64> {
    if !(lambda_max > 0.0) {
        return vec![0.0];
    }
    if config.grid_size == 1 {
        return vec![lambda_max];
    }
    let steps = (config.grid_size - 1) as f64;
    (0..config.grid_size)
        .map(|k| lambda_max * config.grid_ratio.powf(k as f64 / steps))
        .collect()
}

/// Descending, log-spaced λ values from the smallest all-zero λ down to `λ_max · grid_ratio`.
pub fn lambda_grid(x: &DMatrix<f64>, y: &[f64], config: &SolverConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let gram = Gram::new(x, y)?;
    Ok(grid_from(lambda_max_from(&gram.xy, config.alpha), config))
}

/// Sample means and standard deviations of the estimation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    /// Columns with zero variance; excluded from the fit and reported as 0.
    pub dropped: Vec<usize>,
}

impl NormalizationStats {
    pub fn compute(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 {
            return Err(SolverError::EmptyDesign);
        }
        let (y_mean, y_std) = mean_std(y);
        let data = x.as_slice();
        let mut x_mean = Vec::with_capacity(p);
        let mut x_std = Vec::with_capacity(p);
        let mut dropped = Vec::new();
        for j in 0..p {
            let (m, s) = mean_std(&data[j * n..(j + 1) * n]);
            if !(s > ZERO_VARIANCE_REL * m.abs().max(1.0)) {
                dropped.push(j);
            }
            x_mean.push(m);
            x_std.push(s);
        }
        Ok(NormalizationStats { x_mean, x_std, y_mean, y_std, dropped })
    }

    pub fn is_kept(&self, j: usize) -> bool {
        self.dropped.binary_search(&j).is_err()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Maps physical coefficient boxes onto the standardized scale: `[l·σx/σy, u·σx/σy]`.
pub fn bounds_to_standardized(bounds: &[Interval], stats: &NormalizationStats) -> Result<Vec<Interval>> {
    if !(stats.y_std > 0.0) {
        return Err(SolverError::DegenerateResponse);
    }
    if bounds.len() != stats.x_std.len() {
        return Err(SolverError::Dimension(format!("{} bounds for {} columns", bounds.len(), stats.x_std.len())));
    }
    Ok(bounds
        .iter()
        .zip(&stats.x_std)
        .map(|(iv, &sx)| {
            let scale = sx / stats.y_std;
            let map = |v: f64| if v.is_infinite() { v } else { v * scale };
            Interval::new(map(iv.lower), map(iv.upper))
        })
        .collect())
}

/// One point on a fitted λ path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    /// Standardized coefficients of the kept columns.
    pub beta: Vec<f64>,
    /// Residual sum of squares on the standardized response.
    pub rss: f64,
    /// Nonzero slopes plus one for the intercept.
    pub df: usize,
    pub converged: bool,
}

/// `n·ln(RSS/n) + df·ln(n)`; a zero RSS yields `-∞`.
pub fn bic(rss: f64, df: usize, n: usize) -> f64 {
    let nf = n as f64;
    if rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    nf * (rss / nf).ln() + df as f64 * nf.ln()
}

/// Index of the BIC minimizer; the path is ordered from large to small λ and ties keep the larger λ.
pub fn bic_select(path: &[PathPoint], n: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, point) in path.iter().enumerate() {
        let value = bic(point.rss, point.df, n);
        let better = match best {
            None => true,
            Some((bi, bv)) => {
                let tie = value == bv || (value.is_infinite() && bv.is_infinite());
                value < bv || (tie && point.lambda > path[bi].lambda)
            }
        };
        if better {
            best = Some((i, value));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub lambda: f64,
    pub bic: f64,
    pub df: usize,
}

/// A selected fit, in both physical and standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub intercept: f64,
    /// Physical-unit slopes, one per design column (dropped columns are 0).
    pub coefficients: Vec<f64>,
    /// Standardized slopes, one per design column.
    pub coefficients_scaled: Vec<f64>,
    pub lambda_selected: f64,
    pub bic_path: Vec<PathSummary>,
    pub residuals: Vec<f64>,
    /// Nonzero slope count.
    pub df: usize,
    pub converged: bool,
    pub stats: NormalizationStats,
}

impl FitResult {
    /// Physical-unit prediction for one regressor row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, row)
    }

    /// Per-column contributions `β_j · x_j`.
    pub fn contributions(&self, row: &[f64]) -> Vec<f64> {
        self.coefficients.iter().zip(row).map(|(b, x)| b * x).collect()
    }

    /// Prediction through the standardized model: `σ_y · Σ β̃_j (x_j − μ_j)/σ_j + μ_y`.
    pub fn predict_standardized(&self, row: &[f64]) -> f64 {
        let s = &self.stats;
        let z: f64 = (0..row.len())
            .filter(|&j| s.is_kept(j))
            .map(|j| self.coefficients_scaled[j] * (row[j] - s.x_mean[j]) / s.x_std[j])
            .sum();
        s.y_std * z + s.y_mean
    }
}

/// Fits the full λ path on a physical-unit design and returns the BIC-selected fit.
pub fn fit_path(x: &DMatrix<f64>, y: &[f64], bounds: &[Interval], config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let (n, p) = x.shape();
    if n == 0 {
        return Err(SolverError::EmptyDesign);
    }
    if y.len() != n || bounds.len() != p {
        return Err(SolverError::Dimension(format!("{n}×{p} design, {} responses, {} bounds", y.len(), bounds.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    let stats = NormalizationStats::compute(x, y)?;
    let kept: Vec<usize> = (0..p).filter(|&j| stats.is_kept(j)).collect();

    if !(stats.y_std > 0.0) || kept.is_empty() {
        // Nothing to learn beyond the mean (constant response or no usable column).
        let intercept = stats.y_mean;
        let residuals = y.iter().map(|v| v - intercept).collect();
        return Ok(FitResult {
            intercept,
            coefficients: vec![0.0; p],
            coefficients_scaled: vec![0.0; p],
            lambda_selected: 0.0,
            bic_path: Vec::new(),
            residuals,
            df: 0,
            converged: true,
            stats,
        });
    }

    let std_bounds_all = bounds_to_standardized(bounds, &stats)?;
    let std_bounds: Vec<Interval> = kept.iter().map(|&j| std_bounds_all[j]).collect();
    let z = DMatrix::from_fn(n, kept.len(), |i, k| {
        let j = kept[k];
        (x[(i, j)] - stats.x_mean[j]) / stats.x_std[j]
    });
    let yz: Vec<f64> = y.iter().map(|v| (v - stats.y_mean) / stats.y_std).collect();
    let gram = Gram::new(&z, &yz)?;
    let lambdas = grid_from(lambda_max_from(&gram.xy, config.alpha), config);

    let mut beta = vec![0.0; kept.len()];
    let mut path = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let (_, converged) = coordinate_descent(&gram, &std_bounds, lambda, config, &mut beta);
        let rss = gram.mean_rss(&beta) * n as f64;
        let df = beta.iter().filter(|b| **b != 0.0).count() + 1;
        path.push(PathPoint { lambda, beta: beta.clone(), rss, df, converged });
    }
    if config.unpenalized_endpoint && lambdas.last().is_some_and(|l| *l > 0.0) {
        let (_, converged) = coordinate_descent(&gram, &std_bounds, 0.0, config, &mut beta);
        let rss = gram.mean_rss(&beta) * n as f64;
        let df = beta.iter().filter(|b| **b != 0.0).count() + 1;
        path.push(PathPoint { lambda: 0.0, beta, rss, df, converged });
    }
    let best = bic_select(&path, n).expect("non-empty path");
    let chosen = &path[best];

    let mut coefficients = vec![0.0; p];
    let mut coefficients_scaled = vec![0.0; p];
    for (k, &j) in kept.iter().enumerate() {
        coefficients_scaled[j] = chosen.beta[k];
        let phys = chosen.beta[k] * stats.y_std / stats.x_std[j];
        coefficients[j] = if chosen.beta[k] == 0.0 { 0.0 } else { phys.clamp(bounds[j].lower, bounds[j].upper) };
    }
    let intercept = stats.y_mean - kept.iter().map(|&j| coefficients[j] * stats.x_mean[j]).sum::<f64>();
    let residuals = (0..n)
        .map(|i| y[i] - intercept - kept.iter().map(|&j| coefficients[j] * x[(i, j)]).sum::<f64>())
        .collect();
    let bic_path = path.iter().map(|pt| PathSummary { lambda: pt.lambda, bic: bic(pt.rss, pt.df, n), df: pt.df }).collect();
    Ok(FitResult {
        intercept,
        coefficients,
        coefficients_scaled,
        lambda_selected: chosen.lambda,
        bic_path,
        residuals,
        df: chosen.df - 1,
        converged: chosen.converged,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    fn standardized_column(n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64 / n as f64).collect();
        let (m, s) = mean_std(&raw);
        raw.iter().map(|v| (v - m) / s).collect()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
    }

    #[test]
    fn exact_fit_without_penalty() {
        let x = standardized_column(50);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let out = fit_constrained(&column(&x), &y, &[Interval::FREE], 0.0, &SolverConfig::default()).unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.beta[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn upper_bound_binds_and_matches_grid_search() {
        let x = standardized_column(50);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let bounds = [Interval::new(f64::NEG_INFINITY, 1.5)];
        let out = fit_constrained(&column(&x), &y, &bounds, 0.0, &SolverConfig::default()).unwrap();
        assert_eq!(out.beta[0], 1.5);
        // brute-force 1-D minimization over a fine grid of feasible values
        let xm = column(&x);
        let best = (0..=40_000)
            .map(|k| -2.5 + k as f64 * 1e-4)
            .filter(|b| *b <= 1.5)
            .min_by(|a, b| objective(&xm, &y, &[*a], 0.0, 0.5).total_cmp(&objective(&xm, &y, &[*b], 0.0, 0.5)))
            .unwrap();
        assert_abs_diff_eq!(out.beta[0], best, epsilon = 1e-4);
    }

    #[test]
    fn lasso_closed_form() {
        // unit second moment: x = ±1
        let x: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let config = SolverConfig { alpha: 1.0, ..SolverConfig::default() };
        let out = fit_constrained(&column(&x), &y, &[Interval::FREE], 0.5, &config).unwrap();
        assert_abs_diff_eq!(out.beta[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn lambda_grid_examples() {
        // |xᵀy|/n = 2 with α = 0.5 gives λ_max = 4
        let x: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let grid = lambda_grid(&column(&x), &y, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(grid[0], 4.0, epsilon = 1e-12);
        assert_eq!(grid.len(), 100);

        let config = SolverConfig { grid_size: 5, ..SolverConfig::default() };
        let grid = lambda_grid(&column(&x), &y, &config).unwrap();
        for (k, g) in grid.iter().enumerate() {
            assert_abs_diff_eq!(*g, 4.0 * 10f64.powi(-(k as i32)), epsilon = 1e-12);
        }

        let orth: Vec<f64> = vec![1.0, 1.0, -1.0, -1.0];
        let xo = column(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(lambda_grid(&xo, &orth, &SolverConfig::default()).unwrap(), vec![0.0]);

        let ridge = SolverConfig { alpha: 0.0, ..SolverConfig::default() };
        let grid = lambda_grid(&column(&x), &y, &ridge).unwrap();
        assert_abs_diff_eq!(grid[0], 2.0 / 1e-3, epsilon = 1e-9);
    }

    #[test]
    fn bounds_scaling() {
        let stats = |sx: f64, sy: f64| NormalizationStats { x_mean: vec![0.0], x_std: vec![sx], y_mean: 0.0, y_std: sy, dropped: vec![] };
        let b = [Interval::new(0.0, 4.0)];
        assert_eq!(bounds_to_standardized(&b, &stats(3.0, 3.0)).unwrap()[0], Interval::new(0.0, 4.0));
        assert_eq!(bounds_to_standardized(&b, &stats(2.0, 4.0)).unwrap()[0], Interval::new(0.0, 2.0));
        let inf = [Interval::new(f64::NEG_INFINITY, f64::INFINITY)];
        assert!(bounds_to_standardized(&inf, &stats(2.0, 4.0)).unwrap()[0].is_free());
        assert_eq!(bounds_to_standardized(&b, &stats(2.0, 0.0)), Err(SolverError::DegenerateResponse));
    }

    fn point(lambda: f64, rss: f64, df: usize) -> PathPoint {
        PathPoint { lambda, beta: vec![], rss, df, converged: true }
    }

    #[test]
    fn bic_selection_rules() {
        let n = 100;
        let path = vec![point(1.0, 50.0, 1), point(0.5, 0.0, 2), point(0.1, 0.0, 3)];
        assert_eq!(bic_select(&path, n), Some(1));
        // equal BIC: the larger λ wins regardless of order
        let path = vec![point(1.0, 50.0, 2), point(0.5, 50.0, 2)];
        assert_eq!(bic_select(&path, n), Some(0));
        let path = vec![point(0.5, 50.0, 2), point(1.0, 50.0, 2)];
        assert_eq!(bic_select(&path, n), Some(1));
    }

    #[test]
    fn pure_noise_selects_intercept_only() {
        // Oracle: evaluate BIC of the null model against every fitted path point.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let fit = fit_path(&x, &y, &[Interval::FREE; 3], &SolverConfig::default()).unwrap();
        assert_eq!(fit.df, 0);
        assert!(fit.coefficients.iter().all(|c| *c == 0.0));
        let null_bic = fit.bic_path[0].bic;
        assert!(fit.bic_path.iter().all(|p| p.bic >= null_bic));
    }

    #[test]
    fn zero_variance_columns_are_dropped() {
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 5.0 } else { i as f64 });
        let y: Vec<f64> = (0..n).map(|i| 3.0 * i as f64 + 1.0).collect();
        let fit = fit_path(&x, &y, &[Interval::FREE; 2], &SolverConfig::default()).unwrap();
        assert_eq!(fit.stats.dropped, vec![0]);
        assert_eq!(fit.coefficients[0], 0.0);
        assert_abs_diff_eq!(fit.coefficients[1], 3.0, epsilon = 1e-3);
    }

    #[test]
    fn constant_response_gives_mean_only_fit() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let fit = fit_path(&x, &[4.0; 10], &[Interval::FREE; 2], &SolverConfig::default()).unwrap();
        assert_eq!(fit.intercept, 4.0);
        assert_eq!(fit.coefficients, vec![0.0, 0.0]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = SolverConfig { alpha: 1.5, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { grid_ratio: 1.0, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn prediction_identity_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 150;
        let x = DMatrix::from_fn(n, 4, |_, j| rng.random::<f64>() * (j as f64 + 1.0) * 10.0 + 3.0);
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 0)] - 1.0 * x[(i, 1)] + 0.3 * x[(i, 2)] + rng.random::<f64>()).collect();
        let bounds = [Interval::new(0.0, 1.0), Interval::new(-0.5, 0.0), Interval::FREE, Interval::new(0.0, f64::INFINITY)];
        let fit = fit_path(&x, &y, &bounds, &SolverConfig::default()).unwrap();
        for (c, b) in fit.coefficients.iter().zip(&bounds) {
            assert!(b.contains(*c, 1e-9));
        }
        assert_eq!(fit.coefficients[0], 1.0);
        for i in 0..n {
            let row: Vec<f64> = (0..4).map(|j| x[(i, j)]).collect();
            assert_abs_diff_eq!(fit.predict(&row), fit.predict_standardized(&row), epsilon = 1e-10);
            assert_abs_diff_eq!(y[i] - fit.predict(&row), fit.residuals[i], epsilon = 1e-9);
        }
    }
}
