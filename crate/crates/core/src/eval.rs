//! Goodness-of-fit residuals, prediction intervals and density curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::normal;
use crate::roots::bisect;
use crate::transform::{log_density, log_density_at, quantile, tau_inverse};
use crate::{Error, InverseSolverConfig, Result, TghParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub z_hat: Vec<f64>,
    /// `Phi(z_hat)`
    pub u: Vec<f64>,
    /// `(Phi^-1(k / (n + 1)), k-th smallest z_hat)`
    pub qq_pairs: Vec<(f64, f64)>,
    /// Two-sided KS distance between `u` and the uniform law.
    pub ks_statistic: f64,
    /// Mean negative log density, including the normal constant.
    pub mean_nll: f64,
}

pub fn residuals(
    y: &[f64],
    params: &[TghParams],
    cfg: &InverseSolverConfig,
) -> Result<ResidualReport> {
    if y.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "targets vs parameter rows",
            expected: y.len(),
            got: params.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let per_row: Vec<(f64, f64)> = y
        .par_iter()
        .zip(params)
        .enumerate()
        .map(|(i, (&y, p))| {
            let z = tau_inverse(p.standardize(y), p.shape(), cfg).map_err(|e| e.at_sample(i))?;
            Ok((z, -log_density_at(z, p)))
        })
        .collect::<Result<_>>()?;
    let n = y.len();
    let z_hat: Vec<f64> = per_row.iter().map(|r| r.0).collect();
    let mean_nll = per_row.iter().map(|r| r.1).sum::<f64>() / n as f64;
    let u: Vec<f64> = z_hat.iter().map(|&z| normal::cdf(z)).collect();

    let mut sorted = z_hat.clone();
    sorted.sort_by(f64::total_cmp);
    let qq_pairs = sorted
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let p = (k + 1) as f64 / (n + 1) as f64;
            Ok((normal::quantile(p)?, z))
        })
        .collect::<Result<_>>()?;

    Ok(ResidualReport {
        ks_statistic: ks_uniform(&u),
        z_hat,
        u,
        qq_pairs,
        mean_nll,
    })
}

/// `sup |F_n(u) - u|` for a sample on `[0, 1]`.
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

/// Limiting distribution of `sqrt(n) D_n`.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 0.2 {
        // the alternating series converges slowly here; the value is below 1e-20
        return 0.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let t = (-2.0 * k * k * x * x).exp();
        s += if k as u64 % 2 == 1 { t } else { -t };
        if t < 1e-18 {
            break;
        }
    }
    1.0 - 2.0 * s
}

/// Asymptotic level-`alpha` critical value of `D_n`; approximate for `n < 100`.
pub fn ks_critical_value(alpha: f64, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain {
            what: "alpha",
            value: alpha,
        });
    }
    let c = bisect(0.2, 5.0, 1e-12, 200, |x| {
        kolmogorov_cdf(x).total_cmp(&(1.0 - alpha))
    });
    Ok(c / (n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalVariant {
    Symmetric,
    Shortest,
}

impl std::str::FromStr for IntervalVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(IntervalVariant::Symmetric),
            "shortest" => Ok(IntervalVariant::Shortest),
            other => Err(Error::InvalidParameter(format!(
                "unknown interval variant `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    /// Upper-tail mass left outside the interval; stored as 0 for the symmetric variant.
    pub gamma: f64,
    pub variant: IntervalVariant,
}

impl PredictionInterval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain {
            what: "alpha",
            value: alpha,
        });
    }
    Ok(())
}

/// `[q(alpha/2), q(1 - alpha/2)]`.
pub fn symmetric_interval(params: &TghParams, alpha: f64) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    params.validate()?;
    Ok(PredictionInterval {
        lower: quantile(0.5 * alpha, params)?,
        upper: quantile(1.0 - 0.5 * alpha, params)?,
        alpha,
        gamma: 0.0,
        variant: IntervalVariant::Symmetric,
    })
}

/// Tolerance of the golden-section refinement, in units of `gamma`.
pub const GAMMA_TOLERANCE: f64 = 1e-6;

/// `[q(alpha - gamma), q(1 - gamma)]` with `gamma` chosen to minimize the length.
/// Never longer than [`symmetric_interval`].
pub fn shortest_interval(
    params: &TghParams,
    alpha: f64,
    grid_size: usize,
) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    params.validate()?;
    if grid_size < 3 {
        return Err(Error::InvalidParameter(format!(
            "grid_size = {grid_size} must be at least 3"
        )));
    }
    let length = |gamma: f64| -> Result<f64> {
        Ok(quantile(1.0 - gamma, params)? - quantile(alpha - gamma, params)?)
    };
    let eps = alpha * 1e-6;
    let step = (alpha - 2.0 * eps) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|k| eps + k as f64 * step).collect();
    let mut best = 0;
    let mut best_len = f64::INFINITY;
    for (k, &g) in grid.iter().enumerate() {
        // far tails can overflow; those gammas are never the shortest
        let l = length(g).unwrap_or(f64::INFINITY);
        if l < best_len {
            best_len = l;
            best = k;
        }
    }
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(grid_size - 1)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let mut fa = length(a).unwrap_or(f64::INFINITY);
    let mut fb = length(b).unwrap_or(f64::INFINITY);
    while hi - lo > GAMMA_TOLERANCE {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = length(a).unwrap_or(f64::INFINITY);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = length(b).unwrap_or(f64::INFINITY);
        }
    }
    let mut gamma = grid[best];
    let mut len = best_len;
    for (g, l) in [(a, fa), (b, fb)] {
        if l < len {
            gamma = g;
            len = l;
        }
    }
    let sym = symmetric_interval(params, alpha)?;
    if sym.length() <= len {
        return Ok(PredictionInterval {
            gamma: 0.5 * alpha,
            variant: IntervalVariant::Shortest,
            ..sym
        });
    }
    Ok(PredictionInterval {
        lower: quantile(alpha - gamma, params)?,
        upper: quantile(1.0 - gamma, params)?,
        alpha,
        gamma,
        variant: IntervalVariant::Shortest,
    })
}

pub const DEFAULT_GAMMA_GRID: usize = 101;

pub fn interval(
    params: &TghParams,
    alpha: f64,
    variant: IntervalVariant,
) -> Result<PredictionInterval> {
    match variant {
        IntervalVariant::Symmetric => symmetric_interval(params, alpha),
        IntervalVariant::Shortest => shortest_interval(params, alpha, DEFAULT_GAMMA_GRID),
    }
}

/// Intervals for every row, in parallel and in order.
pub fn intervals(
    params: &[TghParams],
    alpha: f64,
    variant: IntervalVariant,
) -> Result<Vec<PredictionInterval>> {
    params
        .par_iter()
        .enumerate()
        .map(|(i, p)| interval(p, alpha, variant).map_err(|e| e.at_sample(i)))
        .collect()
}

/// Fraction of targets inside their interval.
pub fn coverage(intervals: &[PredictionInterval], y: &[f64]) -> Result<f64> {
    if intervals.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "intervals vs targets",
            expected: y.len(),
            got: intervals.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let hit = intervals.iter().zip(y).filter(|(iv, &y)| iv.contains(y)).count();
    Ok(hit as f64 / y.len() as f64)
}

/// Density at each point of a sorted grid.
pub fn density_curve(
    params: &TghParams,
    y_grid: &[f64],
    cfg: &InverseSolverConfig,
) -> Result<Vec<f64>> {
    if y_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter("density grid must be sorted".into()));
    }
    y_grid
        .iter()
        .map(|&y| log_density(y, params, cfg).map(f64::exp))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub alpha: f64,
    pub symmetric: f64,
    pub shortest: f64,
}

pub fn coverage_table(params: &[TghParams], y: &[f64], alphas: &[f64]) -> Result<Vec<CoverageRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            Ok(CoverageRow {
                alpha,
                symmetric: coverage(&intervals(params, alpha, IntervalVariant::Symmetric)?, y)?,
                shortest: coverage(&intervals(params, alpha, IntervalVariant::Shortest)?, y)?,
            })
        })
        .collect()
}

/// Residual moments within equal-width bins of one feature; a diagnostic for misfit
/// that averages out globally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_z: f64,
    pub var_z: f64,
}

pub fn residual_bins(feature: &[f64], z_hat: &[f64], n_bins: usize) -> Result<Vec<BinSummary>> {
    if feature.len() != z_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "feature vs residuals",
            expected: z_hat.len(),
            got: feature.len(),
        });
    }
    if n_bins == 0 || feature.is_empty() {
        return Ok(Vec::new());
    }
    let lo = feature.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = feature.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut acc = vec![(0usize, 0.0, 0.0); n_bins];
    for (&f, &z) in feature.iter().zip(z_hat) {
        let k = if width > 0.0 {
            (((f - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        acc[k].0 += 1;
        acc[k].1 += z;
        acc[k].2 += z * z;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(k, (c, s, s2))| {
            let mean = if c > 0 { s / c as f64 } else { f64::NAN };
            BinSummary {
                lower: lo + k as f64 * width,
                upper: lo + (k + 1) as f64 * width,
                count: c,
                mean_z: mean,
                var_z: if c > 1 {
                    (s2 - c as f64 * mean * mean) / (c - 1) as f64
                } else {
                    f64::NAN
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub mean_nll: f64,
    pub ks_statistic: f64,
    pub ks_critical_1pct: f64,
    pub coverage: Vec<CoverageRow>,
    pub bins: Vec<(String, Vec<BinSummary>)>,
}

/// One row per sample: `y, mu, sigma, g, h, z_hat, u`.
pub fn write_residual_csv<W: std::io::Write>(
    w: W,
    y: &[f64],
    params: &[TghParams],
    report: &ResidualReport,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["y", "mu", "sigma", "g", "h", "z_hat", "u"])?;
    for i in 0..y.len() {
        let p = params[i];
        out.write_record(
            [y[i], p.mu, p.sigma, p.g, p.h, report.z_hat[i], report.u[i]].map(|v| v.to_string()),
        )?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_qq_csv<W: std::io::Write>(w: W, report: &ResidualReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["theoretical", "empirical"])?;
    for (t, e) in &report.qq_pairs {
        out.write_record([t.to_string(), e.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}
