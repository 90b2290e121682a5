//! Multi-run metrics: tail probabilities, MSE, consensus gap, transient times.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, TrajectoryRecord};
use crate::error::{Error, Result};

/// `(1/n) sum_i ||x_i - x_bar||^2` over the rows of `x`.
pub fn consensus_gap(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..x.ncols() {
        let col = x.column(k);
        let mean = col.sum() / n as f64;
        total += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    total / n as f64
}

/// `R` runs of one algorithm under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub algorithm: Algorithm,
    pub n: usize,
    pub config_hash: String,
    pub records: Vec<TrajectoryRecord>,
}

impl RunSet {
    pub fn new(
        algorithm: Algorithm,
        n: usize,
        config_hash: impl Into<String>,
        records: Vec<TrajectoryRecord>,
    ) -> Result<Self> {
        if let Some(first) = records.first() {
            let t = first.len();
            let has_mse = first.mse_to_opt.is_some();
            for r in &records {
                if r.len() != t || r.mse_to_opt.is_some() != has_mse || r.algorithm != algorithm {
                    return Err(Error::InvariantViolation(
                        "runs in a set must share algorithm, horizon and recorded metrics".into(),
                    ));
                }
            }
        }
        Ok(Self {
            algorithm,
            n,
            config_hash: config_hash.into(),
            records,
        })
    }

    pub fn runs(&self) -> usize {
        self.records.len()
    }

    pub fn horizon(&self) -> usize {
        self.records.first().map_or(0, |r| r.len())
    }

    /// Smallest nonzero tail probability resolvable with `R` runs.
    pub fn resolution(&self) -> f64 {
        1.0 / self.runs().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `(1/n) sum_i ||x_i^t - x*||^2`.
    MseToOpt,
    /// `(1/(n t)) sum_{tau <= t} sum_i ||grad f(x_i^tau)||^2`.
    RunningStationarity,
}

impl Statistic {
    pub fn tag(&self) -> &'static str {
        match self {
            Statistic::MseToOpt => "mse",
            Statistic::RunningStationarity => "stationarity",
        }
    }
}

/// A named series indexed by `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `1/R` for tail probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            epsilon: None,
            resolution: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at iteration `t` (one-based).
    pub fn at(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    pub fn is_tail_probability(&self) -> bool {
        self.epsilon.is_some()
    }

    /// First `t` with value strictly below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.values.iter().position(|&v| v < threshold).map(|k| k + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{:e}", k + 1, v);
        }
        out
    }
}

fn statistic_series(rs: &RunSet, stat: Statistic) -> Result<Vec<Vec<f64>>> {
    rs.records
        .iter()
        .map(|r| match stat {
            Statistic::MseToOpt => r.mse_to_opt.clone().ok_or(Error::OptimumUnknown),
            Statistic::RunningStationarity => {
                let n = rs.n.max(1) as f64;
                let mut acc = 0.0;
                Ok(r.stationarity_sum
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        acc += s;
                        acc / (n * (k + 1) as f64)
                    })
                    .collect())
            }
        })
        .collect()
}

/// `P^t = (1/R) sum_r 1[stat_r^t > epsilon]`.
pub fn empirical_tail_probability(rs: &RunSet, stat: Statistic, epsilon: f64) -> Result<MetricSeries> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive, got {epsilon}"
        )));
    }
    let per_run = statistic_series(rs, stat)?;
    Ok(MetricSeries {
        name: format!("tail_{}_{}_eps{}", rs.algorithm, stat.tag(), epsilon),
        values: tail_fraction(&per_run, rs.horizon(), epsilon),
        epsilon: Some(epsilon),
        resolution: Some(rs.resolution()),
    })
}

pub(crate) fn tail_fraction(per_run: &[Vec<f64>], horizon: usize, epsilon: f64) -> Vec<f64> {
    let r = per_run.len();
    (0..horizon)
        .map(|k| {
            if r == 0 {
                return 0.0;
            }
            per_run.iter().filter(|s| s[k] > epsilon).count() as f64 / r as f64
        })
        .collect()
}

/// `E^t = (1/(nR)) sum_i sum_r ||x_i^{t,r} - x*||^2`.
pub fn empirical_mse(rs: &RunSet) -> Result<MetricSeries> {
    let per_run = statistic_series(rs, Statistic::MseToOpt)?;
    let r = per_run.len().max(1) as f64;
    let values = (0..rs.horizon())
        .map(|k| per_run.iter().map(|s| s[k]).sum::<f64>() / r)
        .collect();
    Ok(MetricSeries::new(format!("mse_{}", rs.algorithm), values))
}

/// Per-iteration mean of an arbitrary recorded column across runs.
pub fn run_average(rs: &RunSet, name: &str, column: impl Fn(&TrajectoryRecord) -> &[f64]) -> MetricSeries {
    let r = rs.runs().max(1) as f64;
    let values = (0..rs.horizon())
        .map(|k| rs.records.iter().map(|rec| column(rec)[k]).sum::<f64>() / r)
        .collect();
    MetricSeries::new(format!("{name}_{}", rs.algorithm), values)
}

/// `max{ n^3 / (1-lambda^2)^8, rho^(2/eps) n^((4+eps)/eps) }`.
pub fn transient_time_nonconvex(n: f64, lambda: f64, rho: f64, eps_exponent: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} outside [0,1)")));
    }
    let network = n.powi(3) / (1.0 - lambda * lambda).powi(8);
    let relaxed = if rho == 0.0 {
        0.0
    } else {
        if !(eps_exponent > 0.0) {
            return Err(Error::InvalidArgument("eps_exponent must be positive".into()));
        }
        rho.powf(2.0 / eps_exponent) * n.powf((4.0 + eps_exponent) / eps_exponent)
    };
    Ok(network.max(relaxed))
}

/// `n^((a+2)/(a-2)) / (1-lambda^2)^(4a/(a-2))`, for `a > 2`.
pub fn transient_time_pl(n: f64, lambda: f64, a: f64) -> Result<f64> {
    if !(a > 2.0) {
        return Err(Error::InvalidArgument(format!("a = {a} must exceed 2")));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} outside [0,1)")));
    }
    Ok(n.powf((a + 2.0) / (a - 2.0)) / (1.0 - lambda * lambda).powf(4.0 * a / (a - 2.0)))
}

/// Least-squares fit of `log P^t = intercept + slope t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Inclusive window actually fitted.
    pub t_lo: usize,
    pub t_hi: usize,
    /// Set when the requested window was cut at the first zero.
    pub trimmed_at: Option<usize>,
}

pub const MIN_FIT_POINTS: usize = 5;

/// Fits `log P^t` on `[t_lo, t_hi]` (one-based, inclusive). If the series
/// hits zero inside the window, the fit stops just before it.
pub fn tail_decay_fit(series: &MetricSeries, window: (usize, usize)) -> Result<TailFit> {
    let (t_lo, requested_hi) = window;
    if t_lo == 0 || requested_hi < t_lo || requested_hi > series.len() {
        return Err(Error::InvalidArgument(format!(
            "window [{t_lo}, {requested_hi}] outside 1..={}",
            series.len()
        )));
    }
    let mut t_hi = requested_hi;
    let mut trimmed_at = None;
    if let Some(zero) = (t_lo..=requested_hi).find(|&t| !(series.at(t) > 0.0)) {
        trimmed_at = Some(zero);
        t_hi = zero.saturating_sub(1);
    }
    let points = if t_hi >= t_lo { t_hi - t_lo + 1 } else { 0 };
    if points < MIN_FIT_POINTS {
        return Err(Error::InsufficientTailData(points));
    }
    let ts: Vec<f64> = (t_lo..=t_hi).map(|t| t as f64).collect();
    let ys: Vec<f64> = (t_lo..=t_hi).map(|t| series.at(t).ln()).collect();
    let m = points as f64;
    let t_mean = ts.iter().sum::<f64>() / m;
    let y_mean = ys.iter().sum::<f64>() / m;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    let syy: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(TailFit {
        slope,
        intercept,
        r_squared,
        t_lo,
        t_hi,
        trimmed_at,
    })
}

/// From the first `t` with `P^t < 0.9` to just before the first `t` with
/// `P^t <= 1/R` (or the end of the series).
pub fn default_tail_window(series: &MetricSeries, runs: usize) -> Result<(usize, usize)> {
    let floor = 1.0 / runs.max(1) as f64;
    let start = series.first_below(0.9).ok_or(Error::InsufficientTailData(0))?;
    let end = (start..=series.len())
        .find(|&t| series.at(t) <= floor)
        .map_or(series.len(), |t| t.saturating_sub(1));
    if end < start {
        return Err(Error::InsufficientTailData(0));
    }
    Ok((start, end))
}
