//! Estimators and closed-form references used to read out experiments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KprError, Result};
use crate::model::RunResult;

/// Sample mean and standard deviation (`n - 1` denominator; 0 for a single
/// value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Expected fraction of occupied restaurants when `n` agents pick among `n`
/// restaurants uniformly: `1 - (1 - 1/n)^n`.
pub fn exact_random_utilization(n: u32) -> f64 {
    assert!(n >= 1);
    let n = n as f64;
    -(n * (-1.0 / n).ln_1p()).exp_m1()
}

/// Large-`n` probability that a restaurant receives exactly `k` agents,
/// `e^-1 / k!`.
pub fn poisson_limit_pmf(k: u32) -> f64 {
    let log_fact: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
    (-1.0 - log_fact).exp()
}

/// One agent's cumulative success percentage from day 1 onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldLine {
    pub agent_id: u32,
    /// `(day, percentage)` with days starting at 1.
    pub series: Vec<(u32, f64)>,
}

impl WorldLine {
    pub fn from_flags(agent_id: u32, flags: &[bool]) -> Self {
        let mut wins = 0u32;
        let series = flags
            .iter()
            .enumerate()
            .map(|(i, &won)| {
                wins += won as u32;
                let day = i as u32 + 1;
                (day, 100.0 * wins as f64 / day as f64)
            })
            .collect();
        WorldLine { agent_id, series }
    }

    pub fn last_day(&self) -> u32 {
        self.series.last().map_or(0, |&(d, _)| d)
    }

    pub fn final_pct(&self) -> f64 {
        self.series.last().map_or(f64::NAN, |&(_, p)| p)
    }
}

/// World lines of every agent up to day `max(tau, 1)`.
pub fn world_lines(run: &RunResult) -> Result<Vec<WorldLine>> {
    let history = run.history.as_ref().ok_or(KprError::HistoryDisabled)?;
    let days = run.evaluation_day() as usize;
    Ok((0..history.agents())
        .map(|a| WorldLine::from_flags(a as u32, &history.agent_flags(a, days)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub min_final: f64,
    pub max_final: f64,
    pub spread: f64,
}

pub fn dispersion_summary(lines: &[WorldLine]) -> Result<Dispersion> {
    let first = lines.first().ok_or(KprError::EmptyInput("world lines"))?;
    let end = first.last_day();
    let mut min_final = f64::INFINITY;
    let mut max_final = f64::NEG_INFINITY;
    for line in lines {
        if line.last_day() != end {
            return Err(KprError::MismatchedLines {
                first: end,
                other: line.last_day(),
            });
        }
        min_final = min_final.min(line.final_pct());
        max_final = max_final.max(line.final_pct());
    }
    Ok(Dispersion {
        min_final,
        max_final,
        spread: max_final - min_final,
    })
}

/// Pairwise world-line crossings binned by `t / last_day` into `bins`
/// equal-width bins. A crossing is counted on day `t` when the strict order
/// of a pair differs from its last strict order; ties carry no order.
/// Quadratic in the number of lines.
pub fn crossing_histogram(lines: &[WorldLine], bins: usize) -> Vec<u64> {
    let mut hist = vec![0u64; bins.max(1)];
    let Some(end) = lines.first().map(WorldLine::last_day) else {
        return hist;
    };
    if end == 0 {
        return hist;
    }
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            let mut order = 0i8;
            for ((day, pa), (_, pb)) in a.series.iter().zip(&b.series) {
                let now = if pa > pb {
                    1
                } else if pa < pb {
                    -1
                } else {
                    0
                };
                if now != 0 {
                    if order != 0 && now != order {
                        let bin = ((*day as f64 / end as f64) * hist.len() as f64) as usize;
                        let last = hist.len() - 1;
                        hist[bin.min(last)] += 1;
                    }
                    order = now;
                }
            }
        }
    }
    hist
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    N,
    Alpha,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::N => "n",
            SweepVariable::Alpha => "alpha",
        })
    }
}

impl FromStr for SweepVariable {
    type Err = KprError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "n" => Ok(SweepVariable::N),
            "alpha" => Ok(SweepVariable::Alpha),
            other => Err(KprError::InvalidConfig(format!(
                "unknown sweep variable '{other}' (expected n or alpha)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub fs_mean: f64,
    pub fs_std: f64,
    pub tau_mean: f64,
    pub tau_std: f64,
    pub runs: u32,
    pub converged_fraction: f64,
    pub dispersion_min_rate_mean: f64,
    /// Set when the row could not be run (e.g. an invalid parameter value).
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    fn ok_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Largest absolute residual.
    pub max_residual: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(KprError::DegenerateFit(format!(
            "need matching samples, got {} x and {} y",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        return Err(KprError::DegenerateFit("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).abs())
        .fold(0.0, f64::max);
    Ok(LinearFit {
        intercept,
        slope,
        max_residual,
    })
}

/// Least-squares slope of `y = slope * x`.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(KprError::DegenerateFit("need matching, non-empty samples".into()));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(KprError::DegenerateFit("all x values are zero".into()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx)
}

/// Fit `fs_mean` against `1/N`; the intercept is the infinite-size estimate.
pub fn estimate_fs_extrapolation(table: &SweepTable) -> Result<LinearFit> {
    if table.variable != SweepVariable::N {
        return Err(KprError::DegenerateFit("extrapolation needs an N sweep".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = table.ok_rows().map(|r| (1.0 / r.value, r.fs_mean)).unzip();
    if x.len() < 3 {
        return Err(KprError::DegenerateFit(format!(
            "need at least 3 rows, got {}",
            x.len()
        )));
    }
    linear_fit(&x, &y)
}

/// Per-row check of the small-alpha laws `f_s ~ 1 - alpha` and
/// `tau ~ 1 / alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaDiagnostic {
    pub alpha: f64,
    pub fs_mean: f64,
    /// `|f_s - (1 - alpha)|`
    pub fs_residual: f64,
    /// `tau * alpha`
    pub tau_alpha: f64,
}

pub fn fit_alpha_scaling(table: &SweepTable) -> Vec<AlphaDiagnostic> {
    table
        .ok_rows()
        .map(|r| AlphaDiagnostic {
            alpha: r.value,
            fs_mean: r.fs_mean,
            fs_residual: (r.fs_mean - (1.0 - r.value)).abs(),
            tau_alpha: r.tau_mean * r.value,
        })
        .collect()
}

/// Max over min of `tau * alpha` across the diagnostics.
pub fn tau_alpha_ratio(diags: &[AlphaDiagnostic]) -> f64 {
    let max = diags.iter().map(|d| d.tau_alpha).fold(f64::NEG_INFINITY, f64::max);
    let min = diags.iter().map(|d| d.tau_alpha).fold(f64::INFINITY, f64::min);
    max / min
}
