//! Domain types shared by the engine, the estimators and the front end.
//!
//! Days are 1-based throughout: `t = 1` is the first day. A convergence time
//! `tau` counts the days strictly before the first converged day, so a run
//! that is already in its steady state on day 1 has `tau = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KprError, Result};

/// Restaurant-choice rule followed by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform choice among all restaurants every day.
    Random,
    /// Return to yesterday's restaurant with probability `1 / n^alpha`.
    CrowdAvoiding,
    /// The agent served yesterday returns for sure; the others follow
    /// crowd avoiding with `alpha = 1`.
    GreedyCrowdAvoiding,
}

impl Strategy {
    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::CrowdAvoiding => "ca",
            Strategy::GreedyCrowdAvoiding => "gca",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Strategy {
    type Err = KprError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(Strategy::Random),
            "ca" | "crowd_avoiding" | "crowd-avoiding" => Ok(Strategy::CrowdAvoiding),
            "gca" | "greedy_crowd_avoiding" | "greedy-crowd-avoiding" => {
                Ok(Strategy::GreedyCrowdAvoiding)
            }
            other => Err(KprError::InvalidConfig(format!(
                "unknown strategy '{other}' (expected random, ca or gca)"
            ))),
        }
    }
}

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_TAIL_WINDOW_FRACTION: f64 = 0.5;
pub const DEFAULT_STABILITY_DAYS: u32 = 10;
/// Smallest half-width of the convergence band, relative to `f_s`.
pub const DEFAULT_BAND_FLOOR: f64 = 0.02;
/// Horizon for the random strategy and the floor for crowd avoiding.
pub const DEFAULT_MAX_DAYS: u32 = 1000;
/// Crowd-avoiding runs get at least `CA_HORIZON_PER_ALPHA / alpha` days;
/// convergence slows down as `1 / alpha`.
pub const CA_HORIZON_PER_ALPHA: f64 = 200.0;
/// Greedy runs get `GCA_HORIZON_FACTOR * n` days, enough for `tau ~ e n`
/// plus its long upper tail.
pub const GCA_HORIZON_FACTOR: u32 = 10;

/// Full description of one experiment. There are as many restaurants as
/// agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: u32,
    pub strategy: Strategy,
    pub alpha: f64,
    pub max_days: u32,
    pub seed: u64,
    pub tail_window_fraction: f64,
    pub stability_days: u32,
    /// The convergence band is `f_s ± max(2 sigma, band_floor * f_s)`.
    pub band_floor: f64,
    /// Keep every agent's per-day success flag (needed for world lines).
    pub record_history: bool,
}

impl SimulationConfig {
    pub fn new(strategy: Strategy, n: u32) -> Self {
        SimulationConfig {
            n,
            strategy,
            alpha: DEFAULT_ALPHA,
            max_days: default_max_days(strategy, n, DEFAULT_ALPHA),
            seed: 0,
            tail_window_fraction: DEFAULT_TAIL_WINDOW_FRACTION,
            stability_days: DEFAULT_STABILITY_DAYS,
            band_floor: DEFAULT_BAND_FLOOR,
            record_history: false,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_days(mut self, max_days: u32) -> Self {
        self.max_days = max_days;
        self
    }

    pub fn with_history(mut self, record: bool) -> Self {
        self.record_history = record;
        self
    }

    /// Number of trailing days the saturation estimate averages over.
    pub fn tail_window_len(&self) -> usize {
        (self.tail_window_fraction * self.max_days as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KprError::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.max_days == 0 {
            return bad("max_days must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be a positive real, got {}", self.alpha));
        }
        if !(self.tail_window_fraction > 0.0 && self.tail_window_fraction < 1.0) {
            return bad(format!(
                "tail_window_fraction must lie in (0, 1), got {}",
                self.tail_window_fraction
            ));
        }
        if !(self.band_floor >= 0.0 && self.band_floor < 1.0) {
            return bad(format!("band_floor must lie in [0, 1), got {}", self.band_floor));
        }
        if self.stability_days == 0 {
            return bad("stability_days must be at least 1".into());
        }
        if self.strategy == Strategy::CrowdAvoiding && self.tail_window_len() < 2 {
            return Err(KprError::DegenerateWindow {
                samples: self.tail_window_len(),
            });
        }
        Ok(())
    }
}

/// Horizon used when none is given: `10 n` for greedy, `max(1000, 200 /
/// alpha)` for crowd avoiding and 1000 for random.
pub fn default_max_days(strategy: Strategy, n: u32, alpha: f64) -> u32 {
    match strategy {
        Strategy::GreedyCrowdAvoiding => n.saturating_mul(GCA_HORIZON_FACTOR),
        Strategy::CrowdAvoiding if alpha > 0.0 => {
            let scaled = (CA_HORIZON_PER_ALPHA / alpha).ceil().min(u32::MAX as f64) as u32;
            scaled.max(DEFAULT_MAX_DAYS)
        }
        _ => DEFAULT_MAX_DAYS,
    }
}

/// What one agent remembers from yesterday.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AgentState {
    pub last_restaurant: u32,
    /// Crowd at `last_restaurant` yesterday, the agent included.
    pub last_crowd: u32,
    pub was_served: bool,
    pub success_count: u32,
}

/// Outcome of a single day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day: u32,
    pub served_count: u32,
    /// `crowd_histogram[n]` is the number of restaurants with exactly `n`
    /// arrivals, including `n = 0`.
    pub crowd_histogram: Vec<u32>,
    pub utilization: f64,
}

impl DayRecord {
    /// Σ n · histogram[n], which must equal the number of agents.
    pub fn agents_accounted(&self) -> u64 {
        self.crowd_histogram
            .iter()
            .enumerate()
            .map(|(n, &c)| n as u64 * c as u64)
            .sum()
    }

    pub fn occupied_restaurants(&self) -> u64 {
        self.crowd_histogram.iter().skip(1).map(|&c| c as u64).sum()
    }

    pub fn restaurants(&self) -> u64 {
        self.crowd_histogram.iter().map(|&c| c as u64).sum()
    }
}

/// Per-agent, per-day success flags packed one bit per agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuccessHistory {
    agents: usize,
    words_per_day: usize,
    bits: Vec<u64>,
}

impl SuccessHistory {
    pub fn new(agents: usize) -> Self {
        SuccessHistory {
            agents,
            words_per_day: agents.div_ceil(64),
            bits: Vec::new(),
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn days(&self) -> usize {
        self.bits.len().checked_div(self.words_per_day).unwrap_or(0)
    }

    pub fn push_day<I: IntoIterator<Item = bool>>(&mut self, served: I) {
        let start = self.bits.len();
        self.bits.resize(start + self.words_per_day, 0);
        let row = &mut self.bits[start..];
        let mut count = 0;
        for (i, s) in served.into_iter().enumerate() {
            if s {
                row[i / 64] |= 1 << (i % 64);
            }
            count += 1;
        }
        debug_assert_eq!(count, self.agents);
    }

    /// Whether `agent` was served on 1-based `day`.
    pub fn served(&self, agent: usize, day: usize) -> bool {
        assert!(agent < self.agents && day >= 1 && day <= self.days());
        let word = self.bits[(day - 1) * self.words_per_day + agent / 64];
        word >> (agent % 64) & 1 == 1
    }

    /// One agent's flags for days `1..=days`.
    pub fn agent_flags(&self, agent: usize, days: usize) -> Vec<bool> {
        (1..=days).map(|d| self.served(agent, d)).collect()
    }

    /// Every agent's success count accumulated over days `1..=day`.
    pub fn counts_through(&self, day: usize) -> Vec<u32> {
        let mut counts = vec![0u32; self.agents];
        for d in 1..=day.min(self.days()) {
            let row = &self.bits[(d - 1) * self.words_per_day..d * self.words_per_day];
            for (i, c) in counts.iter_mut().enumerate() {
                *c += (row[i / 64] >> (i % 64) & 1) as u32;
            }
        }
        counts
    }
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: SimulationConfig,
    /// Utilization `f(t)`; index 0 is day 1.
    pub f_series: Vec<f64>,
    pub served_series: Vec<u32>,
    pub tau: u32,
    pub f_s: f64,
    /// Cumulative success percentage of each agent at day `max(tau, 1)`.
    pub final_rates: Vec<f64>,
    pub converged: bool,
    pub history: Option<SuccessHistory>,
}

impl RunResult {
    pub fn days_run(&self) -> u32 {
        self.f_series.len() as u32
    }

    /// Day on which world lines and final rates are evaluated.
    pub fn evaluation_day(&self) -> u32 {
        self.tau.max(1).min(self.days_run())
    }

    pub fn min_final_rate(&self) -> f64 {
        self.final_rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_final_rate(&self) -> f64 {
        self.final_rates
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn summary(&self, run_index: u32) -> RunSummary {
        RunSummary {
            run_index,
            seed: self.config.seed,
            days_run: self.days_run(),
            tau: self.tau,
            f_s: self.f_s,
            converged: self.converged,
            min_final_rate: self.min_final_rate(),
            max_final_rate: self.max_final_rate(),
        }
    }
}

/// Compact per-run record kept inside ensemble summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_index: u32,
    pub seed: u64,
    pub days_run: u32,
    pub tau: u32,
    pub f_s: f64,
    pub converged: bool,
    pub min_final_rate: f64,
    pub max_final_rate: f64,
}

/// Aggregate over independent runs of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub config: SimulationConfig,
    pub base_seed: u64,
    pub runs: u32,
    pub tau_mean: f64,
    pub tau_std: f64,
    pub fs_mean: f64,
    pub fs_std: f64,
    /// Mean over runs of the lowest final cumulative success rate.
    pub dispersion_min_rate_mean: f64,
    pub dispersion_min_rate_std: f64,
    pub converged_fraction: f64,
    pub per_run: Vec<RunSummary>,
}
