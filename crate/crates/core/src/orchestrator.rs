//! Ensembles of independent runs and parameter sweeps.
//!
//! Run `i` of an ensemble is seeded with [`derive_seed`]`(base_seed, i)`,
//! a stateless function of its inputs, and results are aggregated in run
//! order after all runs finish. The output therefore does not depend on the
//! number of worker threads or on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine;
use crate::error::{KprError, Result};
use crate::model::{default_max_days, EnsembleSummary, RunResult, RunSummary, SimulationConfig};
use crate::stats::{mean_std, SweepRow, SweepTable, SweepVariable};

pub const DEFAULT_RUNS: u32 = 30;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output for state `base_seed + (run_index + 1) * GOLDEN_GAMMA`.
///
/// The state map is injective in `run_index` (odd multiplier) and the
/// SplitMix64 finalizer is a bijection, so distinct runs never share a seed.
pub fn derive_seed(base_seed: u64, run_index: u64) -> u64 {
    let mut z = base_seed.wrapping_add(run_index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Executes ensembles and sweeps on a bounded worker pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct Orchestrator {
    /// Worker threads; `None` uses the machine's parallelism.
    pub threads: Option<usize>,
}

impl Orchestrator {
    pub fn new(threads: Option<usize>) -> Self {
        Orchestrator { threads }
    }

    fn install<T: Send>(&self, job: impl FnOnce() -> T + Send) -> Result<T> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.threads {
            builder = builder.num_threads(t.max(1));
        }
        let pool = builder
            .build()
            .map_err(|e| KprError::ThreadPool(e.to_string()))?;
        Ok(pool.install(job))
    }

    /// Run `runs` independent copies of `config` and keep every full result.
    pub fn run_many(&self, config: &SimulationConfig, runs: u32, base_seed: u64) -> Result<Vec<RunResult>> {
        if runs == 0 {
            return Err(KprError::InvalidConfig("runs must be at least 1".into()));
        }
        config.validate()?;
        self.install(|| {
            (0..runs)
                .into_par_iter()
                .map(|i| {
                    let cfg = config.clone().with_seed(derive_seed(base_seed, i as u64));
                    engine::run(&cfg)
                })
                .collect::<Result<Vec<_>>>()
        })?
    }

    pub fn run_ensemble(&self, config: &SimulationConfig, runs: u32, base_seed: u64) -> Result<EnsembleSummary> {
        let results = self.run_many(config, runs, base_seed)?;
        let per_run: Vec<RunSummary> = results
            .iter()
            .enumerate()
            .map(|(i, r)| r.summary(i as u32))
            .collect();
        Ok(summarize(config, base_seed, per_run))
    }

    pub fn run_sweep(&self, plan: &SweepPlan) -> Result<SweepTable> {
        plan.validate()?;
        let configs: Vec<Result<SimulationConfig>> = plan.values.iter().map(|&v| plan.config_for(v)).collect();

        // Flatten (row, run) pairs so small and large rows share the pool.
        let jobs: Vec<(usize, u32)> = configs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_ok())
            .flat_map(|(row, _)| (0..plan.runs_per_value).map(move |i| (row, i)))
            .collect();
        let finished: Vec<(usize, RunSummary)> = self.install(|| {
            jobs.par_iter()
                .map(|&(row, i)| {
                    let cfg = configs[row].as_ref().expect("filtered above");
                    // every row reuses the base seed, so a row matches the
                    // standalone ensemble of the same parameters
                    let seed = derive_seed(plan.base_seed, i as u64);
                    engine::run(&cfg.clone().with_seed(seed)).map(|r| (row, r.summary(i)))
                })
                .collect::<Result<Vec<_>>>()
        })??;

        let mut buckets: Vec<Vec<RunSummary>> = vec![Vec::new(); configs.len()];
        for (row, summary) in finished {
            buckets[row].push(summary);
        }
        let rows = configs
            .iter()
            .zip(buckets)
            .zip(&plan.values)
            .map(|((cfg, runs), &value)| match cfg {
                Ok(cfg) => row_from(value, &summarize(cfg, plan.base_seed, runs)),
                Err(e) => failed_row(value, e.to_string()),
            })
            .collect();
        Ok(SweepTable {
            variable: plan.variable,
            rows,
        })
    }
}

/// Aggregate per-run summaries, which must be in run order.
pub fn summarize(config: &SimulationConfig, base_seed: u64, per_run: Vec<RunSummary>) -> EnsembleSummary {
    let taus: Vec<f64> = per_run.iter().map(|r| r.tau as f64).collect();
    let fss: Vec<f64> = per_run.iter().map(|r| r.f_s).collect();
    let mins: Vec<f64> = per_run.iter().map(|r| r.min_final_rate).collect();
    let (tau_mean, tau_std) = mean_std(&taus);
    let (fs_mean, fs_std) = mean_std(&fss);
    let (dispersion_min_rate_mean, dispersion_min_rate_std) = mean_std(&mins);
    let converged = per_run.iter().filter(|r| r.converged).count();
    EnsembleSummary {
        config: config.clone(),
        base_seed,
        runs: per_run.len() as u32,
        tau_mean,
        tau_std,
        fs_mean,
        fs_std,
        dispersion_min_rate_mean,
        dispersion_min_rate_std,
        converged_fraction: converged as f64 / per_run.len().max(1) as f64,
        per_run,
    }
}

fn row_from(value: f64, s: &EnsembleSummary) -> SweepRow {
    SweepRow {
        value,
        fs_mean: s.fs_mean,
        fs_std: s.fs_std,
        tau_mean: s.tau_mean,
        tau_std: s.tau_std,
        runs: s.runs,
        converged_fraction: s.converged_fraction,
        dispersion_min_rate_mean: s.dispersion_min_rate_mean,
        error: None,
    }
}

fn failed_row(value: f64, error: String) -> SweepRow {
    SweepRow {
        value,
        fs_mean: f64::NAN,
        fs_std: f64::NAN,
        tau_mean: f64::NAN,
        tau_std: f64::NAN,
        runs: 0,
        converged_fraction: 0.0,
        dispersion_min_rate_mean: f64::NAN,
        error: Some(error),
    }
}

/// A sweep of one parameter with an ensemble per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub base: SimulationConfig,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub runs_per_value: u32,
    pub base_seed: u64,
    /// Horizon for every row. `None` picks the strategy default for each
    /// row's parameters, so greedy rows get `10 n` days.
    pub max_days: Option<u32>,
}

impl SweepPlan {
    pub fn new(base: SimulationConfig, variable: SweepVariable, values: Vec<f64>) -> Self {
        SweepPlan {
            base,
            variable,
            values,
            runs_per_value: DEFAULT_RUNS,
            base_seed: 0,
            max_days: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(KprError::InvalidConfig("sweep needs at least one value".into()));
        }
        if !self.values.windows(2).all(|w| w[0] < w[1]) {
            return Err(KprError::InvalidConfig(
                "sweep values must be strictly increasing".into(),
            ));
        }
        if self.runs_per_value == 0 {
            return Err(KprError::InvalidConfig("runs_per_value must be at least 1".into()));
        }
        Ok(())
    }

    pub fn config_for(&self, value: f64) -> Result<SimulationConfig> {
        let mut cfg = self.base.clone();
        match self.variable {
            SweepVariable::N => {
                if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                    return Err(KprError::InvalidConfig(format!("n = {value} is not a positive integer")));
                }
                cfg.n = value as u32;
            }
            SweepVariable::Alpha => cfg.alpha = value,
        }
        cfg.max_days = self
            .max_days
            .unwrap_or_else(|| default_max_days(cfg.strategy, cfg.n, cfg.alpha));
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run_ensemble(config: &SimulationConfig, runs: u32, base_seed: u64) -> Result<EnsembleSummary> {
    Orchestrator::default().run_ensemble(config, runs, base_seed)
}

pub fn run_sweep(plan: &SweepPlan) -> Result<SweepTable> {
    Orchestrator::default().run_sweep(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Strategy;
    use std::collections::HashSet;

    #[test]
    fn seeds_are_distinct() {
        for base in [0u64, 1, 42, u64::MAX, 0x9e37_79b9_7f4a_7c15] {
            let seeds: HashSet<u64> = (0..10_000).map(|i| derive_seed(base, i)).collect();
            assert_eq!(seeds.len(), 10_000);
        }
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }

    #[test]
    fn single_run_ensemble() {
        let cfg = SimulationConfig::new(Strategy::CrowdAvoiding, 100);
        let s = run_ensemble(&cfg, 1, 7).unwrap();
        let r = engine::run(&cfg.clone().with_seed(derive_seed(7, 0))).unwrap();
        assert_eq!(s.runs, 1);
        assert_eq!(s.tau_mean, r.tau as f64);
        assert_eq!(s.fs_mean, r.f_s);
        assert_eq!(s.dispersion_min_rate_mean, r.min_final_rate());
        assert_eq!((s.tau_std, s.fs_std, s.dispersion_min_rate_std), (0.0, 0.0, 0.0));
    }

    #[test]
    fn aggregation_matches_recomputation() {
        let cfg = SimulationConfig::new(Strategy::GreedyCrowdAvoiding, 60);
        let s = run_ensemble(&cfg, 12, 3).unwrap();
        let taus: Vec<f64> = (0..12)
            .map(|i| engine::run(&cfg.clone().with_seed(derive_seed(3, i))).unwrap().tau as f64)
            .collect();
        let (m, sd) = mean_std(&taus);
        assert_eq!(s.tau_mean, m);
        assert_eq!(s.tau_std, sd);
        assert_eq!(s.converged_fraction, 1.0);
        assert!(s.tau_std >= 0.0 && s.fs_std >= 0.0);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let cfg = SimulationConfig::new(Strategy::CrowdAvoiding, 200).with_max_days(200);
        let one = Orchestrator::new(Some(1)).run_ensemble(&cfg, 16, 5).unwrap();
        let eight = Orchestrator::new(Some(8)).run_ensemble(&cfg, 16, 5).unwrap();
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&eight).unwrap());
    }

    #[test]
    fn sweep_rows_and_failures() {
        let base = SimulationConfig::new(Strategy::CrowdAvoiding, 100).with_max_days(100);
        let mut plan = SweepPlan::new(base.clone(), SweepVariable::Alpha, vec![-1.0, 0.5, 1.0]);
        plan.runs_per_value = 4;
        plan.max_days = Some(100);
        let table = Orchestrator::new(Some(2)).run_sweep(&plan).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.rows[0].error.is_some());
        assert_eq!(table.rows[0].runs, 0);
        assert!(table.rows[1].error.is_none() && table.rows[2].error.is_none());
        assert_eq!(table.rows[2].runs, 4);

        // The alpha = 1 row equals an ensemble of the base config.
        let direct = run_ensemble(&base, 4, plan.base_seed).unwrap();
        assert_eq!(table.rows[2].fs_mean, direct.fs_mean);
        assert_eq!(table.rows[2].tau_mean, direct.tau_mean);
    }

    #[test]
    fn plan_validation() {
        let base = SimulationConfig::new(Strategy::Random, 10);
        assert!(SweepPlan::new(base.clone(), SweepVariable::N, vec![]).validate().is_err());
        assert!(SweepPlan::new(base.clone(), SweepVariable::N, vec![20.0, 10.0]).validate().is_err());
        let mut p = SweepPlan::new(base.clone(), SweepVariable::N, vec![10.0]);
        p.runs_per_value = 0;
        assert!(p.validate().is_err());
        let p = SweepPlan::new(base, SweepVariable::N, vec![10.5]);
        assert!(p.config_for(10.5).is_err());
        let g = SweepPlan::new(SimulationConfig::new(Strategy::GreedyCrowdAvoiding, 10), SweepVariable::N, vec![400.0]);
        assert_eq!(g.config_for(400.0).unwrap().max_days, 4000);
    }

    #[test]
    fn zero_runs_rejected() {
        let cfg = SimulationConfig::new(Strategy::Random, 10);
        assert!(run_ensemble(&cfg, 0, 0).is_err());
    }
}
