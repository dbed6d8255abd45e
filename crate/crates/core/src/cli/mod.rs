//! `kpr` command-line front end.
//!
//! Subcommands write plain data files into `--out`:
//!
//! | command      | files                                             |
//! |--------------|---------------------------------------------------|
//! | `run`        | `timeseries.csv`, `summary.json`                  |
//! | `sweep`      | `sweep.csv`, `summary.json`                       |
//! | `worldlines` | `worldlines.csv`, `summary.json`                  |
//! | `figures`    | one subdirectory per figure preset                |

pub mod output;
pub mod settings;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::engine;
use crate::error::{KprError, Result};
use crate::model::{RunResult, SimulationConfig, Strategy};
use crate::orchestrator::{Orchestrator, SweepPlan, DEFAULT_RUNS};
use crate::stats::{
    crossing_histogram, dispersion_summary, estimate_fs_extrapolation, fit_alpha_scaling, linear_fit,
    slope_through_origin, world_lines, AlphaDiagnostic, Dispersion, LinearFit, SweepTable, SweepVariable,
};

use output::{write_json, Cell, CsvTable};
use settings::{pick, CommonArgs, Settings};

/// Exit status when `--strict` is set and a run did not converge.
pub const EXIT_NOT_CONVERGED: i32 = 3;
/// Exit status for invalid flags or configuration.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 1;

/// Crossing histograms are quadratic in the number of agents.
const CROSSING_MAX_AGENTS: u32 = 500;
const CROSSING_BINS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "kpr", version, about = "Kolkata Paise Restaurant Monte Carlo laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single run: per-day utilization and convergence summary
    Run(RunArgs),
    /// Ensembles over a list of N or alpha values
    Sweep(SweepArgs),
    /// Per-agent cumulative success trajectories of one run
    Worldlines(WorldlinesArgs),
    /// Canonical presets for every figure's data
    Figures(FiguresArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// n | alpha
    #[arg(long)]
    pub variable: Option<String>,
    /// comma-separated, strictly increasing
    #[arg(long)]
    pub values: Option<String>,
    /// runs per value
    #[arg(long)]
    pub runs: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct WorldlinesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// write every k-th day (the last day is always written)
    #[arg(long)]
    pub every: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct FiguresArgs {
    /// output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// base seed for every preset (falls back to $KPR_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// runs per sweep value
    #[arg(long)]
    pub runs: Option<u32>,
    /// drop sweep values above this N
    #[arg(long)]
    pub max_n: Option<u32>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub strict: bool,
}

/// What a command did, for the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub all_converged: bool,
    pub strict: bool,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        if self.strict && !self.all_converged {
            EXIT_NOT_CONVERGED
        } else {
            0
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Worldlines(a) => cmd_worldlines(a),
        Command::Figures(a) => cmd_figures(a),
    }
}

/// Exit status for an error: usage problems versus I/O failures.
pub fn error_exit_code(err: &KprError) -> i32 {
    match err {
        KprError::Io(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunSummaryFile<'a> {
    command: &'static str,
    config: &'a SimulationConfig,
    days_run: u32,
    tau: u32,
    f_s: f64,
    converged: bool,
    final_f: f64,
    min_final_rate: f64,
    max_final_rate: f64,
}

pub fn timeseries_table(run: &RunResult) -> CsvTable {
    let mut t = CsvTable::new(&["t", "f", "served_count"]);
    for (i, (&f, &served)) in run.f_series.iter().zip(&run.served_series).enumerate() {
        t.push(vec![(i as u32 + 1).into(), f.into(), served.into()]);
    }
    t
}

pub fn cmd_run(args: &RunArgs) -> Result<Outcome> {
    let s = Settings::resolve(&args.common, None)?;
    s.config.validate()?;
    let run = engine::run(&s.config)?;
    write_run(&s.out, &run)?;
    Ok(Outcome {
        all_converged: run.converged,
        strict: s.strict,
    })
}

fn write_run(dir: &Path, run: &RunResult) -> Result<()> {
    prepare_dir(dir)?;
    timeseries_table(run).write(&dir.join("timeseries.csv"))?;
    write_json(
        &dir.join("summary.json"),
        &RunSummaryFile {
            command: "run",
            config: &run.config,
            days_run: run.days_run(),
            tau: run.tau,
            f_s: run.f_s,
            converged: run.converged,
            final_f: *run.f_series.last().unwrap(),
            min_final_rate: run.min_final_rate(),
            max_final_rate: run.max_final_rate(),
        },
    )
}

#[derive(Debug, Serialize)]
struct SweepSummaryFile<'a> {
    command: &'static str,
    base_config: &'a SimulationConfig,
    variable: SweepVariable,
    runs_per_value: u32,
    base_seed: u64,
    fixed_max_days: Option<u32>,
    /// `fs_mean = intercept + slope / N`
    fs_extrapolation: Option<LinearFit>,
    /// `tau_mean = slope * N`
    tau_slope_through_origin: Option<f64>,
    tau_linear_fit: Option<LinearFit>,
    alpha_diagnostics: Option<Vec<AlphaDiagnostic>>,
    all_converged: bool,
    table: &'a SweepTable,
}

pub fn sweep_table_csv(table: &SweepTable) -> CsvTable {
    let mut t = CsvTable::new(&[
        "value",
        "fs_mean",
        "fs_std",
        "tau_mean",
        "tau_std",
        "runs",
        "converged_fraction",
    ]);
    for r in &table.rows {
        let value = match table.variable {
            SweepVariable::N => Cell::Int(r.value as i64),
            SweepVariable::Alpha => Cell::Real(r.value),
        };
        t.push(vec![
            value,
            r.fs_mean.into(),
            r.fs_std.into(),
            r.tau_mean.into(),
            r.tau_std.into(),
            r.runs.into(),
            r.converged_fraction.into(),
        ]);
    }
    t
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| KprError::InvalidConfig(format!("bad sweep value '{v}'")))
        })
        .collect()
}

/// Table plus the fits that go into its summary.
struct SweepReport {
    table: SweepTable,
    fs_extrapolation: Option<LinearFit>,
    tau_slope: Option<f64>,
    tau_fit: Option<LinearFit>,
    alpha_diagnostics: Option<Vec<AlphaDiagnostic>>,
}

impl SweepReport {
    fn new(table: SweepTable) -> Self {
        let ok: Vec<_> = table.rows.iter().filter(|r| r.error.is_none()).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = ok.iter().map(|r| (r.value, r.tau_mean)).unzip();
        let (fs_extrapolation, tau_slope, tau_fit, alpha_diagnostics) = match table.variable {
            SweepVariable::N => (
                estimate_fs_extrapolation(&table).ok(),
                slope_through_origin(&x, &y).ok(),
                linear_fit(&x, &y).ok(),
                None,
            ),
            SweepVariable::Alpha => (None, None, None, Some(fit_alpha_scaling(&table))),
        };
        SweepReport {
            table,
            fs_extrapolation,
            tau_slope,
            tau_fit,
            alpha_diagnostics,
        }
    }

    fn all_converged(&self) -> bool {
        self.table
            .rows
            .iter()
            .all(|r| r.error.is_none() && r.converged_fraction == 1.0)
    }

    fn write(&self, dir: &Path, plan: &SweepPlan) -> Result<()> {
        prepare_dir(dir)?;
        sweep_table_csv(&self.table).write(&dir.join("sweep.csv"))?;
        write_json(
            &dir.join("summary.json"),
            &SweepSummaryFile {
                command: "sweep",
                base_config: &plan.base,
                variable: plan.variable,
                runs_per_value: plan.runs_per_value,
                base_seed: plan.base_seed,
                fixed_max_days: plan.max_days,
                fs_extrapolation: self.fs_extrapolation,
                tau_slope_through_origin: self.tau_slope,
                tau_linear_fit: self.tau_fit,
                alpha_diagnostics: self.alpha_diagnostics.clone(),
                all_converged: self.all_converged(),
                table: &self.table,
            },
        )
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Outcome> {
    let file = match &args.common.config {
        Some(p) => settings::ConfigFile::load(p)?,
        None => settings::ConfigFile::default(),
    };
    let variable: SweepVariable = pick::<String>(args.variable.clone(), &file, "variable")?
        .ok_or_else(|| KprError::InvalidConfig("--variable is required".into()))?
        .parse()?;
    let values = parse_values(
        &pick::<String>(args.values.clone(), &file, "values")?
            .ok_or_else(|| KprError::InvalidConfig("--values is required".into()))?,
    )?;
    let runs = pick(args.runs, &file, "runs")?.unwrap_or(DEFAULT_RUNS);

    let mut common = args.common.clone();
    if common.n.is_none() && file.get::<u32>("n")?.is_none() && variable == SweepVariable::N {
        // n comes from the sweep values; any placeholder works for the base
        common.n = Some(1);
    }
    let s = Settings::resolve_with(
        &common,
        file,
        std::env::var(settings::SEED_ENV).ok(),
        None,
    )?;
    let plan = SweepPlan {
        base: s.config.clone(),
        variable,
        values,
        runs_per_value: runs,
        base_seed: s.config.seed,
        max_days: s.max_days_given.then_some(s.config.max_days),
    };
    let report = SweepReport::new(Orchestrator::new(s.threads).run_sweep(&plan)?);
    report.write(&s.out, &plan)?;
    Ok(Outcome {
        all_converged: report.all_converged(),
        strict: s.strict,
    })
}

#[derive(Debug, Serialize)]
struct WorldlinesSummaryFile<'a> {
    command: &'static str,
    config: &'a SimulationConfig,
    tau: u32,
    converged: bool,
    last_day: u32,
    dispersion: Dispersion,
    day_one_mean_pct: f64,
    /// Pairwise crossings binned by `t / last_day` (small runs only).
    crossing_histogram: Option<Vec<u64>>,
}

pub fn cmd_worldlines(args: &WorldlinesArgs) -> Result<Outcome> {
    let s = Settings::resolve(&args.common, None)?;
    let every = pick(args.every, &s.file, "every")?.unwrap_or(1);
    if every == 0 {
        return Err(KprError::InvalidConfig("--every must be at least 1".into()));
    }
    let run = engine::run(&s.config.clone().with_history(true))?;
    write_worldlines(&s.out, &run, every)?;
    Ok(Outcome {
        all_converged: run.converged,
        strict: s.strict,
    })
}

fn write_worldlines(dir: &Path, run: &RunResult, every: u32) -> Result<Dispersion> {
    prepare_dir(dir)?;
    let lines = world_lines(run)?;
    let dispersion = dispersion_summary(&lines)?;
    let last_day = lines[0].last_day();

    let mut t = CsvTable::new(&["agent_id", "t", "cumulative_success_pct"]);
    for line in &lines {
        for &(day, pct) in &line.series {
            if day % every == 0 || day == 1 || day == last_day {
                t.push(vec![line.agent_id.into(), day.into(), pct.into()]);
            }
        }
    }
    t.write(&dir.join("worldlines.csv"))?;

    let day_one_mean_pct = lines.iter().map(|l| l.series[0].1).sum::<f64>() / lines.len() as f64;
    write_json(
        &dir.join("summary.json"),
        &WorldlinesSummaryFile {
            command: "worldlines",
            config: &run.config,
            tau: run.tau,
            converged: run.converged,
            last_day,
            dispersion,
            day_one_mean_pct,
            crossing_histogram: (run.config.n <= CROSSING_MAX_AGENTS)
                .then(|| crossing_histogram(&lines, CROSSING_BINS)),
        },
    )?;
    Ok(dispersion)
}

/// N values used by the sweep presets.
pub const SWEEP_N_VALUES: [u32; 10] = [100, 200, 400, 800, 1600, 3200, 6400, 12800, 25600, 51200];
pub const FIGURE_RUN_N: u32 = 1600;
pub const WORLDLINE_N: u32 = 50;
pub const GCA_SWEEP_MAX_N: u32 = 6400;
pub const DISPERSION_N_VALUES: [u32; 8] = [50, 100, 200, 400, 800, 1600, 3200, 6400];
pub const DISPERSION_RUNS: u32 = 10;

#[derive(Debug, Serialize)]
struct DispersionSummaryFile {
    command: &'static str,
    base_seed: u64,
    runs_per_value: u32,
    rows: Vec<DispersionRow>,
}

#[derive(Debug, Serialize)]
struct DispersionRow {
    n: u32,
    runs: u32,
    min_final_mean: f64,
    min_final_std: f64,
    gap_from_100_mean: f64,
    tau_mean: f64,
}

/// Presets:
///
/// * `fig1_ca_run`: CA, N = 1600, one run.
/// * `fig1_2_ca_sweep`: CA N sweep, `f_s` and `tau` with the 1/N extrapolation.
/// * `fig3_gca_run`: GCA, N = 1600, one run.
/// * `fig4_gca_sweep`: GCA N sweep up to 6400.
/// * `fig5_worldlines`: GCA world lines, N = 50.
/// * `fig6_dispersion`: GCA minimum final success rate versus N, 10 runs each.
pub fn cmd_figures(args: &FiguresArgs) -> Result<Outcome> {
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("figures"));
    let seed = match args.seed {
        Some(s) => s,
        None => match std::env::var(settings::SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| KprError::InvalidConfig(format!("{}='{v}' is not a u64", settings::SEED_ENV)))?,
            Err(_) => 0,
        },
    };
    let runs = args.runs.unwrap_or(DEFAULT_RUNS);
    let max_n = args.max_n.unwrap_or(u32::MAX);
    let orch = Orchestrator::new(args.threads);
    let mut all_converged = true;
    let capped = |values: &[u32], cap: u32| -> Vec<f64> {
        values.iter().filter(|&&n| n <= cap).map(|&n| n as f64).collect()
    };

    let ca = SimulationConfig::new(Strategy::CrowdAvoiding, FIGURE_RUN_N.min(max_n)).with_seed(seed);
    let run = engine::run(&ca)?;
    all_converged &= run.converged;
    write_run(&out.join("fig1_ca_run"), &run)?;

    let mut sweep = |base: SimulationConfig, values: Vec<f64>, dir: &str| -> Result<()> {
        if values.is_empty() {
            return Ok(());
        }
        let mut plan = SweepPlan::new(base, SweepVariable::N, values);
        plan.runs_per_value = runs;
        plan.base_seed = seed;
        let report = SweepReport::new(orch.run_sweep(&plan)?);
        all_converged &= report.all_converged();
        report.write(&out.join(dir), &plan)
    };
    sweep(ca.clone(), capped(&SWEEP_N_VALUES, max_n), "fig1_2_ca_sweep")?;
    let gca = SimulationConfig::new(Strategy::GreedyCrowdAvoiding, FIGURE_RUN_N.min(max_n)).with_seed(seed);
    sweep(gca.clone(), capped(&SWEEP_N_VALUES, GCA_SWEEP_MAX_N.min(max_n)), "fig4_gca_sweep")?;

    let run = engine::run(&gca)?;
    all_converged &= run.converged;
    write_run(&out.join("fig3_gca_run"), &run)?;

    let wl = SimulationConfig::new(Strategy::GreedyCrowdAvoiding, WORLDLINE_N)
        .with_seed(seed)
        .with_history(true);
    let run = engine::run(&wl)?;
    all_converged &= run.converged;
    write_worldlines(&out.join("fig5_worldlines"), &run, 1)?;

    let mut rows = Vec::new();
    for n in DISPERSION_N_VALUES.iter().copied().filter(|&n| n <= max_n) {
        let cfg = SimulationConfig::new(Strategy::GreedyCrowdAvoiding, n);
        let s = orch.run_ensemble(&cfg, DISPERSION_RUNS, seed)?;
        all_converged &= s.converged_fraction == 1.0;
        rows.push(DispersionRow {
            n,
            runs: s.runs,
            min_final_mean: s.dispersion_min_rate_mean,
            min_final_std: s.dispersion_min_rate_std,
            gap_from_100_mean: 100.0 - s.dispersion_min_rate_mean,
            tau_mean: s.tau_mean,
        });
    }
    let dir = out.join("fig6_dispersion");
    prepare_dir(&dir)?;
    let mut t = CsvTable::new(&["n", "min_final_mean", "min_final_std", "gap_from_100_mean", "tau_mean", "runs"]);
    for r in &rows {
        t.push(vec![
            r.n.into(),
            r.min_final_mean.into(),
            r.min_final_std.into(),
            r.gap_from_100_mean.into(),
            r.tau_mean.into(),
            r.runs.into(),
        ]);
    }
    t.write(&dir.join("dispersion.csv"))?;
    write_json(
        &dir.join("summary.json"),
        &DispersionSummaryFile {
            command: "figures",
            base_seed: seed,
            runs_per_value: DISPERSION_RUNS,
            rows,
        },
    )?;

    Ok(Outcome {
        all_converged,
        strict: args.strict,
    })
}
