//! Flag, config-file and environment merging.
//!
//! Config files are flat `key = value` lines whose keys are the long flag
//! names (`max-days = 500`). Blank lines and `#` comments are skipped.
//! Precedence: command-line flag, then config file, then `KPR_SEED` (seed
//! only), then the built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;

use crate::error::{KprError, Result};
use crate::model::{default_max_days, SimulationConfig, Strategy};

pub const SEED_ENV: &str = "KPR_SEED";

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// key=value file with defaults for any flag
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// random | ca | gca
    #[arg(long)]
    pub strategy: Option<String>,
    /// number of agents (= number of restaurants)
    #[arg(long)]
    pub n: Option<u32>,
    /// crowd-avoiding exponent
    #[arg(long)]
    pub alpha: Option<f64>,
    /// base seed (falls back to $KPR_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// horizon in days (default: 10n for gca, max(1000, 200/alpha) for ca, 1000 for random)
    #[arg(long)]
    pub max_days: Option<u32>,
    #[arg(long)]
    pub tail_window: Option<f64>,
    #[arg(long)]
    pub stability_days: Option<u32>,
    #[arg(long)]
    pub band_floor: Option<f64>,
    /// output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// worker threads (default: machine parallelism)
    #[arg(long)]
    pub threads: Option<usize>,
    /// exit non-zero if any run fails to converge
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "strategy",
    "n",
    "alpha",
    "seed",
    "max-days",
    "tail-window",
    "stability-days",
    "band-floor",
    "out",
    "threads",
    "strict",
    "runs",
    "variable",
    "values",
    "every",
    "max-n",
];

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                KprError::InvalidConfig(format!("config line {}: expected key=value", i + 1))
            })?;
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(KprError::InvalidConfig(format!(
                    "config line {}: unknown key '{key}'",
                    i + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>().map_err(|_| {
                    KprError::InvalidConfig(format!("config key '{key}': cannot parse '{v}'"))
                })
            })
            .transpose()
    }
}

/// `flag` if given, otherwise the file value.
pub fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// Everything resolved from the common flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: SimulationConfig,
    pub max_days_given: bool,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub strict: bool,
    pub file: ConfigFile,
}

impl Settings {
    pub fn resolve(args: &CommonArgs, default_strategy: Option<Strategy>) -> Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        Self::resolve_with(args, file, std::env::var(SEED_ENV).ok(), default_strategy)
    }

    pub fn resolve_with(
        args: &CommonArgs,
        file: ConfigFile,
        env_seed: Option<String>,
        default_strategy: Option<Strategy>,
    ) -> Result<Self> {
        let strategy = match pick::<String>(args.strategy.clone(), &file, "strategy")? {
            Some(s) => s.parse::<Strategy>()?,
            None => default_strategy
                .ok_or_else(|| KprError::InvalidConfig("--strategy is required".into()))?,
        };
        let n = pick(args.n, &file, "n")?
            .ok_or_else(|| KprError::InvalidConfig("--n is required".into()))?;
        let mut config = SimulationConfig::new(strategy, n);
        if let Some(alpha) = pick(args.alpha, &file, "alpha")? {
            config.alpha = alpha;
        }
        config.seed = match pick(args.seed, &file, "seed")? {
            Some(s) => s,
            None => match env_seed {
                Some(v) => v.trim().parse().map_err(|_| {
                    KprError::InvalidConfig(format!("{SEED_ENV}='{v}' is not a u64"))
                })?,
                None => 0,
            },
        };
        let max_days = pick(args.max_days, &file, "max-days")?;
        config.max_days = max_days.unwrap_or_else(|| default_max_days(strategy, n, config.alpha));
        if let Some(v) = pick(args.tail_window, &file, "tail-window")? {
            config.tail_window_fraction = v;
        }
        if let Some(v) = pick(args.stability_days, &file, "stability-days")? {
            config.stability_days = v;
        }
        if let Some(v) = pick(args.band_floor, &file, "band-floor")? {
            config.band_floor = v;
        }
        let out = pick(args.out.clone(), &file, "out")?.unwrap_or_else(|| PathBuf::from("."));
        let threads = pick(args.threads, &file, "threads")?;
        let strict = args.strict || file.get::<bool>("strict")?.unwrap_or(false);
        Ok(Settings {
            config,
            max_days_given: max_days.is_some(),
            out,
            threads,
            strict,
            file,
        })
    }
}
