//! Monte Carlo laboratory for the Kolkata Paise Restaurant game.
//!
//! `n` agents pick among `n` restaurants every day; each restaurant serves one
//! of its arrivals at random. The crate simulates the random, crowd-avoiding
//! and greedy crowd-avoiding strategies, measures utilization and
//! convergence time, and aggregates ensembles and parameter sweeps.

pub mod cli;
pub mod engine;
pub mod error;
pub mod model;
pub mod orchestrator;
pub mod stats;
pub mod strategy;

pub use error::{KprError, Result};
pub use model::{DayRecord, EnsembleSummary, RunResult, SimulationConfig, Strategy};
