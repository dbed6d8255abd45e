//! One simulation run: day-one placement, the daily choose/tally/serve
//! cycle, convergence detection and result assembly.
//!
//! All agents choose from yesterday's state before any restaurant serves.
//! Each restaurant with two or more arrivals draws one `gen_range(0..crowd)`
//! to pick its customer, in ascending restaurant order; a lone arrival is
//! served without a draw. Arrivals are ordered by agent index inside each
//! restaurant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KprError, Result};
use crate::model::{AgentState, DayRecord, RunResult, SimulationConfig, Strategy, SuccessHistory};
use crate::strategy::sample_choice;

/// Random stream used for every run. Seeded with `seed_from_u64`.
pub type SimRng = ChaCha8Rng;

pub fn rng_for_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct WorldState {
    /// Last completed day (0 before day one).
    pub day: u32,
    pub agents: Vec<AgentState>,
    /// Arrivals per restaurant on `day`.
    pub crowds: Vec<u32>,
    /// Agent served at each restaurant on `day`.
    pub served_agent: Vec<Option<u32>>,
    choices: Vec<u32>,
    offsets: Vec<u32>,
    cursor: Vec<u32>,
    arrivals: Vec<u32>,
}

impl WorldState {
    fn empty(n: u32) -> Self {
        let n = n as usize;
        WorldState {
            day: 0,
            agents: vec![AgentState::default(); n],
            crowds: vec![0; n],
            served_agent: vec![None; n],
            choices: vec![0; n],
            offsets: vec![0; n + 1],
            cursor: vec![0; n],
            arrivals: vec![0; n],
        }
    }

    pub fn n(&self) -> u32 {
        self.agents.len() as u32
    }

    /// Today's choice of every agent.
    pub fn choices(&self) -> &[u32] {
        &self.choices
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.crowds
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, _)| k)
    }

    /// Place agents by hand, e.g. to start from a prepared assignment.
    /// Runs the service lottery for the given choices as if it were a day.
    pub fn from_assignment<R: Rng + ?Sized>(choices: &[u32], rng: &mut R) -> (Self, DayRecord) {
        let n = choices.len() as u32;
        assert!(choices.iter().all(|&k| k < n), "restaurant index out of range");
        let mut state = WorldState::empty(n);
        state.choices.copy_from_slice(choices);
        let record = state.resolve_day(rng);
        (state, record)
    }

    /// Tally crowds, run the lotteries and update every agent for the
    /// choices already stored in `self.choices`.
    fn resolve_day<R: Rng + ?Sized>(&mut self, rng: &mut R) -> DayRecord {
        let n = self.agents.len();
        self.crowds.iter_mut().for_each(|c| *c = 0);
        for &k in &self.choices {
            self.crowds[k as usize] += 1;
        }

        // counting sort of agents by restaurant
        self.offsets[0] = 0;
        for k in 0..n {
            self.offsets[k + 1] = self.offsets[k] + self.crowds[k];
        }
        self.cursor.copy_from_slice(&self.offsets[..n]);
        for (i, &k) in self.choices.iter().enumerate() {
            let slot = &mut self.cursor[k as usize];
            self.arrivals[*slot as usize] = i as u32;
            *slot += 1;
        }

        let mut served_count = 0u32;
        let mut max_crowd = 0u32;
        for k in 0..n {
            let crowd = self.crowds[k];
            max_crowd = max_crowd.max(crowd);
            self.served_agent[k] = match crowd {
                0 => None,
                1 => Some(self.arrivals[self.offsets[k] as usize]),
                _ => {
                    let pick = rng.gen_range(0..crowd);
                    Some(self.arrivals[(self.offsets[k] + pick) as usize])
                }
            };
            served_count += self.served_agent[k].is_some() as u32;
        }

        for (i, agent) in self.agents.iter_mut().enumerate() {
            let k = self.choices[i] as usize;
            let served = self.served_agent[k] == Some(i as u32);
            agent.last_restaurant = k as u32;
            agent.last_crowd = self.crowds[k];
            agent.was_served = served;
            agent.success_count += served as u32;
        }

        let mut crowd_histogram = vec![0u32; max_crowd as usize + 1];
        for &c in &self.crowds {
            crowd_histogram[c as usize] += 1;
        }

        self.day += 1;
        DayRecord {
            day: self.day,
            served_count,
            crowd_histogram,
            utilization: served_count as f64 / n as f64,
        }
    }
}

/// Day one: every agent picks a restaurant uniformly at random.
pub fn init_day_one<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> (WorldState, DayRecord) {
    let mut state = WorldState::empty(config.n);
    let first = AgentState::default();
    for i in 0..config.n as usize {
        state.choices[i] = sample_choice(&first, Strategy::Random, config.alpha, config.n, rng);
    }
    let record = state.resolve_day(rng);
    (state, record)
}

/// Advance one day under the configured strategy.
pub fn step_day<R: Rng + ?Sized>(state: &mut WorldState, config: &SimulationConfig, rng: &mut R) -> DayRecord {
    assert!(state.day >= 1, "step_day before init_day_one");
    debug_assert_eq!(state.n(), config.n);
    for i in 0..state.agents.len() {
        state.choices[i] = sample_choice(&state.agents[i], config.strategy, config.alpha, config.n, rng);
    }
    state.resolve_day(rng)
}

/// Outcome of the convergence estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub tau: u32,
    pub f_s: f64,
    pub converged: bool,
}

/// Estimate convergence time and saturation level from a utilization series.
///
/// * Greedy: converged on the first day with `f == 1`; `tau` is the number of
///   days before it and `f_s = 1`. Otherwise `tau = max_days` and `f_s` is the
///   last value.
/// * Crowd avoiding: `f_s` and `sigma` are the mean and standard deviation of
///   the trailing `tail_window_fraction * max_days` values; `tau = d - 1` for
///   the first day `d` that starts `stability_days` consecutive days inside
///   `f_s ± max(2 sigma, band_floor * f_s)`. The floor keeps `tau` from
///   growing with `n` as `sigma` shrinks.
/// * Random: a memoryless strategy is stationary from day one, so `tau = 0`
///   and `f_s` is the tail mean (at least one sample).
pub fn detect_convergence(f_series: &[f64], config: &SimulationConfig) -> Result<Convergence> {
    if f_series.is_empty() {
        return Err(KprError::EmptyInput("utilization series"));
    }
    match config.strategy {
        Strategy::GreedyCrowdAvoiding => Ok(match f_series.iter().position(|&f| f == 1.0) {
            Some(i) => Convergence {
                tau: i as u32,
                f_s: 1.0,
                converged: true,
            },
            None => Convergence {
                tau: config.max_days,
                f_s: *f_series.last().unwrap(),
                converged: false,
            },
        }),
        Strategy::Random => {
            let window = config.tail_window_len().clamp(1, f_series.len());
            let tail = &f_series[f_series.len() - window..];
            Ok(Convergence {
                tau: 0,
                f_s: tail.iter().sum::<f64>() / window as f64,
                converged: true,
            })
        }
        Strategy::CrowdAvoiding => {
            let window = config.tail_window_len().min(f_series.len());
            if window < 2 {
                return Err(KprError::DegenerateWindow { samples: window });
            }
            let tail = &f_series[f_series.len() - window..];
            let mean = tail.iter().sum::<f64>() / window as f64;
            let var = tail.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (window - 1) as f64;
            let band = (2.0 * var.sqrt()).max(config.band_floor * mean);
            let (lo, hi) = (mean - band, mean + band);

            let need = config.stability_days as usize;
            let mut run = 0usize;
            let mut first = None;
            for (i, &f) in f_series.iter().enumerate() {
                if f >= lo && f <= hi {
                    run += 1;
                    if run == need {
                        first = Some(i + 1 - need);
                        break;
                    }
                } else {
                    run = 0;
                }
            }
            Ok(match first {
                Some(i) => Convergence {
                    tau: i as u32,
                    f_s: mean,
                    converged: true,
                },
                None => Convergence {
                    tau: config.max_days,
                    f_s: mean,
                    converged: false,
                },
            })
        }
    }
}

/// Run with a stream seeded from `config.seed`.
pub fn run(config: &SimulationConfig) -> Result<RunResult> {
    run_with_rng(config, &mut rng_for_seed(config.seed))
}

pub fn run_with_rng<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<RunResult> {
    run_observed(config, rng, |_, _| {})
}

/// Run, handing every day's record and the state after that day to
/// `observe`.
pub fn run_observed<R, F>(config: &SimulationConfig, rng: &mut R, mut observe: F) -> Result<RunResult>
where
    R: Rng + ?Sized,
    F: FnMut(&DayRecord, &WorldState),
{
    config.validate()?;
    let greedy = config.strategy == Strategy::GreedyCrowdAvoiding;
    // Non-greedy runs need the flags to recover success counts at day tau,
    // which is only known after the horizon.
    let keep_history = config.record_history || !greedy;
    let mut history = keep_history.then(|| SuccessHistory::new(config.n as usize));

    let mut f_series = Vec::with_capacity(config.max_days.min(1 << 20) as usize);
    let mut served_series = Vec::with_capacity(f_series.capacity());

    let (mut state, mut record) = init_day_one(config, rng);
    loop {
        if let Some(h) = history.as_mut() {
            h.push_day(state.agents.iter().map(|a| a.was_served));
        }
        observe(&record, &state);
        f_series.push(record.utilization);
        served_series.push(record.served_count);
        if greedy && record.served_count == config.n {
            break;
        }
        if state.day >= config.max_days {
            break;
        }
        record = step_day(&mut state, config, rng);
    }

    let conv = detect_convergence(&f_series, config)?;
    let eval_day = conv.tau.max(1).min(f_series.len() as u32) as usize;
    let counts: Vec<u32> = match &history {
        Some(h) => h.counts_through(eval_day),
        None if eval_day == state.day as usize => {
            state.agents.iter().map(|a| a.success_count).collect()
        }
        None => {
            // Greedy stopped on the first full day d, where every agent was
            // served, and eval_day = d - 1.
            debug_assert_eq!(eval_day + 1, state.day as usize);
            state.agents.iter().map(|a| a.success_count - 1).collect()
        }
    };
    let final_rates = counts
        .iter()
        .map(|&c| 100.0 * c as f64 / eval_day as f64)
        .collect();

    Ok(RunResult {
        config: config.clone(),
        f_series,
        served_series,
        tau: conv.tau,
        f_s: conv.f_s,
        final_rates,
        converged: conv.converged,
        history: if config.record_history { history } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::exact_random_utilization;

    fn check_record(r: &DayRecord, n: u32) {
        assert_eq!(r.agents_accounted(), n as u64);
        assert_eq!(r.occupied_restaurants(), r.served_count as u64);
        assert_eq!(r.restaurants(), n as u64);
        assert!((0.0..=1.0).contains(&r.utilization));
    }

    fn check_state(s: &WorldState) {
        assert_eq!(s.crowds.iter().map(|&c| c as u64).sum::<u64>(), s.n() as u64);
        for (k, served) in s.served_agent.iter().enumerate() {
            assert_eq!(served.is_some(), s.crowds[k] > 0);
            if let Some(a) = served {
                assert_eq!(s.choices[*a as usize] as usize, k);
                assert!(s.agents[*a as usize].was_served);
            }
        }
        let marked = s.agents.iter().filter(|a| a.was_served).count();
        assert_eq!(marked, s.served_agent.iter().flatten().count());
        for a in &s.agents {
            assert_eq!(a.last_crowd, s.crowds[a.last_restaurant as usize]);
            assert!(a.last_crowd >= 1);
            assert!(a.success_count <= s.day);
        }
    }

    #[test]
    fn single_agent_day_one() {
        let cfg = SimulationConfig::new(Strategy::Random, 1);
        let (state, rec) = init_day_one(&cfg, &mut rng_for_seed(0));
        assert_eq!(state.crowds, vec![1]);
        assert_eq!(rec.served_count, 1);
        assert_eq!(rec.utilization, 1.0);
    }

    #[test]
    fn day_one_mean_matches_closed_form() {
        let n = 10_000;
        let cfg = SimulationConfig::new(Strategy::CrowdAvoiding, n);
        let mean = (0..30)
            .map(|s| init_day_one(&cfg, &mut rng_for_seed(s)).1.utilization)
            .sum::<f64>()
            / 30.0;
        assert!((mean - exact_random_utilization(n)).abs() < 0.01, "{mean}");
        assert!((mean - 0.6321).abs() < 0.01);
    }

    #[test]
    fn invariants_hold_every_day() {
        for strategy in [
            Strategy::Random,
            Strategy::CrowdAvoiding,
            Strategy::GreedyCrowdAvoiding,
        ] {
            let cfg = SimulationConfig::new(strategy, 37).with_alpha(0.7);
            let mut rng = rng_for_seed(5);
            let (mut state, rec) = init_day_one(&cfg, &mut rng);
            check_record(&rec, 37);
            check_state(&state);
            for _ in 0..200 {
                let rec = step_day(&mut state, &cfg, &mut rng);
                check_record(&rec, 37);
                check_state(&state);
                assert_eq!(rec.day, state.day);
            }
        }
    }

    #[test]
    fn greedy_occupancy_never_shrinks() {
        let cfg = SimulationConfig::new(Strategy::GreedyCrowdAvoiding, 200);
        let mut rng = rng_for_seed(11);
        let (mut state, _) = init_day_one(&cfg, &mut rng);
        for _ in 0..2000 {
            let before: Vec<usize> = state.occupied().collect();
            step_day(&mut state, &cfg, &mut rng);
            for k in before {
                assert!(state.crowds[k] > 0, "restaurant {k} emptied on day {}", state.day);
            }
        }
    }

    #[test]
    fn everyone_alone_stays_put() {
        let n = 25u32;
        let mut rng = rng_for_seed(2);
        let assignment: Vec<u32> = (0..n).rev().collect();
        let (mut state, rec) = WorldState::from_assignment(&assignment, &mut rng);
        assert_eq!(rec.utilization, 1.0);
        let cfg = SimulationConfig::new(Strategy::CrowdAvoiding, n);
        for _ in 0..10 {
            let rec = step_day(&mut state, &cfg, &mut rng);
            assert_eq!(rec.utilization, 1.0);
            assert_eq!(state.choices(), assignment.as_slice());
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let cfg = SimulationConfig::new(Strategy::Random, 3).with_max_days(50);
        let a = run(&cfg.clone().with_seed(99)).unwrap();
        let b = run(&cfg.with_seed(99)).unwrap();
        assert_eq!(a, b);
        let mut days_a = Vec::new();
        let mut days_b = Vec::new();
        let cfg = SimulationConfig::new(Strategy::CrowdAvoiding, 3);
        run_observed(&cfg, &mut rng_for_seed(4), |r, _| days_a.push(r.clone())).unwrap();
        run_observed(&cfg, &mut rng_for_seed(4), |r, _| days_b.push(r.clone())).unwrap();
        assert_eq!(days_a, days_b);
    }

    #[test]
    fn alpha_does_not_affect_random() {
        let base = SimulationConfig::new(Strategy::Random, 64).with_seed(8);
        let a = run(&base.clone().with_alpha(0.1)).unwrap();
        let b = run(&base.with_alpha(3.0)).unwrap();
        assert_eq!(a.f_series, b.f_series);
        assert_eq!(a.final_rates, b.final_rates);
    }

    #[test]
    fn greedy_small_run_reaches_full_utilization() {
        for seed in 0..5 {
            let r = run(&SimulationConfig::new(Strategy::GreedyCrowdAvoiding, 50).with_seed(seed)).unwrap();
            assert!(r.converged);
            assert_eq!(*r.f_series.last().unwrap(), 1.0);
            assert_eq!(r.tau as usize, r.f_series.len() - 1);
            assert!(r.f_series.windows(2).all(|w| w[0] <= w[1]));
            for &rate in &r.final_rates {
                assert!((0.0..=100.0).contains(&rate));
            }
        }
    }

    #[test]
    fn greedy_final_rates_match_history() {
        let cfg = SimulationConfig::new(Strategy::GreedyCrowdAvoiding, 40).with_seed(3);
        let plain = run(&cfg).unwrap();
        let recorded = run(&cfg.clone().with_history(true)).unwrap();
        assert_eq!(plain.f_series, recorded.f_series);
        assert_eq!(plain.final_rates, recorded.final_rates);
        let h = recorded.history.unwrap();
        assert_eq!(h.days(), recorded.f_series.len());
    }

    #[test]
    fn convergence_examples() {
        let gca = SimulationConfig::new(Strategy::GreedyCrowdAvoiding, 10);
        let c = detect_convergence(&[1.0; 5], &gca).unwrap();
        assert_eq!((c.tau, c.f_s, c.converged), (0, 1.0, true));
        let c = detect_convergence(&[0.6, 0.8, 0.9, 1.0], &gca).unwrap();
        assert_eq!((c.tau, c.converged), (3, true));
        let c = detect_convergence(&[0.6, 0.8], &gca).unwrap();
        assert_eq!((c.tau, c.converged), (gca.max_days, false));

        let mut ca = SimulationConfig::new(Strategy::CrowdAvoiding, 10).with_max_days(40);
        ca.stability_days = 3;
        let mut series = vec![0.5, 0.6, 0.7];
        series.extend((0..37).map(|i| if i % 2 == 0 { 0.79 } else { 0.81 }));
        let c = detect_convergence(&series, &ca).unwrap();
        assert!(c.converged);
        assert_eq!(c.tau, 3);
        assert!((c.f_s - 0.8).abs() < 1e-3);

        assert!(matches!(
            detect_convergence(&[0.5, 0.6], &ca.clone().with_max_days(3)),
            Err(KprError::DegenerateWindow { .. })
        ));
        assert!(detect_convergence(&[], &ca).is_err());
    }

    #[test]
    fn random_converges_at_once() {
        let r = run(&SimulationConfig::new(Strategy::Random, 6400).with_max_days(200).with_seed(1)).unwrap();
        assert_eq!(r.tau, 0);
        assert!((r.f_s - 0.632).abs() < 0.01, "{}", r.f_s);
    }
}
