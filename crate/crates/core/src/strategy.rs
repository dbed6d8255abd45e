//! Next-day restaurant choice for a single agent.
//!
//! Random-stream contract of [`sample_choice`]; every run replays exactly
//! when this path is fixed:
//!
//! * `n == 1`: returns 0 and draws nothing.
//! * `Random`: one `gen_range(0..n)`.
//! * crowd avoiding: if the stay probability is 1 nothing is drawn and the
//!   agent stays. Otherwise one `f64` in `[0, 1)` decides; `u < p` stays,
//!   else one `gen_range(0..n-1)` picks among the other restaurants, skipping
//!   over `last_restaurant`.

use rand::Rng;

use crate::error::{KprError, Result};
use crate::model::{AgentState, Strategy};

/// Probabilities an agent assigns to tomorrow's restaurants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoiceRule {
    pub stay_probability: f64,
    /// Probability of each one of the other `n - 1` restaurants.
    pub other_probability: f64,
}

impl ChoiceRule {
    pub fn for_agent(strategy: Strategy, alpha: f64, n: u32, agent: &AgentState) -> Result<Self> {
        if n == 1 {
            return Ok(ChoiceRule {
                stay_probability: 1.0,
                other_probability: 0.0,
            });
        }
        let stay = match strategy {
            Strategy::Random => 1.0 / n as f64,
            _ => stay_probability(strategy, alpha, agent.last_crowd, agent.was_served)?,
        };
        Ok(ChoiceRule {
            stay_probability: stay,
            other_probability: (1.0 - stay) / (n - 1) as f64,
        })
    }

    pub fn total(&self, n: u32) -> f64 {
        self.stay_probability + (n.saturating_sub(1)) as f64 * self.other_probability
    }
}

/// Probability of returning to yesterday's restaurant.
///
/// Crowd avoiding uses `last_crowd^-alpha`. The greedy variant keeps the
/// served agent in place and applies the `alpha = 1` rule to everyone else;
/// its `alpha` argument is ignored.
pub fn stay_probability(
    strategy: Strategy,
    alpha: f64,
    last_crowd: u32,
    was_served: bool,
) -> Result<f64> {
    if last_crowd == 0 {
        return Err(KprError::ZeroCrowd);
    }
    match strategy {
        Strategy::Random => Err(KprError::NoStayRule),
        Strategy::CrowdAvoiding => Ok(crowd_avoiding_stay(alpha, last_crowd)),
        Strategy::GreedyCrowdAvoiding if was_served => Ok(1.0),
        Strategy::GreedyCrowdAvoiding => Ok(crowd_avoiding_stay(1.0, last_crowd)),
    }
}

#[inline]
fn crowd_avoiding_stay(alpha: f64, crowd: u32) -> f64 {
    if crowd == 1 {
        1.0
    } else if alpha == 1.0 {
        1.0 / crowd as f64
    } else {
        (crowd as f64).powf(-alpha)
    }
}

/// Draw tomorrow's restaurant for `agent`.
///
/// Panics if a crowd-avoiding agent has `last_crowd == 0`, which means it
/// was never placed on a first day.
pub fn sample_choice<R: Rng + ?Sized>(
    agent: &AgentState,
    strategy: Strategy,
    alpha: f64,
    n: u32,
    rng: &mut R,
) -> u32 {
    if n == 1 {
        return 0;
    }
    if strategy == Strategy::Random {
        return rng.gen_range(0..n);
    }
    let p = stay_probability(strategy, alpha, agent.last_crowd, agent.was_served)
        .expect("agent has no day-one placement");
    if p >= 1.0 || rng.gen::<f64>() < p {
        return agent.last_restaurant;
    }
    let other = rng.gen_range(0..n - 1);
    if other >= agent.last_restaurant {
        other + 1
    } else {
        other
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_oneof, proptest, Just};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(last_restaurant: u32, last_crowd: u32, was_served: bool) -> AgentState {
        AgentState {
            last_restaurant,
            last_crowd,
            was_served,
            success_count: 0,
        }
    }

    #[test]
    fn stay_probability_examples() {
        use crate::model::Strategy::{CrowdAvoiding, GreedyCrowdAvoiding};
        let p = |s, a, c, w| stay_probability(s, a, c, w).unwrap();
        assert_eq!(p(CrowdAvoiding, 1.0, 4, false), 0.25);
        assert_eq!(p(CrowdAvoiding, 0.5, 4, false), 0.5);
        assert_eq!(p(CrowdAvoiding, 1.0, 1, true), 1.0);
        assert_eq!(p(GreedyCrowdAvoiding, 0.3, 7, true), 1.0);
        assert!((p(GreedyCrowdAvoiding, 1.0, 7, false) - 0.142857).abs() < 1e-6);
        // alpha is ignored by the greedy rule
        assert_eq!(
            p(GreedyCrowdAvoiding, 0.2, 7, false),
            p(GreedyCrowdAvoiding, 1.0, 7, false)
        );
    }

    #[test]
    fn zero_crowd_and_random_rejected() {
        assert!(matches!(
            stay_probability(Strategy::CrowdAvoiding, 1.0, 0, false),
            Err(KprError::ZeroCrowd)
        ));
        assert!(matches!(
            stay_probability(Strategy::Random, 1.0, 3, false),
            Err(KprError::NoStayRule)
        ));
    }

    #[test]
    fn single_restaurant_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in [
            Strategy::Random,
            Strategy::CrowdAvoiding,
            Strategy::GreedyCrowdAvoiding,
        ] {
            for _ in 0..100 {
                assert_eq!(sample_choice(&agent(0, 1, true), s, 1.0, 1, &mut rng), 0);
            }
        }
    }

    #[test]
    fn lone_agent_stays_without_drawing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let before = rng.clone();
        for _ in 0..1000 {
            assert_eq!(
                sample_choice(&agent(17, 1, false), Strategy::CrowdAvoiding, 1.0, 50, &mut rng),
                17
            );
        }
        assert_eq!(rng, before);
    }

    #[test]
    fn random_choice_is_uniform() {
        // Chi-square goodness of fit with 3 degrees of freedom; 16.27 is the
        // 0.999 quantile.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let a = agent(0, 1, false);
        let draws = 1_000_000;
        let mut counts = [0u64; 4];
        for _ in 0..draws {
            counts[sample_choice(&a, Strategy::Random, 1.0, 4, &mut rng) as usize] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn other_branch_never_returns_last_restaurant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // crowd large enough that leaving is almost certain
        let a = agent(3, 1_000_000, false);
        let mut seen = [0u32; 6];
        for _ in 0..60_000 {
            let k = sample_choice(&a, Strategy::CrowdAvoiding, 1.0, 6, &mut rng);
            seen[k as usize] += 1;
        }
        assert!(seen[3] < 10, "{seen:?}");
        for (k, &c) in seen.iter().enumerate() {
            if k != 3 {
                assert!((c as f64 / 60_000.0 - 0.2).abs() < 0.01, "{seen:?}");
            }
        }
    }

    fn strategies() -> impl proptest::strategy::Strategy<Value = Strategy> + Clone {
        prop_oneof![
            Just(Strategy::CrowdAvoiding),
            Just(Strategy::GreedyCrowdAvoiding)
        ]
    }

    proptest! {
        #[test]
        fn stay_probability_in_unit_interval(
            s in strategies(),
            alpha in 1e-3f64..10.0,
            crowd in 1u32..=1_000_000,
            served in any::<bool>(),
        ) {
            let p = stay_probability(s, alpha, crowd, served).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn crowd_avoiding_monotone(alpha in 1e-3f64..5.0, crowd in 2u32..100_000, d in 1e-3f64..2.0) {
            let p = |a, c| stay_probability(Strategy::CrowdAvoiding, a, c, false).unwrap();
            prop_assert!(p(alpha, crowd + 1) <= p(alpha, crowd));
            prop_assert!(p(alpha + d, crowd) <= p(alpha, crowd));
        }

        #[test]
        fn choice_rule_normalized(
            s in strategies(),
            alpha in 1e-2f64..4.0,
            n in 1u32..100_000,
            crowd in 1u32..1000,
            served in any::<bool>(),
        ) {
            let rule = ChoiceRule::for_agent(s, alpha, n, &agent(0, crowd, served)).unwrap();
            prop_assert!((rule.total(n) - 1.0).abs() < 1e-12);
            let random = ChoiceRule::for_agent(Strategy::Random, alpha, n, &agent(0, crowd, served)).unwrap();
            prop_assert!((random.total(n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_stay_frequency_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 100_000u32;
        for (s, alpha, crowd, served) in [
            (Strategy::CrowdAvoiding, 1.0, 3, false),
            (Strategy::CrowdAvoiding, 0.5, 5, false),
            (Strategy::CrowdAvoiding, 2.0, 2, true),
            (Strategy::GreedyCrowdAvoiding, 1.0, 4, false),
            (Strategy::GreedyCrowdAvoiding, 1.0, 4, true),
        ] {
            let a = agent(11, crowd, served);
            let p = stay_probability(s, alpha, crowd, served).unwrap();
            let stays = (0..draws)
                .filter(|_| sample_choice(&a, s, alpha, 40, &mut rng) == 11)
                .count() as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let freq = stays / draws as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se + 1e-12,
                "{s:?} alpha={alpha} crowd={crowd}: {freq} vs {p}"
            );
        }
    }
}
