//! Per-player UCB learner with restarts.
//!
//! Statistics only cover the current block, i.e. the rounds since the last
//! restart. `rounds_since_restart` (τ) is bumped at the start of every
//! decision, so the first decision after a restart sees τ = 1 and the
//! confidence term `ln τ` is never evaluated at zero.

use std::cmp::Ordering;

use crate::market::RankOrdering;

/// An upper confidence bound. `Unexplored` sorts above every finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UcbValue {
    Finite(f64),
    Unexplored,
}

impl PartialOrd for UcbValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (UcbValue::Unexplored, UcbValue::Unexplored) => Some(Ordering::Equal),
            (UcbValue::Unexplored, UcbValue::Finite(_)) => Some(Ordering::Greater),
            (UcbValue::Finite(_), UcbValue::Unexplored) => Some(Ordering::Less),
            (UcbValue::Finite(a), UcbValue::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl UcbValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            UcbValue::Finite(v) => Some(v),
            UcbValue::Unexplored => None,
        }
    }
}

/// `sqrt(3 ln τ / (2 n))`.
pub fn confidence_bonus(rounds_since_restart: u64, pulls: u64) -> f64 {
    debug_assert!(pulls > 0);
    (3.0 * (rounds_since_restart as f64).ln() / (2.0 * pulls as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcbState {
    owner: usize,
    pull_counts: Vec<u64>,
    reward_sums: Vec<f64>,
    rounds_since_restart: u64,
}

impl UcbState {
    pub fn new(owner: usize, n_arms: usize) -> Self {
        Self {
            owner,
            pull_counts: vec![0; n_arms],
            reward_sums: vec![0.0; n_arms],
            rounds_since_restart: 0,
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn n_arms(&self) -> usize {
        self.pull_counts.len()
    }

    pub fn pull_counts(&self) -> &[u64] {
        &self.pull_counts
    }

    pub fn reward_sums(&self) -> &[f64] {
        &self.reward_sums
    }

    pub fn rounds_since_restart(&self) -> u64 {
        self.rounds_since_restart
    }

    pub fn restart(&mut self) {
        self.pull_counts.fill(0);
        self.reward_sums.fill(0.0);
        self.rounds_since_restart = 0;
    }

    /// Advances τ ahead of a decision.
    pub fn begin_round(&mut self) {
        self.rounds_since_restart += 1;
    }

    pub fn observe(&mut self, arm: usize, reward: f64) {
        self.pull_counts[arm] += 1;
        self.reward_sums[arm] += reward;
    }

    pub fn empirical_mean(&self, arm: usize) -> Option<f64> {
        match self.pull_counts[arm] {
            0 => None,
            n => Some(self.reward_sums[arm] / n as f64),
        }
    }

    pub fn ucb_values(&self) -> Vec<UcbValue> {
        (0..self.n_arms())
            .map(|arm| match self.pull_counts[arm] {
                0 => UcbValue::Unexplored,
                n => UcbValue::Finite(
                    self.reward_sums[arm] / n as f64
                        + confidence_bonus(self.rounds_since_restart.max(1), n),
                ),
            })
            .collect()
    }

    /// Arms by descending UCB, ties broken by ascending arm index.
    pub fn rank_ordering(&self) -> RankOrdering {
        RankOrdering::from_scores(self.owner, &self.ucb_values())
    }
}
