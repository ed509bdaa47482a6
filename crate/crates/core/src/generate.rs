//! Random market instances for experiments.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::environment::{ChangeEvent, MeanRewardTimeline};
use crate::error::{Error, Result};
use crate::market::MarketInstance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub n_players: usize,
    pub n_arms: usize,
    pub horizon: usize,
    pub mu_bar: f64,
    /// Floor on the gap between any two of a player's means.
    pub min_gap: f64,
    /// Exact number of change events `L`.
    pub changes: usize,
}

impl GeneratorSpec {
    pub fn check(&self) -> Result<()> {
        if self.n_players == 0 || self.n_arms < self.n_players {
            return Err(Error::Infeasible(format!(
                "market requires K ≥ N ≥ 1 (got N = {}, K = {})",
                self.n_players, self.n_arms
            )));
        }
        if !(self.min_gap > 0.0 && self.mu_bar > 0.0) {
            return Err(Error::Infeasible(
                "gap floor and mean bound must be positive".into(),
            ));
        }
        if self.n_arms as f64 * self.min_gap > self.mu_bar {
            return Err(Error::Infeasible(format!(
                "gap floor {} is too large for {} arms in [0, {}]: need K·Δ ≤ μ̄",
                self.min_gap, self.n_arms, self.mu_bar
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Infeasible("horizon must be at least 1".into()));
        }
        if self.changes > self.horizon - 1 {
            return Err(Error::Infeasible(format!(
                "{} changes do not fit in the {} rounds 2..={}",
                self.changes,
                self.horizon.saturating_sub(1),
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Draws a market and a timeline with exactly `spec.changes` events.
///
/// Arm utilities are random permutations of `1..=N`. Each player's initial
/// means are spread over `[0, μ̄]` with pairwise gaps of at least the floor.
/// Change rounds are distinct, uniform over `[2, T]`, and placed through
/// uniform fractions of the horizon so one seed gives the same relative
/// positions at every `T`. Each change moves one cell of a random player,
/// preferring values that reorder that player's arms.
pub fn generate_instance<R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    rng: &mut R,
) -> Result<(MarketInstance, MeanRewardTimeline)> {
    spec.check()?;
    let (n, k) = (spec.n_players, spec.n_arms);

    let utilities = (0..k)
        .map(|_| {
            let mut row: Vec<f64> = (1..=n).map(|u| u as f64).collect();
            row.shuffle(rng);
            row
        })
        .collect();
    let market = MarketInstance::new(n, k, utilities)?;

    let initial: Vec<Vec<f64>> = (0..n).map(|_| spread_means(spec, rng)).collect();

    let mut times = Vec::with_capacity(spec.changes);
    let span = (spec.horizon - 1) as f64;
    while times.len() < spec.changes {
        let u: f64 = rng.random();
        let t = (2 + (u * span) as usize).min(spec.horizon);
        if !times.contains(&t) {
            times.push(t);
        }
    }
    times.sort_unstable();

    let mut current = initial.clone();
    let mut events = Vec::with_capacity(spec.changes);
    for &time in &times {
        let (player, arm, new_mean) = draw_change(spec, &current, rng)?;
        current[player][arm] = new_mean;
        events.push(ChangeEvent {
            time,
            player,
            arm,
            new_mean,
        });
    }

    let timeline = MeanRewardTimeline::new(spec.horizon, initial, events, spec.mu_bar)?;
    Ok((market, timeline))
}

fn spread_means<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Vec<f64> {
    let k = spec.n_arms;
    let slack = spec.mu_bar - (k - 1) as f64 * spec.min_gap;
    let mut offsets: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * slack).collect();
    offsets.sort_by(f64::total_cmp);
    let mut means: Vec<f64> = offsets
        .iter()
        .enumerate()
        .map(|(r, o)| (o + r as f64 * spec.min_gap).min(spec.mu_bar))
        .collect();
    means.shuffle(rng);
    means
}

/// Closed sub-intervals of `[0, μ̄]` at distance ≥ Δ from every value in
/// `others`.
fn feasible_intervals(others: &[f64], spec: &GeneratorSpec) -> Vec<(f64, f64)> {
    let mut blocked: Vec<(f64, f64)> = others
        .iter()
        .map(|&o| (o - spec.min_gap, o + spec.min_gap))
        .collect();
    blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut lo = 0.0;
    for (a, b) in blocked {
        if a >= lo && a <= spec.mu_bar {
            out.push((lo, a));
        }
        lo = f64::max(lo, b);
    }
    if lo <= spec.mu_bar {
        out.push((lo, spec.mu_bar));
    }
    out
}

const MAX_ATTEMPTS: usize = 10_000;

fn draw_change<R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    current: &[Vec<f64>],
    rng: &mut R,
) -> Result<(usize, usize, f64)> {
    for _ in 0..MAX_ATTEMPTS {
        let player = rng.random_range(0..spec.n_players);
        let arm = rng.random_range(0..spec.n_arms);
        let old = current[player][arm];
        let others: Vec<f64> = current[player]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != arm)
            .map(|(_, &m)| m)
            .collect();
        let intervals = feasible_intervals(&others, spec);
        let (home, away): (Vec<_>, Vec<_>) = intervals
            .into_iter()
            .partition(|&(a, b)| a <= old && old <= b);
        let pool = if away.is_empty() { home } else { away };
        let total: f64 = pool.iter().map(|(a, b)| b - a).sum();
        let (a, b) = if total > 0.0 {
            let mut pick = rng.random::<f64>() * total;
            *pool
                .iter()
                .find(|(a, b)| {
                    pick -= b - a;
                    pick <= 0.0
                })
                .unwrap_or(pool.last().expect("non-empty pool"))
        } else if !pool.is_empty() {
            pool[rng.random_range(0..pool.len())]
        } else {
            continue;
        };
        let new_mean = a + rng.random::<f64>() * (b - a);
        if new_mean != old && others.iter().all(|&o| o != new_mean) {
            return Ok((player, arm, new_mean));
        }
    }
    Err(Error::Infeasible(
        "could not place a change that respects the gap floor".into(),
    ))
}
