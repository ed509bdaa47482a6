//! Bandits over bandits: when the number of changes is unknown, an EXP3
//! meta-learner picks the common restart period for each epoch from a
//! geometric ensemble and is paid the players' joint reward.
//!
//! The epoch driver ([`run_epochs`]) only sees a reward callback; it never
//! touches the timeline or its change count.

use rand::{Rng, SeedableRng};

use crate::engine::{
    check_consistency, EpochTag, RoundRecord, Runner, SimulationConfig, SimulationTrace,
};
use crate::environment::MeanRewardTimeline;
use crate::error::{Error, Result};
use crate::market::MarketInstance;
use crate::SimRng;

/// Candidate restart periods `{1, 2, 4, …}` plus the epoch layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochEnsemble {
    pub periods: Vec<usize>,
    pub epoch_length: usize,
    pub epoch_count: usize,
}

fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt().ceil() as usize;
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    while r * r < n {
        r += 1;
    }
    r
}

/// `J = ceil(log2(T) / 2) + 1` periods `2^0 … 2^(J-1)`, epochs of
/// `ceil(sqrt(T))` rounds.
pub fn build_ensemble(horizon: usize) -> Result<EpochEnsemble> {
    if horizon < 2 {
        return Err(Error::input(
            "the meta ensemble needs a horizon of at least 2",
        ));
    }
    let size = (0.5 * (horizon as f64).log2()).ceil() as u32 + 1;
    let periods = (0..size).map(|j| 1usize << j).collect();
    let epoch_length = ceil_sqrt(horizon);
    Ok(EpochEnsemble {
        periods,
        epoch_length,
        epoch_count: horizon.div_ceil(epoch_length),
    })
}

/// Standard EXP3 exploration rate `min(1, sqrt(J ln J / ((e − 1) M)))`.
pub fn exp3_gamma(arms: usize, rounds: usize) -> f64 {
    let j = arms as f64;
    let m = rounds.max(1) as f64;
    (j * j.ln() / ((std::f64::consts::E - 1.0) * m))
        .sqrt()
        .min(1.0)
}

#[derive(Debug, Clone)]
pub struct Exp3State {
    weights: Vec<f64>,
    gamma: f64,
    rng: SimRng,
}

impl Exp3State {
    pub fn new(arms: usize, gamma: f64, rng: SimRng) -> Result<Self> {
        Self::with_weights(vec![1.0; arms], gamma, rng)
    }

    pub fn with_weights(weights: Vec<f64>, gamma: f64, rng: SimRng) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::input("EXP3 needs at least one arm"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::input(format!(
                "exploration rate {gamma} outside [0, 1]"
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::input("EXP3 weights must be positive and finite"));
        }
        Ok(Self {
            weights,
            gamma,
            rng,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `p_j = (1 − γ) w_j / Σw + γ / J`.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        let uniform = self.gamma / self.weights.len() as f64;
        self.weights
            .iter()
            .map(|w| (1.0 - self.gamma) * w / total + uniform)
            .collect()
    }
}

pub fn exp3_select(state: &mut Exp3State) -> usize {
    let probs = state.probabilities();
    let u: f64 = state.rng.random();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left a sliver above the last cumulative sum.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Importance-weighted update of the chosen arm only:
/// `w_j ← w_j · exp(γ · (r / p_j) / J)`.
pub fn exp3_update(state: &mut Exp3State, chosen: usize, reward: f64) -> Result<()> {
    if chosen >= state.weights.len() {
        return Err(Error::input(format!("no EXP3 arm {chosen}")));
    }
    if !(0.0..=1.0).contains(&reward) {
        return Err(Error::input(format!("EXP3 reward {reward} outside [0, 1]")));
    }
    if reward == 0.0 {
        return Ok(());
    }
    let p = state.probabilities()[chosen];
    let arms = state.weights.len() as f64;
    state.weights[chosen] *= (state.gamma * reward / p / arms).exp();
    let max = state.weights.iter().cloned().fold(0.0, f64::max);
    if max > 1e100 {
        // Rescaling leaves the probabilities untouched.
        for w in &mut state.weights {
            *w = (*w / max).max(f64::MIN_POSITIVE);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    /// 1-based.
    pub epoch: usize,
    pub start: usize,
    pub length: usize,
    pub chosen_period: usize,
    pub normalized_reward: f64,
    /// Selection probabilities in force when the period was drawn.
    pub probabilities: Vec<f64>,
}

/// What the meta-learner asks the base algorithm to play.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochPlan {
    pub epoch: usize,
    pub start: usize,
    pub length: usize,
    pub period: usize,
}

/// Drives EXP3 over the epochs of `horizon`. `play` runs the base algorithm
/// for one epoch and returns its reward in `[0, 1]`.
pub fn run_epochs<F>(
    ensemble: &EpochEnsemble,
    horizon: usize,
    state: &mut Exp3State,
    mut play: F,
) -> Result<Vec<EpochSummary>>
where
    F: FnMut(EpochPlan) -> Result<f64>,
{
    let mut out = Vec::with_capacity(ensemble.epoch_count);
    let mut start = 1;
    let mut epoch = 1;
    while start <= horizon {
        let length = ensemble.epoch_length.min(horizon - start + 1);
        let probabilities = state.probabilities();
        let chosen = exp3_select(state);
        let period = ensemble.periods[chosen];
        let reward = play(EpochPlan {
            epoch,
            start,
            length,
            period,
        })?;
        exp3_update(state, chosen, reward)?;
        out.push(EpochSummary {
            epoch,
            start,
            length,
            chosen_period: period,
            normalized_reward: reward,
            probabilities,
        });
        start += length;
        epoch += 1;
    }
    Ok(out)
}

/// RCB with the restart period chosen per epoch by EXP3. Learners restart
/// at every epoch start and every `H` rounds inside the epoch; the
/// meta-reward is the epoch's summed sampled reward over all players,
/// divided by `N · length · μ̄` and clipped to `[0, 1]`.
pub fn run_rcb_meta<R: Rng + ?Sized>(
    config: &SimulationConfig,
    market: &MarketInstance,
    timeline: &MeanRewardTimeline,
    rng: &mut R,
) -> Result<SimulationTrace> {
    check_consistency(config, market, timeline)?;
    let ensemble = build_ensemble(config.horizon)?;
    let gamma = exp3_gamma(ensemble.periods.len(), ensemble.epoch_count);
    let mut state = Exp3State::new(
        ensemble.periods.len(),
        gamma,
        SimRng::seed_from_u64(rng.random()),
    )?;
    let scale = market.n_players() as f64 * timeline.mu_bar();

    let mut runner = Runner::new(config, market, timeline, rng)?;
    let mut rounds = Vec::with_capacity(config.horizon);
    let epochs = run_epochs(&ensemble, config.horizon, &mut state, |plan| {
        play_epoch(&mut runner, &mut rounds, plan, scale)
    })?;

    Ok(SimulationTrace {
        config: config.clone(),
        n_players: market.n_players(),
        n_arms: market.n_arms(),
        mu_bar: timeline.mu_bar(),
        restart_period: None,
        rounds,
        ensemble: Some(ensemble),
        epochs,
        stability_violations: runner.violations,
    })
}

/// Runs one epoch of the base algorithm and returns its normalized reward.
fn play_epoch<R: Rng + ?Sized>(
    runner: &mut Runner<'_, R>,
    rounds: &mut Vec<RoundRecord>,
    plan: EpochPlan,
    scale: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for offset in 0..plan.length {
        let mut record = runner.step(offset % plan.period == 0)?;
        record.epoch = Some(EpochTag {
            index: plan.epoch,
            chosen_period: plan.period,
        });
        total += record.players.iter().map(|p| p.reward).sum::<f64>();
        rounds.push(record);
    }
    Ok((total / (scale * plan.length as f64)).clamp(0.0, 1.0))
}

/// The meta run's reference policy: the same epoch layout and resets, with
/// `period` played in every epoch instead of an EXP3 draw. Its trace has
/// the same shape as a meta trace; the epoch probabilities are all 0 except
/// a 1 for `period`.
pub fn run_fixed_member<R: Rng + ?Sized>(
    config: &SimulationConfig,
    market: &MarketInstance,
    timeline: &MeanRewardTimeline,
    period: usize,
    rng: &mut R,
) -> Result<SimulationTrace> {
    check_consistency(config, market, timeline)?;
    let ensemble = build_ensemble(config.horizon)?;
    let member = ensemble
        .periods
        .iter()
        .position(|&h| h == period)
        .ok_or_else(|| Error::input(format!("{period} is not an ensemble period")))?;
    // Consume the same draw as the meta run so both share the reward stream.
    let _: u64 = rng.random();
    let scale = market.n_players() as f64 * timeline.mu_bar();

    let mut runner = Runner::new(config, market, timeline, rng)?;
    let mut rounds = Vec::with_capacity(config.horizon);
    let mut epochs = Vec::with_capacity(ensemble.epoch_count);
    let mut start = 1;
    while start <= config.horizon {
        let plan = EpochPlan {
            epoch: epochs.len() + 1,
            start,
            length: ensemble.epoch_length.min(config.horizon - start + 1),
            period,
        };
        let reward = play_epoch(&mut runner, &mut rounds, plan, scale)?;
        let mut probabilities = vec![0.0; ensemble.periods.len()];
        probabilities[member] = 1.0;
        epochs.push(EpochSummary {
            epoch: plan.epoch,
            start,
            length: plan.length,
            chosen_period: period,
            normalized_reward: reward,
            probabilities,
        });
        start += plan.length;
    }

    Ok(SimulationTrace {
        config: config.clone(),
        n_players: market.n_players(),
        n_arms: market.n_arms(),
        mu_bar: timeline.mu_bar(),
        restart_period: None,
        rounds,
        ensemble: Some(ensemble),
        epochs,
        stability_violations: runner.violations,
    })
}

/// [`run_rcb_meta`] seeded from `config.seed`.
pub fn simulate_meta(
    config: &SimulationConfig,
    market: &MarketInstance,
    timeline: &MeanRewardTimeline,
) -> Result<SimulationTrace> {
    run_rcb_meta(
        config,
        market,
        timeline,
        &mut crate::seeded_rng(config.seed, 0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_rcb, RestartPeriod};
    use crate::environment::NoiseFamily;
    use crate::seeded_rng;

    #[test]
    fn ensemble_layout() {
        let e = build_ensemble(10_000).unwrap();
        assert_eq!(e.periods, vec![1, 2, 4, 8, 16, 32, 64, 128]);
        assert_eq!(e.epoch_length, 100);
        assert_eq!(e.epoch_count, 100);

        let e = build_ensemble(4).unwrap();
        assert_eq!(e.periods, vec![1, 2]);
        assert_eq!(e.epoch_length, 2);
        assert_eq!(e.epoch_count, 2);

        assert_eq!(build_ensemble(10).unwrap().epoch_length, 4);
        assert!(build_ensemble(1).is_err());
    }

    #[test]
    fn ceil_sqrt_is_exact() {
        for n in 1..5000usize {
            let r = ceil_sqrt(n);
            assert!(r * r >= n && (r - 1) * (r - 1) < n, "n = {n}");
        }
    }

    #[test]
    fn uniform_weights_full_exploration() {
        let s = Exp3State::new(4, 1.0, seeded_rng(0, 2)).unwrap();
        assert_eq!(s.probabilities(), vec![0.25; 4]);
    }

    #[test]
    fn dominant_weight_without_exploration() {
        let mut s = Exp3State::with_weights(vec![1.0, 1e300, 1.0], 0.0, seeded_rng(0, 2)).unwrap();
        for _ in 0..1000 {
            assert_eq!(exp3_select(&mut s), 1);
        }
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let mut s = Exp3State::with_weights(vec![1.0, 3.0, 6.0], 0.2, seeded_rng(5, 2)).unwrap();
        let p = s.probabilities();
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[exp3_select(&mut s)] += 1;
        }
        for j in 0..3 {
            assert!((counts[j] as f64 / n as f64 - p[j]).abs() < 0.01);
        }
    }

    #[test]
    fn zero_reward_leaves_weights() {
        let mut s = Exp3State::new(3, 0.3, seeded_rng(0, 2)).unwrap();
        exp3_update(&mut s, 1, 0.0).unwrap();
        assert_eq!(s.weights(), &[1.0, 1.0, 1.0]);
        assert!(exp3_update(&mut s, 1, 1.5).is_err());
        assert!(exp3_update(&mut s, 1, -0.1).is_err());
        assert!(exp3_update(&mut s, 7, 0.5).is_err());
    }

    #[test]
    fn rewarded_arm_approaches_its_ceiling() {
        let gamma = 0.1;
        let mut s = Exp3State::new(2, gamma, seeded_rng(0, 2)).unwrap();
        let mut last = s.probabilities()[0];
        for _ in 0..1000 {
            exp3_update(&mut s, 0, 1.0).unwrap();
            exp3_update(&mut s, 1, 0.0).unwrap();
            let p = s.probabilities();
            assert!(p[0] >= last - 1e-15);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            last = p[0];
        }
        assert!((last - (1.0 - gamma / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn gamma_tuning() {
        let g = exp3_gamma(8, 100);
        let expected = (8.0 * 8f64.ln() / ((std::f64::consts::E - 1.0) * 100.0)).sqrt();
        assert!((g - expected).abs() < 1e-15);
        assert_eq!(exp3_gamma(8, 1), 1.0);
    }

    fn small_instance(horizon: usize) -> (MarketInstance, MeanRewardTimeline) {
        let market =
            MarketInstance::new(2, 3, vec![vec![2.0, 1.0], vec![1.0, 2.0], vec![2.0, 1.0]])
                .unwrap();
        let tl = MeanRewardTimeline::stationary(
            horizon,
            vec![vec![0.9, 0.5, 0.1], vec![0.8, 0.2, 0.6]],
            1.0,
        )
        .unwrap();
        (market, tl)
    }

    #[test]
    fn meta_trace_structure() {
        let (market, tl) = small_instance(1000);
        let config = SimulationConfig::new(1000)
            .with_seed(4)
            .with_certification(true);
        let trace = simulate_meta(&config, &market, &tl).unwrap();
        assert_eq!(trace.rounds.len(), 1000);
        assert_eq!(trace.epochs.len(), 32);
        assert_eq!(trace.stability_violations, 0);
        for e in &trace.epochs {
            assert!((0.0..=1.0).contains(&e.normalized_reward));
            assert!((e.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for r in &trace.rounds[e.start - 1..e.start - 1 + e.length] {
                let offset = r.t - e.start;
                assert_eq!(r.restart, offset % e.chosen_period == 0);
                assert_eq!(
                    r.epoch,
                    Some(EpochTag {
                        index: e.epoch,
                        chosen_period: e.chosen_period
                    })
                );
            }
        }
        assert_eq!(
            simulate_meta(&config, &market, &tl).unwrap(),
            trace,
            "same seed, same trace"
        );
    }

    #[test]
    fn single_epoch_matches_fixed_period_run() {
        // ceil(sqrt(T)) = T only for T = 2.
        let (market, tl) = small_instance(2);
        let config = SimulationConfig::new(2)
            .with_seed(3)
            .with_noise(NoiseFamily::Gaussian);
        let meta = simulate_meta(&config, &market, &tl).unwrap();
        assert_eq!(meta.epochs.len(), 1);
        let h = meta.epochs[0].chosen_period;

        let mut rng = seeded_rng(3, 0);
        let _: u64 = rng.random();
        let fixed = run_rcb(
            &config.clone().with_restart_period(RestartPeriod::Fixed(h)),
            &market,
            &tl,
            &mut rng,
        )
        .unwrap();
        for (a, b) in meta.rounds.iter().zip(&fixed.rounds) {
            assert_eq!(a.matching, b.matching);
            assert_eq!(a.players, b.players);
            assert_eq!(a.restart, b.restart);
        }
    }
}
