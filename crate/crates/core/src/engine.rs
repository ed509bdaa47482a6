//! The RCB loop: synchronized restarts, UCB orderings, player-proposing
//! clearing, reward dispatch and agent-stable regret accounting.

use rand::Rng;

use crate::environment::{segment_benchmarks, MeanRewardTimeline, NoiseFamily, SegmentBenchmark};
use crate::error::{Error, Result};
use crate::learner::UcbState;
use crate::market::{
    deferred_acceptance, is_stable, MarketInstance, Matching, ProposingSide, RankOrdering,
};
use crate::meta::{EpochEnsemble, EpochSummary};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RestartPeriod {
    /// Derive `H` from the horizon and the timeline's change count.
    #[default]
    Auto,
    Fixed(usize),
}

/// Which stable benchmark regret is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    #[default]
    Pessimal,
    Optimal,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Pessimal => "pessimal",
            Baseline::Optimal => "optimal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pessimal" => Some(Baseline::Pessimal),
            "optimal" => Some(Baseline::Optimal),
            _ => None,
        }
    }
}

pub const DEBUG_CERTIFY_HORIZON: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub horizon: usize,
    pub restart_period: RestartPeriod,
    pub seed: u64,
    pub noise: NoiseFamily,
    pub baseline: Baseline,
    /// Re-check every cleared matching for blocking pairs against the
    /// submitted orderings and count violations in the trace. Debug builds
    /// always re-check runs of at most [`DEBUG_CERTIFY_HORIZON`] rounds.
    pub certify_stability: bool,
}

impl SimulationConfig {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            restart_period: RestartPeriod::Auto,
            seed: 0,
            noise: NoiseFamily::Gaussian,
            baseline: Baseline::Pessimal,
            certify_stability: false,
        }
    }

    pub fn with_restart_period(mut self, period: RestartPeriod) -> Self {
        self.restart_period = period;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, noise: NoiseFamily) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_baseline(mut self, baseline: Baseline) -> Self {
        self.baseline = baseline;
        self
    }

    pub fn with_certification(mut self, on: bool) -> Self {
        self.certify_stability = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        if self.restart_period == RestartPeriod::Fixed(0) {
            return Err(Error::input("restart period must be at least 1"));
        }
        Ok(())
    }
}

/// `H = round(sqrt(T / L_T))` clamped to `[1, T]`; `H = T` when nothing
/// changes.
pub fn compute_restart_period(horizon: usize, changes: usize) -> usize {
    let horizon = horizon.max(1);
    if changes == 0 {
        return horizon;
    }
    let h = (horizon as f64 / changes as f64).sqrt().round() as usize;
    h.clamp(1, horizon)
}

/// What happened to one player in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerRound {
    pub arm: usize,
    pub reward: f64,
    /// True mean of the matched arm.
    pub mean: f64,
    pub optimal_arm: usize,
    pub optimal_mean: f64,
    pub pessimal_arm: usize,
    pub pessimal_mean: f64,
}

impl PlayerRound {
    pub fn benchmark_arm(&self, baseline: Baseline) -> usize {
        match baseline {
            Baseline::Pessimal => self.pessimal_arm,
            Baseline::Optimal => self.optimal_arm,
        }
    }

    /// Regret increment against the true mean of the benchmark arm.
    pub fn regret(&self, baseline: Baseline) -> f64 {
        let reference = match baseline {
            Baseline::Pessimal => self.pessimal_mean,
            Baseline::Optimal => self.optimal_mean,
        };
        reference - self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochTag {
    /// 1-based epoch number.
    pub index: usize,
    pub chosen_period: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    /// 1-based index of the restart block containing `t`.
    pub block_index: usize,
    pub restart: bool,
    pub matching: Matching,
    pub players: Vec<PlayerRound>,
    pub epoch: Option<EpochTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub config: SimulationConfig,
    pub n_players: usize,
    pub n_arms: usize,
    pub mu_bar: f64,
    /// Fixed restart period used for the run; `None` for meta runs.
    pub restart_period: Option<usize>,
    pub rounds: Vec<RoundRecord>,
    /// Restart-period ensemble and per-epoch decisions (meta runs only).
    pub ensemble: Option<EpochEnsemble>,
    pub epochs: Vec<EpochSummary>,
    /// Rounds whose matching had a blocking pair w.r.t. the submitted
    /// orderings. Only counted when certification is on.
    pub stability_violations: usize,
}

impl SimulationTrace {
    /// Final cumulative regret per player.
    pub fn final_regret(&self, baseline: Baseline) -> Vec<f64> {
        let mut total = vec![0.0; self.n_players];
        for r in &self.rounds {
            for (acc, p) in total.iter_mut().zip(&r.players) {
                *acc += p.regret(baseline);
            }
        }
        total
    }

    pub fn max_player_regret(&self, baseline: Baseline) -> f64 {
        self.final_regret(baseline)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Regret summed over players.
    pub fn joint_regret(&self, baseline: Baseline) -> f64 {
        self.final_regret(baseline).iter().sum()
    }

    /// Sum of sampled rewards over all players and rounds.
    pub fn total_sampled_reward(&self) -> f64 {
        self.rounds
            .iter()
            .flat_map(|r| r.players.iter().map(|p| p.reward))
            .sum()
    }
}

/// Partial regret sums over one restart block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRegret {
    pub block_index: usize,
    pub start: usize,
    pub end: usize,
    pub regret: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub baseline: Baseline,
    /// `curves[i][t - 1]` is player `i`'s cumulative regret after round `t`.
    pub curves: Vec<Vec<f64>>,
    pub blocks: Vec<BlockRegret>,
}

impl RegretReport {
    pub fn final_regret(&self) -> Vec<f64> {
        self.curves
            .iter()
            .map(|c| c.last().copied().unwrap_or(0.0))
            .collect()
    }
}

/// Cumulative agent-stable regret curves measured with true means, plus
/// per-block partial sums.
pub fn regret_report(trace: &SimulationTrace, baseline: Baseline) -> RegretReport {
    let mut curves = vec![Vec::with_capacity(trace.rounds.len()); trace.n_players];
    let mut running = vec![0.0; trace.n_players];
    let mut blocks: Vec<BlockRegret> = Vec::new();
    for r in &trace.rounds {
        if blocks.last().is_none_or(|b| b.block_index != r.block_index) {
            blocks.push(BlockRegret {
                block_index: r.block_index,
                start: r.t,
                end: r.t,
                regret: vec![0.0; trace.n_players],
            });
        }
        let block = blocks.last_mut().expect("pushed above");
        block.end = r.t;
        for (i, p) in r.players.iter().enumerate() {
            let inc = p.regret(baseline);
            running[i] += inc;
            block.regret[i] += inc;
            curves[i].push(running[i]);
        }
    }
    RegretReport {
        baseline,
        curves,
        blocks,
    }
}

/// The platform: submitted orderings in, player-optimal stable matching out.
pub fn clear_market(orderings: &[RankOrdering], market: &MarketInstance) -> Result<Matching> {
    deferred_acceptance(orderings, market, ProposingSide::Players)
}

pub(crate) fn check_consistency(
    config: &SimulationConfig,
    market: &MarketInstance,
    timeline: &MeanRewardTimeline,
) -> Result<()> {
    config.validate()?;
    if config.horizon != timeline.horizon() {
        return Err(Error::input(format!(
            "config horizon {} differs from timeline horizon {}",
            config.horizon,
            timeline.horizon()
        )));
    }
    if market.n_players() != timeline.n_players() || market.n_arms() != timeline.n_arms() {
        return Err(Error::input(format!(
            "market is {}×{} but timeline is {}×{}",
            market.n_players(),
            market.n_arms(),
            timeline.n_players(),
            timeline.n_arms()
        )));
    }
    Ok(())
}

/// Round-by-round RCB state shared by the fixed-period and meta drivers.
pub(crate) struct Runner<'a, R: Rng + ?Sized> {
    market: &'a MarketInstance,
    timeline: &'a MeanRewardTimeline,
    benchmarks: Vec<SegmentBenchmark>,
    segment: usize,
    learners: Vec<UcbState>,
    noise: NoiseFamily,
    certify: bool,
    rng: &'a mut R,
    t: usize,
    block_index: usize,
    pub(crate) violations: usize,
}

impl<'a, R: Rng + ?Sized> Runner<'a, R> {
    pub(crate) fn new(
        config: &SimulationConfig,
        market: &'a MarketInstance,
        timeline: &'a MeanRewardTimeline,
        rng: &'a mut R,
    ) -> Result<Self> {
        Ok(Self {
            market,
            timeline,
            benchmarks: segment_benchmarks(timeline, market)?,
            segment: 0,
            learners: (0..market.n_players())
                .map(|i| UcbState::new(i, market.n_arms()))
                .collect(),
            noise: config.noise,
            certify: config.certify_stability
                || (cfg!(debug_assertions) && config.horizon <= DEBUG_CERTIFY_HORIZON),
            rng,
            t: 0,
            block_index: 0,
            violations: 0,
        })
    }

    /// Plays the next round, restarting every learner first when asked.
    pub(crate) fn step(&mut self, restart: bool) -> Result<RoundRecord> {
        self.t += 1;
        let t = self.t;
        if restart || self.block_index == 0 {
            for l in &mut self.learners {
                l.restart();
            }
            self.block_index += 1;
        }
        while self.benchmarks[self.segment].end < t {
            self.segment += 1;
        }
        let bench = &self.benchmarks[self.segment];
        let means = &self.timeline.segments()[self.segment].means;

        let orderings: Vec<RankOrdering> = self
            .learners
            .iter_mut()
            .map(|l| {
                l.begin_round();
                l.rank_ordering()
            })
            .collect();
        let matching = clear_market(&orderings, self.market)?;
        if self.certify && !is_stable(&matching, &orderings, self.market) {
            self.violations += 1;
        }

        let mut players = Vec::with_capacity(self.learners.len());
        for (i, learner) in self.learners.iter_mut().enumerate() {
            let arm = matching.arm_of(i);
            let mean = means[i][arm];
            let reward = self.noise.sample(mean, &mut *self.rng);
            learner.observe(arm, reward);
            let (optimal_arm, pessimal_arm) = (bench.optimal.arm_of(i), bench.pessimal.arm_of(i));
            players.push(PlayerRound {
                arm,
                reward,
                mean,
                optimal_arm,
                optimal_mean: means[i][optimal_arm],
                pessimal_arm,
                pessimal_mean: means[i][pessimal_arm],
            });
        }

        Ok(RoundRecord {
            t,
            block_index: self.block_index,
            restart,
            matching,
            players,
            epoch: None,
        })
    }

    #[cfg(test)]
    pub(crate) fn learners(&self) -> &[UcbState] {
        &self.learners
    }
}

/// Runs RCB with a fixed (or change-count derived) common restart period.
/// Restarts happen at rounds `t ≡ 1 (mod H)`.
pub fn run_rcb<R: Rng + ?Sized>(
    config: &SimulationConfig,
    market: &MarketInstance,
    timeline: &MeanRewardTimeline,
    rng: &mut R,
) -> Result<SimulationTrace> {
    check_consistency(config, market, timeline)?;
    let period = match config.restart_period {
        RestartPeriod::Fixed(h) => h,
        RestartPeriod::Auto => compute_restart_period(config.horizon, timeline.total_changes()),
    };
    let mut runner = Runner::new(config, market, timeline, rng)?;
    let mut rounds = Vec::with_capacity(config.horizon);
    for t in 1..=config.horizon {
        rounds.push(runner.step((t - 1) % period == 0)?);
    }
    Ok(SimulationTrace {
        config: config.clone(),
        n_players: market.n_players(),
        n_arms: market.n_arms(),
        mu_bar: timeline.mu_bar(),
        restart_period: Some(period),
        rounds,
        ensemble: None,
        epochs: Vec::new(),
        stability_violations: runner.violations,
    })
}

/// [`run_rcb`] with the generator derived from `config.seed`; a pure
/// function of its arguments, suitable for parallel sweeps.
pub fn simulate(
    config: &SimulationConfig,
    market: &MarketInstance,
    timeline: &MeanRewardTimeline,
) -> Result<SimulationTrace> {
    run_rcb(config, market, timeline, &mut seeded_rng(config.seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::ChangeEvent;

    fn conflict_market() -> MarketInstance {
        MarketInstance::new(2, 2, vec![vec![2.0, 1.0], vec![2.0, 1.0]]).unwrap()
    }

    #[test]
    fn restart_period_formula() {
        assert_eq!(compute_restart_period(10_000, 4), 50);
        assert_eq!(compute_restart_period(777, 0), 777);
        assert_eq!(compute_restart_period(100, 10_000), 1);
        assert_eq!(compute_restart_period(5000, 1), 71);
        assert_eq!(compute_restart_period(10, 1), 3);
    }

    #[test]
    fn single_player_concentrates_on_best_arm() {
        let market = MarketInstance::new(1, 2, vec![vec![1.0], vec![1.0]]).unwrap();
        let tl = MeanRewardTimeline::stationary(2000, vec![vec![0.3, 0.8]], 1.0).unwrap();
        let config = SimulationConfig::new(2000)
            .with_restart_period(RestartPeriod::Fixed(2000))
            .with_noise(NoiseFamily::None);
        let trace = simulate(&config, &market, &tl).unwrap();
        let arms: Vec<usize> = trace.rounds.iter().map(|r| r.players[0].arm).collect();
        assert_eq!(&arms[..3], &[0, 1, 1]);
        let worse = arms.iter().filter(|&&a| a == 0).count();
        assert!(worse < 100, "worse arm pulled {worse} times");
        let regret = trace.final_regret(Baseline::Pessimal)[0];
        assert!((regret - 0.5 * worse as f64).abs() < 1e-9);
    }

    #[test]
    fn conflict_market_hand_simulation() {
        // Both players prefer arm 0; arm 0 prefers p0.
        let market = conflict_market();
        let tl = MeanRewardTimeline::stationary(2000, vec![vec![0.9, 0.2], vec![0.7, 0.4]], 1.0)
            .unwrap();
        let config = SimulationConfig::new(2000)
            .with_restart_period(RestartPeriod::Fixed(2000))
            .with_noise(NoiseFamily::None)
            .with_certification(true);
        let trace = simulate(&config, &market, &tl).unwrap();
        // Round 1: both unexplored, both propose to arm 0, p0 wins.
        assert_eq!(trace.rounds[0].matching.assignment(), &[0, 1]);
        // Round 2: p0 has a0 explored, a1 not; it proposes a1 first. p1 ranks a0 first.
        assert_eq!(trace.rounds[1].matching.assignment(), &[1, 0]);
        // Round 3: p0 ranks a0 (0.9 + bonus) over a1 (0.2 + bonus) and takes it.
        assert_eq!(trace.rounds[2].matching.assignment(), &[0, 1]);
        for p in &trace.rounds[2].players {
            assert!(p.regret(Baseline::Pessimal) <= 0.0);
        }
        // Afterwards the growing ln τ bonus makes p0 revisit a1 now and then,
        // a logarithmic number of times.
        let off = |rounds: &[RoundRecord]| {
            rounds
                .iter()
                .filter(|r| r.matching.assignment() != [0, 1])
                .count()
        };
        let early = off(&trace.rounds[2..200]);
        let all = off(&trace.rounds[2..]);
        assert!(early >= 1);
        assert!(
            all < 2 * early + 10,
            "{early} early vs {all} total deviations"
        );
        assert!((all as f64) < 0.02 * 2000.0);
        assert_eq!(trace.stability_violations, 0);
    }

    #[test]
    fn restart_flags_and_blocks() {
        let market = conflict_market();
        let tl =
            MeanRewardTimeline::stationary(23, vec![vec![0.9, 0.2], vec![0.7, 0.4]], 1.0).unwrap();
        let config = SimulationConfig::new(23).with_restart_period(RestartPeriod::Fixed(5));
        let trace = simulate(&config, &market, &tl).unwrap();
        for r in &trace.rounds {
            assert_eq!(r.restart, r.t % 5 == 1, "round {}", r.t);
            assert_eq!(r.block_index, (r.t - 1) / 5 + 1);
        }
        let report = regret_report(&trace, Baseline::Pessimal);
        assert_eq!(report.blocks.len(), 5);
        assert_eq!((report.blocks[4].start, report.blocks[4].end), (21, 23));
        for i in 0..2 {
            let from_blocks: f64 = report.blocks.iter().map(|b| b.regret[i]).sum();
            assert!((from_blocks - report.final_regret()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn pull_counts_track_block_rounds() {
        let market = conflict_market();
        let tl =
            MeanRewardTimeline::stationary(17, vec![vec![0.9, 0.2], vec![0.7, 0.4]], 1.0).unwrap();
        let config = SimulationConfig::new(17);
        let mut rng = seeded_rng(1, 0);
        let mut runner = Runner::new(&config, &market, &tl, &mut rng).unwrap();
        for t in 1..=17usize {
            runner.step((t - 1) % 4 == 0).unwrap();
            let elapsed = (t - 1) % 4 + 1;
            for l in runner.learners() {
                assert_eq!(l.pull_counts().iter().sum::<u64>(), elapsed as u64);
                assert_eq!(l.rounds_since_restart(), elapsed as u64);
            }
        }
    }

    #[test]
    fn regret_uses_true_means_and_benchmarks() {
        let market = conflict_market();
        let tl = MeanRewardTimeline::new(
            40,
            vec![vec![0.9, 0.2], vec![0.7, 0.4]],
            vec![ChangeEvent {
                time: 20,
                player: 0,
                arm: 1,
                new_mean: 0.95,
            }],
            1.0,
        )
        .unwrap();
        let config = SimulationConfig::new(40).with_restart_period(RestartPeriod::Fixed(8));
        let trace = simulate(&config, &market, &tl).unwrap();
        let pess = regret_report(&trace, Baseline::Pessimal);
        let opt = regret_report(&trace, Baseline::Optimal);
        for r in &trace.rounds {
            let means = tl.means_at(r.t).unwrap();
            for (i, p) in r.players.iter().enumerate() {
                assert_eq!(p.mean, means[i][p.arm]);
                assert!(p.regret(Baseline::Optimal) >= p.regret(Baseline::Pessimal));
            }
        }
        for i in 0..2 {
            for t in 0..40 {
                assert!(opt.curves[i][t] >= pess.curves[i][t] - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let market = conflict_market();
        let tl =
            MeanRewardTimeline::stationary(10, vec![vec![0.9, 0.2], vec![0.7, 0.4]], 1.0).unwrap();
        assert!(simulate(&SimulationConfig::new(11), &market, &tl).is_err());
        let zero = SimulationConfig::new(10).with_restart_period(RestartPeriod::Fixed(0));
        assert!(simulate(&zero, &market, &tl).is_err());
        let wide = MarketInstance::new(2, 3, vec![vec![2.0, 1.0]; 3]).unwrap();
        assert!(simulate(&SimulationConfig::new(10), &wide, &tl).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let market = conflict_market();
        let tl =
            MeanRewardTimeline::stationary(200, vec![vec![0.9, 0.2], vec![0.7, 0.4]], 1.0).unwrap();
        let config = SimulationConfig::new(200).with_seed(9);
        assert_eq!(
            simulate(&config, &market, &tl).unwrap(),
            simulate(&config, &market, &tl).unwrap()
        );
        let other = simulate(&config.clone().with_seed(10), &market, &tl).unwrap();
        assert_ne!(
            simulate(&config, &market, &tl).unwrap().rounds,
            other.rounds
        );
    }
}
