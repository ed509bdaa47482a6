//! Ground truth for a simulation: piecewise-constant mean rewards, the
//! change count `L_T`, the minimum gap `Δ`, noisy reward draws and the
//! per-round stable benchmarks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::market::{optimal_pessimal, MarketInstance, Matching, RankOrdering};

/// A single cell of the mean matrix taking a new value from round `time` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeEvent {
    pub time: usize,
    pub player: usize,
    pub arm: usize,
    pub new_mean: f64,
}

/// Maximal run of rounds `start..=end` over which the means are constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub means: Vec<Vec<f64>>,
}

/// Validated, immutable schedule of `μ_{i,t}(k)` for rounds `1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRewardTimeline {
    horizon: usize,
    initial_means: Vec<Vec<f64>>,
    events: Vec<ChangeEvent>,
    mu_bar: f64,
    segments: Vec<Segment>,
    min_gap: f64,
}

impl MeanRewardTimeline {
    /// Builds and validates a timeline. `events` may come in any order; they
    /// are sorted by time (stable). Rejects events outside `[2, horizon]`,
    /// events that do not change the mean in force, means outside
    /// `[0, mu_bar]` and segments where a player has two equal means.
    pub fn new(
        horizon: usize,
        initial_means: Vec<Vec<f64>>,
        mut events: Vec<ChangeEvent>,
        mu_bar: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        if !(mu_bar.is_finite() && mu_bar > 0.0) {
            return Err(Error::input(format!(
                "mu_bar must be positive, got {mu_bar}"
            )));
        }
        let n_players = initial_means.len();
        if n_players == 0 {
            return Err(Error::input("initial means need at least one player"));
        }
        let n_arms = initial_means[0].len();
        if n_arms == 0 || initial_means.iter().any(|row| row.len() != n_arms) {
            return Err(Error::input(
                "initial means must be a non-empty rectangular matrix",
            ));
        }

        events.sort_by_key(|e| e.time);
        for (idx, e) in events.iter().enumerate() {
            if e.time < 2 || e.time > horizon {
                return Err(Error::input(format!(
                    "change event {idx} at round {} lies outside [2, {horizon}]",
                    e.time
                )));
            }
            if e.player >= n_players || e.arm >= n_arms {
                return Err(Error::input(format!(
                    "change event {idx} refers to cell ({}, {}) outside {n_players}×{n_arms}",
                    e.player, e.arm
                )));
            }
            if !e.new_mean.is_finite() {
                return Err(Error::input(format!(
                    "change event {idx} has a non-finite mean"
                )));
            }
        }

        let mut segments = Vec::with_capacity(events.len() + 1);
        let mut current = initial_means.clone();
        let mut start = 1;
        let mut i = 0;
        while i < events.len() {
            let time = events[i].time;
            let batch_end = events[i..]
                .iter()
                .position(|e| e.time != time)
                .map_or(events.len(), |p| i + p);
            let previous = current.clone();
            for (offset, e) in events[i..batch_end].iter().enumerate() {
                if events[i..i + offset]
                    .iter()
                    .any(|o| o.player == e.player && o.arm == e.arm)
                {
                    return Err(Error::input(format!(
                        "two change events for cell ({}, {}) at round {time}",
                        e.player, e.arm
                    )));
                }
                if previous[e.player][e.arm] == e.new_mean {
                    return Err(Error::input(format!(
                        "change event at round {time} for cell ({}, {}) keeps the mean at {}",
                        e.player, e.arm, e.new_mean
                    )));
                }
                current[e.player][e.arm] = e.new_mean;
            }
            segments.push(Segment {
                start,
                end: time - 1,
                means: previous,
            });
            start = time;
            i = batch_end;
        }
        segments.push(Segment {
            start,
            end: horizon,
            means: current,
        });

        let mut min_gap = f64::INFINITY;
        for (s, seg) in segments.iter().enumerate() {
            for (player, row) in seg.means.iter().enumerate() {
                if let Some(bad) = row.iter().find(|&&m| !(0.0..=mu_bar).contains(&m)) {
                    return Err(Error::Assumption {
                        player,
                        segment: s,
                        detail: format!("mean {bad} outside [0, {mu_bar}]"),
                    });
                }
                for a in 0..n_arms {
                    for b in a + 1..n_arms {
                        let gap = (row[a] - row[b]).abs();
                        if gap == 0.0 {
                            return Err(Error::Assumption {
                                player,
                                segment: s,
                                detail: format!("arms {a} and {b} share mean {}", row[a]),
                            });
                        }
                        min_gap = min_gap.min(gap);
                    }
                }
            }
        }

        Ok(Self {
            horizon,
            initial_means,
            events,
            mu_bar,
            segments,
            min_gap,
        })
    }

    /// A timeline whose means never change.
    pub fn stationary(horizon: usize, means: Vec<Vec<f64>>, mu_bar: f64) -> Result<Self> {
        Self::new(horizon, means, Vec::new(), mu_bar)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_players(&self) -> usize {
        self.initial_means.len()
    }

    pub fn n_arms(&self) -> usize {
        self.initial_means[0].len()
    }

    pub fn mu_bar(&self) -> f64 {
        self.mu_bar
    }

    pub fn initial_means(&self) -> &[Vec<f64>] {
        &self.initial_means
    }

    /// Events sorted by round.
    pub fn events(&self) -> &[ChangeEvent] {
        &self.events
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Index of the segment containing round `t`.
    pub fn segment_index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.horizon {
            return Err(Error::input(format!(
                "round {t} outside [1, {}]",
                self.horizon
            )));
        }
        Ok(self.segments.partition_point(|s| s.end < t))
    }

    /// The mean matrix in force at round `t`.
    pub fn means_at(&self, t: usize) -> Result<&[Vec<f64>]> {
        let s = self.segment_index(t)?;
        Ok(&self.segments[s].means)
    }

    /// `L_T`: number of `(t, i, k)` cells whose mean differs from round
    /// `t − 1`. Every accepted event changes exactly one cell.
    pub fn total_changes(&self) -> usize {
        self.events.len()
    }

    /// `Δ`: smallest gap between two arm means of any player in any segment.
    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }
}

/// Zero-mean noise added to the true mean when sampling a reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseFamily {
    /// Standard normal.
    #[default]
    Gaussian,
    /// No noise at all; rewards equal the means.
    None,
    /// Uniform on `[-1, 1]`.
    Uniform,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::None => "none",
            NoiseFamily::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(NoiseFamily::Gaussian),
            "none" => Some(NoiseFamily::None),
            "uniform" => Some(NoiseFamily::Uniform),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, mean: f64, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                mean + z
            }
            NoiseFamily::None => mean,
            NoiseFamily::Uniform => {
                let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
                mean + u.sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSample {
    pub player: usize,
    pub arm: usize,
    pub time: usize,
    pub value: f64,
}

pub fn sample_reward<R: Rng + ?Sized>(
    timeline: &MeanRewardTimeline,
    player: usize,
    arm: usize,
    t: usize,
    noise: NoiseFamily,
    rng: &mut R,
) -> Result<RewardSample> {
    if player >= timeline.n_players() || arm >= timeline.n_arms() {
        return Err(Error::input(format!(
            "cell ({player}, {arm}) outside {}×{}",
            timeline.n_players(),
            timeline.n_arms()
        )));
    }
    let mean = timeline.means_at(t)?[player][arm];
    Ok(RewardSample {
        player,
        arm,
        time: t,
        value: noise.sample(mean, rng),
    })
}

/// Player-optimal and player-pessimal stable matchings under the true means
/// of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBenchmark {
    pub start: usize,
    pub end: usize,
    pub optimal: Matching,
    pub pessimal: Matching,
}

/// The orderings a player would submit if it knew its means exactly.
pub fn true_orderings(means: &[Vec<f64>]) -> Vec<RankOrdering> {
    means
        .iter()
        .enumerate()
        .map(|(i, row)| RankOrdering::from_scores(i, row))
        .collect()
}

fn check_dims(timeline: &MeanRewardTimeline, market: &MarketInstance) -> Result<()> {
    if timeline.n_players() != market.n_players() || timeline.n_arms() != market.n_arms() {
        return Err(Error::input(format!(
            "timeline is {}×{} but market is {}×{}",
            timeline.n_players(),
            timeline.n_arms(),
            market.n_players(),
            market.n_arms()
        )));
    }
    Ok(())
}

/// One deferred-acceptance pair per constant segment.
pub fn segment_benchmarks(
    timeline: &MeanRewardTimeline,
    market: &MarketInstance,
) -> Result<Vec<SegmentBenchmark>> {
    check_dims(timeline, market)?;
    timeline
        .segments()
        .iter()
        .map(|seg| {
            let (optimal, pessimal) = optimal_pessimal(&true_orderings(&seg.means), market)?;
            Ok(SegmentBenchmark {
                start: seg.start,
                end: seg.end,
                optimal,
                pessimal,
            })
        })
        .collect()
}

/// `(optimal, pessimal)` benchmark for every round; index 0 is round 1.
pub fn stable_benchmarks(
    timeline: &MeanRewardTimeline,
    market: &MarketInstance,
) -> Result<Vec<(Matching, Matching)>> {
    let mut out = Vec::with_capacity(timeline.horizon());
    for b in segment_benchmarks(timeline, market)? {
        for _ in b.start..=b.end {
            out.push((b.optimal.clone(), b.pessimal.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn ev(time: usize, player: usize, arm: usize, new_mean: f64) -> ChangeEvent {
        ChangeEvent {
            time,
            player,
            arm,
            new_mean,
        }
    }

    fn base() -> Vec<Vec<f64>> {
        vec![vec![0.1, 0.5, 0.9], vec![0.8, 0.4, 0.2]]
    }

    #[test]
    fn means_at_applies_events_in_order() {
        let tl = MeanRewardTimeline::stationary(10, base(), 1.0).unwrap();
        for t in 1..=10 {
            assert_eq!(tl.means_at(t).unwrap(), base().as_slice());
        }

        let tl = MeanRewardTimeline::new(10, base(), vec![ev(5, 1, 2, 0.0)], 1.0).unwrap();
        assert_eq!(tl.means_at(4).unwrap()[1][2], 0.2);
        assert_eq!(tl.means_at(5).unwrap()[1][2], 0.0);

        let tl = MeanRewardTimeline::new(10, base(), vec![ev(7, 0, 1, 0.3), ev(5, 0, 1, 0.7)], 1.0)
            .unwrap();
        assert_eq!(tl.means_at(6).unwrap()[0][1], 0.7);
        assert_eq!(tl.means_at(7).unwrap()[0][1], 0.3);
        assert!(tl.means_at(0).is_err());
        assert!(tl.means_at(11).is_err());
    }

    #[test]
    fn change_counting() {
        assert_eq!(
            MeanRewardTimeline::stationary(5, base(), 1.0)
                .unwrap()
                .total_changes(),
            0
        );
        let one = MeanRewardTimeline::new(5, base(), vec![ev(3, 0, 0, 0.3)], 1.0).unwrap();
        assert_eq!(one.total_changes(), 1);
        let two = MeanRewardTimeline::new(5, base(), vec![ev(3, 0, 0, 0.7), ev(3, 0, 1, 0.1)], 1.0)
            .unwrap();
        assert_eq!(two.total_changes(), 2);
        assert_eq!(two.segments().len(), 2);
    }

    #[test]
    fn min_gap_tracks_segments() {
        let tl = MeanRewardTimeline::stationary(5, vec![vec![0.1, 0.5, 0.9]], 1.0).unwrap();
        assert!((tl.min_gap() - 0.4).abs() < 1e-12);
        let tl = MeanRewardTimeline::new(5, vec![vec![0.1, 0.5, 0.9]], vec![ev(3, 0, 1, 0.7)], 1.0)
            .unwrap();
        assert!((tl.min_gap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_assumption_violations() {
        let err = MeanRewardTimeline::stationary(5, vec![vec![0.5, 0.5]], 1.0).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption {
                player: 0,
                segment: 0,
                ..
            }
        ));
        let err = MeanRewardTimeline::new(5, vec![vec![0.2, 0.5]], vec![ev(4, 0, 0, 0.5)], 1.0)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption {
                player: 0,
                segment: 1,
                ..
            }
        ));
        let err = MeanRewardTimeline::stationary(5, vec![vec![0.2, 1.5]], 1.0).unwrap_err();
        assert!(matches!(err, Error::Assumption { .. }));
        // Not a change.
        assert!(MeanRewardTimeline::new(5, base(), vec![ev(3, 0, 0, 0.1)], 1.0).is_err());
        // Round 1 cannot carry a change.
        assert!(MeanRewardTimeline::new(5, base(), vec![ev(1, 0, 0, 0.3)], 1.0).is_err());
        assert!(MeanRewardTimeline::new(5, base(), vec![ev(6, 0, 0, 0.3)], 1.0).is_err());
        // Same cell twice in one round.
        assert!(
            MeanRewardTimeline::new(5, base(), vec![ev(3, 0, 0, 0.3), ev(3, 0, 0, 0.35)], 1.0)
                .is_err()
        );
    }

    #[test]
    fn noiseless_samples_equal_means() {
        let tl = MeanRewardTimeline::new(10, base(), vec![ev(5, 1, 2, 0.0)], 1.0).unwrap();
        let mut rng = seeded_rng(3, 0);
        for t in 1..=10 {
            for i in 0..2 {
                for k in 0..3 {
                    let s = sample_reward(&tl, i, k, t, NoiseFamily::None, &mut rng).unwrap();
                    assert_eq!(s.value, tl.means_at(t).unwrap()[i][k]);
                }
            }
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let tl = MeanRewardTimeline::stationary(10, base(), 1.0).unwrap();
        for noise in [NoiseFamily::Gaussian, NoiseFamily::Uniform] {
            let a = sample_reward(&tl, 0, 1, 3, noise, &mut seeded_rng(42, 0)).unwrap();
            let b = sample_reward(&tl, 0, 1, 3, noise, &mut seeded_rng(42, 0)).unwrap();
            assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
    }

    #[test]
    fn gaussian_sample_mean_converges() {
        let tl = MeanRewardTimeline::stationary(1, vec![vec![0.5, 0.1]], 1.0).unwrap();
        let mut rng = seeded_rng(7, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = sample_reward(&tl, 0, 0, 1, NoiseFamily::Gaussian, &mut rng)
                .unwrap()
                .value;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn uniform_noise_is_bounded() {
        let mut rng = seeded_rng(1, 0);
        for _ in 0..10_000 {
            let v = NoiseFamily::Uniform.sample(0.5, &mut rng);
            assert!((-0.5..=1.5).contains(&v));
        }
    }

    #[test]
    fn benchmarks_follow_segments() {
        let market = MarketInstance::new(2, 2, vec![vec![2.0, 1.0], vec![2.0, 1.0]]).unwrap();
        // Both players prefer arm 0 until p0 flips at round 5.
        let tl = MeanRewardTimeline::new(
            8,
            vec![vec![0.9, 0.1], vec![0.8, 0.3]],
            vec![ev(5, 0, 1, 0.95)],
            1.0,
        )
        .unwrap();
        let b = stable_benchmarks(&tl, &market).unwrap();
        assert_eq!(b.len(), 8);
        for (t, (opt, pess)) in b.iter().enumerate() {
            let expected: &[usize] = if t + 1 < 5 { &[0, 1] } else { &[1, 0] };
            assert_eq!(opt.assignment(), expected, "round {}", t + 1);
            assert_eq!(pess.assignment(), expected);
        }
    }

    #[test]
    fn single_player_benchmark_is_argmax() {
        let market = MarketInstance::new(1, 3, vec![vec![1.0]; 3]).unwrap();
        let tl = MeanRewardTimeline::new(6, vec![vec![0.2, 0.7, 0.4]], vec![ev(4, 0, 2, 0.9)], 1.0)
            .unwrap();
        let b = stable_benchmarks(&tl, &market).unwrap();
        for (t, (opt, pess)) in b.iter().enumerate() {
            let best = if t + 1 < 4 { 1 } else { 2 };
            assert_eq!(opt.arm_of(0), best);
            assert_eq!(pess.arm_of(0), best);
        }
    }
}
