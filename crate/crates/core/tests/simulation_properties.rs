use std::collections::BTreeMap;

use proptest::prelude::*;

use rcb_core::engine::{
    regret_report, run_rcb, simulate, Baseline, RestartPeriod, SimulationConfig, SimulationTrace,
};
use rcb_core::environment::{MeanRewardTimeline, NoiseFamily};
use rcb_core::generate::{generate_instance, GeneratorSpec};
use rcb_core::market::MarketInstance;
use rcb_core::meta::{build_ensemble, run_fixed_member, simulate_meta};
use rcb_core::seeded_rng;

fn generated(horizon: usize, changes: usize, seed: u64) -> (MarketInstance, MeanRewardTimeline) {
    let spec = GeneratorSpec {
        n_players: 3,
        n_arms: 4,
        horizon,
        mu_bar: 1.0,
        min_gap: 0.2,
        changes,
    };
    generate_instance(&spec, &mut seeded_rng(seed, 1)).unwrap()
}

/// Joint regret per epoch, read back from the round records.
fn epoch_regret(trace: &SimulationTrace) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for r in &trace.rounds {
        let e = r.epoch.unwrap().index;
        *out.entry(e).or_insert(0.0) += r
            .players
            .iter()
            .map(|p| p.regret(Baseline::Pessimal))
            .sum::<f64>();
    }
    out
}

#[test]
fn meta_regret_decomposes_over_epochs() {
    let (market, timeline) = generated(2500, 5, 4);
    let config = SimulationConfig::new(2500).with_seed(4);
    let meta = simulate_meta(&config, &market, &timeline).unwrap();
    let per_epoch = epoch_regret(&meta);
    assert_eq!(per_epoch.len(), meta.epochs.len());
    let joint = meta.joint_regret(Baseline::Pessimal);
    assert!((per_epoch.values().sum::<f64>() - joint).abs() < 1e-9);

    // Against any fixed-period reference on the same seed, the gap is the
    // sum of per-epoch gaps.
    for &h in &build_ensemble(2500).unwrap().periods {
        let reference =
            run_fixed_member(&config, &market, &timeline, h, &mut seeded_rng(4, 0)).unwrap();
        let ref_epochs = epoch_regret(&reference);
        let gap: f64 = per_epoch.iter().map(|(e, r)| r - ref_epochs[e]).sum();
        let total = joint - reference.joint_regret(Baseline::Pessimal);
        assert!((gap - total).abs() < 1e-6, "H={h}: {gap} vs {total}");
    }
}

#[test]
fn meta_restarts_follow_the_chosen_period() {
    let (market, timeline) = generated(3000, 3, 9);
    let meta = simulate_meta(
        &SimulationConfig::new(3000).with_seed(9),
        &market,
        &timeline,
    )
    .unwrap();
    for e in &meta.epochs {
        let rounds = &meta.rounds[e.start - 1..e.start - 1 + e.length];
        for (offset, r) in rounds.iter().enumerate() {
            assert_eq!(
                r.restart,
                offset % e.chosen_period == 0,
                "epoch {} offset {offset}",
                e.epoch
            );
            assert_eq!(r.epoch.unwrap().chosen_period, e.chosen_period);
        }
        assert!((0.0..=1.0).contains(&e.normalized_reward));
    }
}

#[test]
fn fixed_member_equals_plain_restarts_when_period_divides_epoch() {
    // Epochs of 100 rounds start at t ≡ 1 (mod 4), so a period of 4 restarts
    // at exactly the same rounds. Noise-free rewards make the runs comparable.
    let (market, timeline) = generated(10_000, 4, 2);
    let config = SimulationConfig::new(10_000)
        .with_noise(NoiseFamily::None)
        .with_restart_period(RestartPeriod::Fixed(4));
    let plain = run_rcb(&config, &market, &timeline, &mut seeded_rng(0, 0)).unwrap();
    let member = run_fixed_member(&config, &market, &timeline, 4, &mut seeded_rng(0, 0)).unwrap();
    for (a, b) in plain.rounds.iter().zip(&member.rounds) {
        assert_eq!(a.matching, b.matching);
        assert_eq!(a.restart, b.restart);
    }
    assert_eq!(
        plain.joint_regret(Baseline::Pessimal),
        member.joint_regret(Baseline::Pessimal)
    );
}

#[test]
fn fixed_member_rejects_foreign_periods() {
    let (market, timeline) = generated(400, 0, 1);
    let config = SimulationConfig::new(400);
    assert!(run_fixed_member(&config, &market, &timeline, 3, &mut seeded_rng(0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn traces_are_reproducible_and_consistent(
        seed in 0u64..1000,
        changes in 0usize..10,
        period in prop_oneof![Just(RestartPeriod::Auto), (1usize..300).prop_map(RestartPeriod::Fixed)],
    ) {
        let (market, timeline) = generated(600, changes, seed);
        let config = SimulationConfig::new(600).with_seed(seed).with_restart_period(period);
        let a = simulate(&config, &market, &timeline).unwrap();
        let b = simulate(&config, &market, &timeline).unwrap();
        prop_assert_eq!(&a.rounds, &b.rounds);
        prop_assert_eq!(a.stability_violations, 0);

        let report = regret_report(&a, Baseline::Pessimal);
        let finals = report.final_regret();
        for (x, y) in finals.iter().zip(a.final_regret(Baseline::Pessimal)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for r in &a.rounds {
            let means = timeline.means_at(r.t).unwrap();
            for (i, p) in r.players.iter().enumerate() {
                prop_assert!(p.optimal_mean >= p.pessimal_mean);
                prop_assert_eq!(p.mean, means[i][p.arm]);
                prop_assert_eq!(p.arm, r.matching.arm_of(i));
            }
        }
    }
}
