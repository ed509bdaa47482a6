//! Cross-check of deferred acceptance against brute-force enumeration on
//! random small markets.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::OracleSpec;
use crate::error::{Error, Result};
use crate::market::{
    deferred_acceptance, enumerate_stable_matchings, extremal_matchings, MarketInstance, Matching,
    ProposingSide, RankOrdering, ENUMERATION_LIMIT,
};
use crate::seeded_rng;

/// A random `size × size` market with uniformly random strict preferences
/// on both sides.
pub fn random_market<R: Rng + ?Sized>(
    size: usize,
    rng: &mut R,
) -> Result<(MarketInstance, Vec<RankOrdering>)> {
    let utilities = (0..size)
        .map(|_| {
            let mut row: Vec<f64> = (1..=size).map(|u| u as f64).collect();
            row.shuffle(rng);
            row
        })
        .collect();
    let market = MarketInstance::new(size, size, utilities)?;
    let orderings = (0..size)
        .map(|i| {
            let mut ranks: Vec<usize> = (0..size).collect();
            ranks.shuffle(rng);
            RankOrdering::new(i, ranks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((market, orderings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMismatch {
    pub instance: usize,
    pub side: ProposingSide,
    pub deferred_acceptance: Matching,
    pub enumerated: Option<Matching>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleReport {
    pub instances: usize,
    pub stable_matchings: usize,
    pub mismatches: Vec<OracleMismatch>,
}

/// Checks both proposing sides on `spec.instances` random markets with
/// `N = K` drawn uniformly from `2..=spec.max_size`.
pub fn run_oracle_check(spec: &OracleSpec) -> Result<OracleReport> {
    if !(2..=ENUMERATION_LIMIT).contains(&spec.max_size) {
        return Err(Error::input(format!(
            "oracle market size must lie in 2..={ENUMERATION_LIMIT}"
        )));
    }
    let mut rng = seeded_rng(spec.seed, 1);
    let mut report = OracleReport {
        instances: spec.instances,
        ..OracleReport::default()
    };
    for instance in 0..spec.instances {
        let size = rng.random_range(2..=spec.max_size);
        let (market, orderings) = random_market(size, &mut rng)?;
        let stable = enumerate_stable_matchings(&orderings, &market)?;
        report.stable_matchings += stable.len();
        let (best, worst) = extremal_matchings(&stable, &orderings);
        for (side, expected) in [(ProposingSide::Players, best), (ProposingSide::Arms, worst)] {
            let got = deferred_acceptance(&orderings, &market, side)?;
            if expected.as_ref() != Some(&got) {
                report.mismatches.push(OracleMismatch {
                    instance,
                    side,
                    deferred_acceptance: got,
                    enumerated: expected,
                });
            }
        }
    }
    Ok(report)
}
