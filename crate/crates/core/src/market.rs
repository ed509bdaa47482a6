//! Stable matchings between players and arms.
//!
//! Players rank arms through a [`RankOrdering`]; arms rank players through
//! fixed, strictly distinct utilities held by [`MarketInstance`]. Matchings
//! are injective maps from players to arms, so when there are more arms than
//! players some arms stay vacant.
//!
//! Besides deferred acceptance, the module carries exhaustive oracles
//! (enumeration of stable matchings, blocked sets, covers) that are only
//! tractable for tiny markets and exist to cross-check the fast paths.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Largest number of players or arms the enumeration oracles accept.
pub const ENUMERATION_LIMIT: usize = 6;

/// The static skeleton of a market: its size and the arms' preferences.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    n_players: usize,
    n_arms: usize,
    /// `arm_utilities[k][i]` is the utility arm `k` derives from player `i`.
    arm_utilities: Vec<Vec<f64>>,
}

impl MarketInstance {
    pub fn new(n_players: usize, n_arms: usize, arm_utilities: Vec<Vec<f64>>) -> Result<Self> {
        if n_players == 0 || n_arms == 0 {
            return Err(Error::input("market needs at least one player and one arm"));
        }
        if n_arms < n_players {
            return Err(Error::input(format!(
                "market requires K ≥ N (got N = {n_players}, K = {n_arms})"
            )));
        }
        if arm_utilities.len() != n_arms {
            return Err(Error::input(format!(
                "expected utilities for {n_arms} arms, got {}",
                arm_utilities.len()
            )));
        }
        for (k, row) in arm_utilities.iter().enumerate() {
            if row.len() != n_players {
                return Err(Error::input(format!(
                    "arm {k} has {} utilities, expected {n_players}",
                    row.len()
                )));
            }
            if row.iter().any(|u| !u.is_finite()) {
                return Err(Error::input(format!("arm {k} has a non-finite utility")));
            }
            for i in 0..n_players {
                for j in i + 1..n_players {
                    if row[i] == row[j] {
                        return Err(Error::input(format!(
                            "arm {k} is indifferent between players {i} and {j}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            n_players,
            n_arms,
            arm_utilities,
        })
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn arm_utilities(&self) -> &[Vec<f64>] {
        &self.arm_utilities
    }

    pub fn utility(&self, arm: usize, player: usize) -> f64 {
        self.arm_utilities[arm][player]
    }

    /// Whether `arm` strictly prefers player `a` to player `b`.
    pub fn arm_prefers(&self, arm: usize, a: usize, b: usize) -> bool {
        self.arm_utilities[arm][a] > self.arm_utilities[arm][b]
    }

    /// Players in the order `arm` prefers them, best first.
    fn arm_ranking(&self, arm: usize) -> Vec<usize> {
        let row = &self.arm_utilities[arm];
        let mut players: Vec<usize> = (0..self.n_players).collect();
        players.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        players
    }
}

/// A player's submitted preference list over all arms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankOrdering {
    owner: usize,
    ranks: Vec<usize>,
    positions: Vec<usize>,
}

impl RankOrdering {
    /// `ranks[0]` is the most preferred arm. Fails unless `ranks` is a
    /// permutation of `0..ranks.len()`.
    pub fn new(owner: usize, ranks: Vec<usize>) -> Result<Self> {
        let k = ranks.len();
        let mut positions = vec![usize::MAX; k];
        for (pos, &arm) in ranks.iter().enumerate() {
            if arm >= k || positions[arm] != usize::MAX {
                return Err(Error::input(format!(
                    "ranking of player {owner} is not a permutation of 0..{k}: {ranks:?}"
                )));
            }
            positions[arm] = pos;
        }
        Ok(Self {
            owner,
            ranks,
            positions,
        })
    }

    /// Orders arms by descending score; equal scores fall back to ascending
    /// arm index.
    pub fn from_scores<T: PartialOrd>(owner: usize, scores: &[T]) -> Self {
        let mut ranks: Vec<usize> = (0..scores.len()).collect();
        ranks.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        Self::new(owner, ranks).expect("sorted indices form a permutation")
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn top(&self) -> usize {
        self.ranks[0]
    }

    /// Position of `arm` in the list; 0 is best.
    pub fn position(&self, arm: usize) -> usize {
        self.positions[arm]
    }

    pub fn prefers(&self, a: usize, b: usize) -> bool {
        self.positions[a] < self.positions[b]
    }
}

/// Injective assignment of every player to an arm.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Matching {
    assignment: Vec<usize>,
}

impl Matching {
    pub fn new(assignment: Vec<usize>, n_arms: usize) -> Result<Self> {
        let mut taken = vec![false; n_arms];
        for (player, &arm) in assignment.iter().enumerate() {
            if arm >= n_arms {
                return Err(Error::input(format!(
                    "player {player} assigned to arm {arm}, but there are only {n_arms} arms"
                )));
            }
            if taken[arm] {
                return Err(Error::input(format!("arm {arm} is assigned twice")));
            }
            taken[arm] = true;
        }
        Ok(Self { assignment })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn arm_of(&self, player: usize) -> usize {
        self.assignment[player]
    }

    pub fn n_players(&self) -> usize {
        self.assignment.len()
    }

    /// The player holding `arm`, if any.
    pub fn holder_of(&self, arm: usize) -> Option<usize> {
        self.assignment.iter().position(|&a| a == arm)
    }

    fn holders(&self, n_arms: usize) -> Vec<Option<usize>> {
        let mut holders = vec![None; n_arms];
        for (player, &arm) in self.assignment.iter().enumerate() {
            holders[arm] = Some(player);
        }
        holders
    }
}

/// `(player, preferred_arm, matched_arm)`: the player holds `matched_arm`
/// but would rather have `preferred_arm`, and that arm would take it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockingTriplet {
    pub player: usize,
    pub preferred_arm: usize,
    pub matched_arm: usize,
}

impl BlockingTriplet {
    pub fn new(player: usize, preferred_arm: usize, matched_arm: usize) -> Result<Self> {
        if preferred_arm == matched_arm {
            return Err(Error::input(format!(
                "triplet for player {player} uses arm {preferred_arm} on both sides"
            )));
        }
        Ok(Self {
            player,
            preferred_arm,
            matched_arm,
        })
    }
}

/// Which side makes the proposals in deferred acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposingSide {
    Players,
    Arms,
}

fn check_orderings(orderings: &[RankOrdering], market: &MarketInstance) -> Result<()> {
    if orderings.len() != market.n_players {
        return Err(Error::input(format!(
            "got {} orderings for {} players",
            orderings.len(),
            market.n_players
        )));
    }
    for (i, ordering) in orderings.iter().enumerate() {
        if ordering.owner != i {
            return Err(Error::input(format!(
                "ordering at position {i} belongs to player {}",
                ordering.owner
            )));
        }
        if ordering.ranks.len() != market.n_arms {
            return Err(Error::input(format!(
                "player {i} ranks {} arms, market has {}",
                ordering.ranks.len(),
                market.n_arms
            )));
        }
    }
    Ok(())
}

fn check_matching(m: &Matching, market: &MarketInstance) -> Result<()> {
    if m.assignment.len() != market.n_players {
        return Err(Error::input(format!(
            "matching covers {} players, market has {}",
            m.assignment.len(),
            market.n_players
        )));
    }
    if m.assignment.iter().any(|&a| a >= market.n_arms) {
        return Err(Error::input("matching refers to an arm outside the market"));
    }
    Ok(())
}

/// Gale–Shapley deferred acceptance.
///
/// Free proposers move in ascending index order. Player-proposing yields the
/// player-optimal stable matching for the submitted orderings, arm-proposing
/// the player-pessimal one.
pub fn deferred_acceptance(
    orderings: &[RankOrdering],
    market: &MarketInstance,
    side: ProposingSide,
) -> Result<Matching> {
    check_orderings(orderings, market)?;
    let assignment = match side {
        ProposingSide::Players => players_propose(orderings, market),
        ProposingSide::Arms => arms_propose(orderings, market),
    };
    Ok(Matching { assignment })
}

fn players_propose(orderings: &[RankOrdering], market: &MarketInstance) -> Vec<usize> {
    let n = market.n_players;
    let mut next = vec![0usize; n];
    let mut holder: Vec<Option<usize>> = vec![None; market.n_arms];
    let mut free: Vec<usize> = (0..n).collect();

    while !free.is_empty() {
        free.sort_unstable();
        for player in std::mem::take(&mut free) {
            // K ≥ N with complete lists: nobody runs out of arms.
            let arm = orderings[player].ranks[next[player]];
            next[player] += 1;
            match holder[arm] {
                None => holder[arm] = Some(player),
                Some(current) if market.arm_prefers(arm, player, current) => {
                    holder[arm] = Some(player);
                    free.push(current);
                }
                Some(_) => free.push(player),
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for (arm, h) in holder.iter().enumerate() {
        if let Some(p) = h {
            assignment[*p] = arm;
        }
    }
    assignment
}

fn arms_propose(orderings: &[RankOrdering], market: &MarketInstance) -> Vec<usize> {
    let k = market.n_arms;
    let lists: Vec<Vec<usize>> = (0..k).map(|a| market.arm_ranking(a)).collect();
    let mut next = vec![0usize; k];
    let mut held: Vec<Option<usize>> = vec![None; market.n_players];
    let mut free: Vec<usize> = (0..k).collect();

    while !free.is_empty() {
        free.sort_unstable();
        for arm in std::mem::take(&mut free) {
            let Some(&player) = lists[arm].get(next[arm]) else {
                // Exhausted its list: stays vacant.
                continue;
            };
            next[arm] += 1;
            match held[player] {
                None => held[player] = Some(arm),
                Some(current) if orderings[player].prefers(arm, current) => {
                    held[player] = Some(arm);
                    free.push(current);
                }
                Some(_) => free.push(arm),
            }
        }
    }

    held.into_iter()
        .map(|a| a.expect("K ≥ N guarantees every player receives a proposal"))
        .collect()
}

/// Every `(player, arm)` pair that blocks `m`, reported as triplets with the
/// player's current arm. Empty iff `m` is stable.
pub fn blocking_pairs(
    m: &Matching,
    orderings: &[RankOrdering],
    market: &MarketInstance,
) -> Result<Vec<BlockingTriplet>> {
    check_orderings(orderings, market)?;
    check_matching(m, market)?;
    let holders = m.holders(market.n_arms);
    Ok(blocking_pairs_unchecked(m, &holders, orderings, market))
}

fn blocking_pairs_unchecked(
    m: &Matching,
    holders: &[Option<usize>],
    orderings: &[RankOrdering],
    market: &MarketInstance,
) -> Vec<BlockingTriplet> {
    let mut out = Vec::new();
    for (player, &current) in m.assignment.iter().enumerate() {
        let ordering = &orderings[player];
        for &arm in &ordering.ranks[..ordering.position(current)] {
            let arm_agrees = match holders[arm] {
                None => true,
                Some(rival) => market.arm_prefers(arm, player, rival),
            };
            if arm_agrees {
                out.push(BlockingTriplet {
                    player,
                    preferred_arm: arm,
                    matched_arm: current,
                });
            }
        }
    }
    out
}

/// Cheap stability test used inside the simulation loop.
pub fn is_stable(m: &Matching, orderings: &[RankOrdering], market: &MarketInstance) -> bool {
    let holders = m.holders(market.n_arms);
    blocking_pairs_unchecked(m, &holders, orderings, market).is_empty()
}

fn check_size(market: &MarketInstance) -> Result<()> {
    if market.n_players > ENUMERATION_LIMIT || market.n_arms > ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            n_players: market.n_players,
            n_arms: market.n_arms,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Every injective player→arm assignment, in lexicographic order.
pub fn all_matchings(market: &MarketInstance) -> Result<Vec<Matching>> {
    check_size(market)?;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(market.n_players);
    let mut used = vec![false; market.n_arms];
    extend_matchings(market, &mut current, &mut used, &mut out);
    Ok(out)
}

fn extend_matchings(
    market: &MarketInstance,
    current: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<Matching>,
) {
    if current.len() == market.n_players {
        out.push(Matching {
            assignment: current.clone(),
        });
        return;
    }
    for arm in 0..market.n_arms {
        if !used[arm] {
            used[arm] = true;
            current.push(arm);
            extend_matchings(market, current, used, out);
            current.pop();
            used[arm] = false;
        }
    }
}

/// All stable matchings by brute force, lexicographically sorted.
pub fn enumerate_stable_matchings(
    orderings: &[RankOrdering],
    market: &MarketInstance,
) -> Result<Vec<Matching>> {
    check_orderings(orderings, market)?;
    Ok(all_matchings(market)?
        .into_iter()
        .filter(|m| is_stable(m, orderings, market))
        .collect())
}

/// Arms `player` holds in at least one stable matching.
pub fn valid_partners(
    player: usize,
    orderings: &[RankOrdering],
    market: &MarketInstance,
) -> Result<BTreeSet<usize>> {
    if player >= market.n_players {
        return Err(Error::input(format!("no player {player}")));
    }
    Ok(enumerate_stable_matchings(orderings, market)?
        .iter()
        .map(|m| m.arm_of(player))
        .collect())
}

/// `(player-optimal, player-pessimal)` stable matchings via deferred
/// acceptance from each side.
pub fn optimal_pessimal(
    orderings: &[RankOrdering],
    market: &MarketInstance,
) -> Result<(Matching, Matching)> {
    Ok((
        deferred_acceptance(orderings, market, ProposingSide::Players)?,
        deferred_acceptance(orderings, market, ProposingSide::Arms)?,
    ))
}

/// Picks the player-optimal and player-pessimal elements out of an
/// enumerated list of stable matchings: the matchings giving every player
/// its best (resp. worst) arm among those appearing in the list. `None` when
/// no single matching does so.
pub fn extremal_matchings(
    stable: &[Matching],
    orderings: &[RankOrdering],
) -> (Option<Matching>, Option<Matching>) {
    let n = orderings.len();
    let pick = |want_best: bool| -> Option<Matching> {
        let target: Vec<usize> = (0..n)
            .map(|i| {
                let arms = stable.iter().map(|m| m.arm_of(i));
                let by_rank = |&a: &usize| orderings[i].position(a);
                if want_best {
                    arms.min_by_key(by_rank)
                } else {
                    arms.max_by_key(by_rank)
                }
            })
            .collect::<Option<Vec<_>>>()?;
        stable.iter().find(|m| m.assignment == target).cloned()
    };
    (pick(true), pick(false))
}

/// Every triplet `(p_j, a_k, a_k')` with `k ≠ k'` for the market.
pub fn all_triplets(market: &MarketInstance) -> Vec<BlockingTriplet> {
    let mut out = Vec::new();
    for player in 0..market.n_players {
        for preferred_arm in 0..market.n_arms {
            for matched_arm in 0..market.n_arms {
                if preferred_arm != matched_arm {
                    out.push(BlockingTriplet {
                        player,
                        preferred_arm,
                        matched_arm,
                    });
                }
            }
        }
    }
    out
}

/// All matchings in which the triplet's player holds `matched_arm` and
/// `(player, preferred_arm)` is a blocking pair.
pub fn blocked_set(
    triplet: BlockingTriplet,
    orderings: &[RankOrdering],
    market: &MarketInstance,
) -> Result<Vec<Matching>> {
    check_orderings(orderings, market)?;
    let BlockingTriplet {
        player,
        preferred_arm,
        matched_arm,
    } = triplet;
    if player >= market.n_players || preferred_arm >= market.n_arms || matched_arm >= market.n_arms
    {
        return Err(Error::input(format!(
            "triplet {triplet:?} is outside the market"
        )));
    }
    if !orderings[player].prefers(preferred_arm, matched_arm) {
        check_size(market)?;
        return Ok(Vec::new());
    }
    Ok(all_matchings(market)?
        .into_iter()
        .filter(|m| m.arm_of(player) == matched_arm)
        .filter(|m| match m.holder_of(preferred_arm) {
            None => true,
            Some(rival) => market.arm_prefers(preferred_arm, player, rival),
        })
        .collect())
}

/// Whether the blocked sets of `triplets` jointly contain every matching in
/// `target`.
pub fn is_cover(
    triplets: &[BlockingTriplet],
    target: &[Matching],
    orderings: &[RankOrdering],
    market: &MarketInstance,
) -> Result<bool> {
    check_size(market)?;
    let mut covered = BTreeSet::new();
    for &q in triplets {
        covered.extend(blocked_set(q, orderings, market)?);
    }
    Ok(target.iter().all(|m| covered.contains(m)))
}
