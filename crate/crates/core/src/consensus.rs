//! Consensus groups, their power, viability, and the per-round list of
//! viable groups.
//!
//! A set of at least two agents is a *consensus group* on a bid when every
//! member accepted that bid in the opt-in phase. It is *viable* when its
//! total power lies inside every member's accept window.
//!
//! Two engines compute the viable groups of a round and must agree:
//!
//! * [`viable_groups_naive`] tests every subset of size ≥ 2 against every
//!   bid (`2^n − n − 1` subsets per bid).
//! * [`viable_groups_pruned`] grows candidate sets level by level, apriori
//!   style. Only acceptors of the bid enter the lattice, so no set holding a
//!   rejecting agent is ever built, and a set whose power already exceeds
//!   the smallest `c_max` among its members is never extended: adding agents
//!   only raises the power and only lowers that bound.
//!
//! Member sets are bitmasks over roster indices; output order is bid-table
//! order, then set size, then lexicographic roster indices.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::types::{AgentId, Bid, Power, Vote};

/// Largest roster the bitmask representation supports.
pub const MAX_AGENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("consensus groups need at least two members")]
    SizeBelowTwo,
}

/// A set of roster indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentSet(u64);

impl AgentSet {
    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        Self(indices.into_iter().fold(0, |m, i| m | (1 << i)))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, index: usize) -> bool {
        self.0 & (1 << index) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 | other.0)
    }

    pub fn without(self, index: usize) -> AgentSet {
        AgentSet(self.0 & !(1 << index))
    }

    pub fn is_disjoint(self, other: AgentSet) -> bool {
        self.0 & other.0 == 0
    }

    /// Member indices, ascending.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                return None;
            }
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(i)
        })
    }

    /// Ordering key: size first, then the ascending index list.
    fn order_key(self) -> (usize, Vec<usize>) {
        (self.len(), self.indices().collect())
    }
}

/// Everything the engines need from a round whose opt-in phase closed.
/// `votes` are the definitive opt-in votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "RoundRecord", try_from = "RoundRecord")]
pub struct ResolvedRound {
    pub round_index: u32,
    pub p_min: Power,
    pub roster: Vec<(AgentId, Power)>,
    pub bid_table: Vec<Bid>,
    pub votes: BTreeMap<(AgentId, Bid), Vote>,
}

/// On-disk layout of a [`ResolvedRound`] (the `analyze` votes file).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoundRecord {
    #[serde(default = "one")]
    round: u32,
    p_min: Power,
    roster: Vec<RosterEntry>,
    bids: Vec<Bid>,
    votes: Vec<VoteRecord>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RosterEntry {
    agent: AgentId,
    power: Power,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VoteRecord {
    agent: AgentId,
    bid: Bid,
    #[serde(flatten)]
    vote: Vote,
}

impl From<ResolvedRound> for RoundRecord {
    fn from(r: ResolvedRound) -> Self {
        RoundRecord {
            round: r.round_index,
            p_min: r.p_min,
            roster: r
                .roster
                .into_iter()
                .map(|(agent, power)| RosterEntry { agent, power })
                .collect(),
            bids: r.bid_table,
            votes: r
                .votes
                .into_iter()
                .map(|((agent, bid), vote)| VoteRecord { agent, bid, vote })
                .collect(),
        }
    }
}

impl TryFrom<RoundRecord> for ResolvedRound {
    type Error = String;

    fn try_from(r: RoundRecord) -> Result<Self, String> {
        let roster: Vec<_> = r.roster.into_iter().map(|e| (e.agent, e.power)).collect();
        if roster.len() > MAX_AGENTS {
            return Err(format!("at most {MAX_AGENTS} agents are supported"));
        }
        let agents: BTreeSet<_> = roster.iter().map(|(a, _)| a).collect();
        if agents.len() != roster.len() {
            return Err("duplicate agent in roster".into());
        }
        let mut votes = BTreeMap::new();
        for v in r.votes {
            if !agents.contains(&v.agent) {
                return Err(format!("vote by unknown agent {}", v.agent));
            }
            if !r.bids.contains(&v.bid) {
                return Err(format!("vote on unknown bid {}", v.bid));
            }
            if votes
                .insert((v.agent.clone(), v.bid.clone()), v.vote)
                .is_some()
            {
                return Err(format!("duplicate vote by {} on {}", v.agent, v.bid));
            }
        }
        Ok(ResolvedRound {
            round_index: r.round,
            p_min: r.p_min,
            roster,
            bid_table: r.bids,
            votes,
        })
    }
}

impl ResolvedRound {
    pub fn p_max(&self) -> u64 {
        self.roster.iter().map(|(_, p)| p.get()).sum()
    }

    /// The same round restricted to a subset of the roster.
    pub fn restricted_to(&self, keep: &BTreeSet<AgentId>) -> ResolvedRound {
        ResolvedRound {
            round_index: self.round_index,
            p_min: self.p_min,
            roster: self
                .roster
                .iter()
                .filter(|(a, _)| keep.contains(a))
                .cloned()
                .collect(),
            bid_table: self.bid_table.clone(),
            votes: self
                .votes
                .iter()
                .filter(|((a, _), _)| keep.contains(a))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    fn members(&self, set: AgentSet) -> Vec<AgentId> {
        set.indices().map(|i| self.roster[i].0.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConsensusGroup {
    pub bid: Bid,
    /// Members in roster order.
    pub members: Vec<AgentId>,
    pub power: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViableGroup {
    #[serde(flatten)]
    pub group: ConsensusGroup,
    pub windows: BTreeMap<AgentId, (u64, u64)>,
}

impl ViableGroup {
    pub fn bid(&self) -> &Bid {
        &self.group.bid
    }

    pub fn members(&self) -> &[AgentId] {
        &self.group.members
    }

    pub fn power(&self) -> u64 {
        self.group.power
    }
}

/// Total power of a set of agents.
pub fn group_power(
    members: &[AgentId],
    roster: &[(AgentId, Power)],
) -> Result<u64, ConsensusError> {
    members
        .iter()
        .map(|m| {
            roster
                .iter()
                .find(|(a, _)| a == m)
                .map(|(_, p)| p.get())
                .ok_or_else(|| ConsensusError::UnknownAgent(m.clone()))
        })
        .sum()
}

/// Whether every member accepted `bid`. Members without a recorded vote
/// count as not accepting.
pub fn is_consensus_group(
    members: &[AgentId],
    bid: &Bid,
    votes: &BTreeMap<(AgentId, Bid), Vote>,
) -> Result<bool, ConsensusError> {
    if members.len() < 2 {
        return Err(ConsensusError::SizeBelowTwo);
    }
    Ok(members.iter().all(|m| {
        votes
            .get(&(m.clone(), bid.clone()))
            .is_some_and(Vote::is_accept)
    }))
}

/// Whether the group's power falls inside every member's accept window.
pub fn is_viable(group: &ConsensusGroup, votes: &BTreeMap<(AgentId, Bid), Vote>) -> bool {
    group.members.iter().all(|m| {
        matches!(
            votes.get(&(m.clone(), group.bid.clone())),
            Some(Vote::Accept { c_min, c_max }) if *c_min <= group.power && group.power <= *c_max
        )
    })
}

/// All subsets of `0..n` with at least two members, by size and then
/// lexicographically. Yields `2^n − n − 1` sets.
pub fn enumerate_candidate_groups(n: usize) -> impl Iterator<Item = AgentSet> {
    assert!(n <= MAX_AGENTS, "at most {MAX_AGENTS} agents");
    (2..=n).flat_map(move |k| (0..n).combinations(k).map(AgentSet::from_indices))
}

/// Round data laid out by index: `windows[bid][agent]`.
struct IndexedRound<'a> {
    round: &'a ResolvedRound,
    powers: Vec<u64>,
    windows: Vec<Vec<Option<(u64, u64)>>>,
}

impl<'a> IndexedRound<'a> {
    fn new(round: &'a ResolvedRound) -> Self {
        let powers = round.roster.iter().map(|(_, p)| p.get()).collect();
        let windows = round
            .bid_table
            .iter()
            .map(|bid| {
                round
                    .roster
                    .iter()
                    .map(|(agent, _)| {
                        round
                            .votes
                            .get(&(agent.clone(), bid.clone()))
                            .and_then(Vote::window)
                    })
                    .collect()
            })
            .collect();
        Self {
            round,
            powers,
            windows,
        }
    }

    fn power(&self, set: AgentSet) -> u64 {
        set.indices().map(|i| self.powers[i]).sum()
    }

    fn all_accept(&self, bid: usize, set: AgentSet) -> bool {
        set.indices().all(|i| self.windows[bid][i].is_some())
    }

    fn viable_at(&self, bid: usize, set: AgentSet, power: u64) -> bool {
        set.indices()
            .all(|i| self.windows[bid][i].is_some_and(|(lo, hi)| lo <= power && power <= hi))
    }

    fn min_c_max(&self, bid: usize, set: AgentSet) -> u64 {
        set.indices()
            .filter_map(|i| self.windows[bid][i].map(|(_, hi)| hi))
            .min()
            .unwrap_or(0)
    }

    fn viable_group(&self, bid: usize, set: AgentSet, power: u64) -> ViableGroup {
        let bid_value = self.round.bid_table[bid].clone();
        let windows = set
            .indices()
            .map(|i| {
                let w = self.windows[bid][i].expect("members accepted");
                (self.round.roster[i].0.clone(), w)
            })
            .collect();
        ViableGroup {
            group: ConsensusGroup {
                bid: bid_value,
                members: self.round.members(set),
                power,
            },
            windows,
        }
    }
}

/// Every viable group of the round by exhaustive enumeration.
pub fn viable_groups_naive(round: &ResolvedRound) -> Vec<ViableGroup> {
    let idx = IndexedRound::new(round);
    let n = round.roster.len();
    let mut out = Vec::new();
    for bid in 0..round.bid_table.len() {
        for set in enumerate_candidate_groups(n) {
            if !idx.all_accept(bid, set) {
                continue;
            }
            let power = idx.power(set);
            if idx.viable_at(bid, set, power) {
                out.push(idx.viable_group(bid, set, power));
            }
        }
    }
    out
}

/// Work counters for [`viable_groups_pruned_with_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneStats {
    /// Candidate sets whose viability was evaluated.
    pub tested: u64,
    /// Candidates discarded because a subset could not be extended.
    pub pruned: u64,
}

/// Every viable group of the round by level-wise growth over acceptors.
/// Same output, in the same order, as [`viable_groups_naive`].
pub fn viable_groups_pruned(round: &ResolvedRound) -> Vec<ViableGroup> {
    viable_groups_pruned_with_stats(round).0
}

pub fn viable_groups_pruned_with_stats(round: &ResolvedRound) -> (Vec<ViableGroup>, PruneStats) {
    let idx = IndexedRound::new(round);
    let mut stats = PruneStats::default();
    let mut out = Vec::new();
    for bid in 0..round.bid_table.len() {
        let mut found = grow_bid(&idx, bid, &mut stats);
        found.sort_by_cached_key(|(set, _)| set.order_key());
        out.extend(
            found
                .into_iter()
                .map(|(set, power)| idx.viable_group(bid, set, power)),
        );
    }
    (out, stats)
}

fn grow_bid(idx: &IndexedRound<'_>, bid: usize, stats: &mut PruneStats) -> Vec<(AgentSet, u64)> {
    let acceptors: Vec<usize> = (0..idx.powers.len())
        .filter(|&i| idx.windows[bid][i].is_some())
        .collect();
    let mut found = Vec::new();
    if acceptors.len() < 2 {
        return found;
    }

    // Level 1: every acceptor on its own is a consensus set and can be
    // extended unless its own power already exceeds its own c_max.
    let mut frontier: Vec<Vec<usize>> = acceptors
        .iter()
        .filter(|&&i| idx.powers[i] <= idx.windows[bid][i].map_or(0, |(_, hi)| hi))
        .map(|&i| vec![i])
        .collect();

    while frontier.len() >= 2 {
        let extendable: BTreeSet<AgentSet> = frontier
            .iter()
            .map(|s| AgentSet::from_indices(s.iter().copied()))
            .collect();
        let mut next = Vec::new();
        for (a, b) in join_candidates(&frontier) {
            let mut cand = a.clone();
            cand.push(*b.last().expect("non-empty"));
            let set = AgentSet::from_indices(cand.iter().copied());
            // Every subset one smaller must itself be extendable.
            if cand.len() > 2 && !cand.iter().all(|&i| extendable.contains(&set.without(i))) {
                stats.pruned += 1;
                continue;
            }
            stats.tested += 1;
            debug_assert!(idx.all_accept(bid, set));
            let power = idx.power(set);
            if idx.viable_at(bid, set, power) {
                found.push((set, power));
            }
            if power <= idx.min_c_max(bid, set) {
                next.push(cand);
            }
        }
        frontier = next;
    }
    found
}

/// Pairs of equal-length sorted sets that share all but their last element,
/// with the first set's last element smaller.
fn join_candidates(level: &[Vec<usize>]) -> impl Iterator<Item = (&Vec<usize>, &Vec<usize>)> {
    level.iter().enumerate().flat_map(move |(i, a)| {
        level[i + 1..]
            .iter()
            .take_while(move |b| a[..a.len() - 1] == b[..b.len() - 1])
            .map(move |b| (a, b))
    })
}

/// Which engine computes viable groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Naive,
    #[default]
    Pruned,
}

impl Engine {
    pub fn viable_groups(self, round: &ResolvedRound) -> Vec<ViableGroup> {
        match self {
            Engine::Naive => viable_groups_naive(round),
            Engine::Pruned => viable_groups_pruned(round),
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Engine::Naive),
            "pruned" => Ok(Engine::Pruned),
            other => Err(format!("unknown engine `{other}` (expected naive|pruned)")),
        }
    }
}
