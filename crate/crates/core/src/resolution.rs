//! End-of-round decisions: which viable groups become deals, who continues,
//! and whether the negotiation is over.
//!
//! Ties between equally powerful groups are broken with a seeded ChaCha8
//! generator so a run is reproducible from its seed.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{ResolvedRound, ViableGroup};
use crate::protocol::{total_power, EndReason, NegotiationState, Phase, ProtocolError};
use crate::types::{AgentId, Bid, TerminationPolicy};

/// Identifier of the tie-breaking generator, recorded in trace headers.
pub const RNG_ALGORITHM: &str = "chacha8";

pub type TieBreaker = ChaCha8Rng;

pub fn tie_breaker(seed: u64) -> TieBreaker {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DealRecord {
    pub round: u32,
    pub bid: Bid,
    pub members: Vec<AgentId>,
    pub power: u64,
}

impl DealRecord {
    fn from_group(round: u32, g: &ViableGroup) -> Self {
        Self {
            round,
            bid: g.bid().clone(),
            members: g.members().to_vec(),
            power: g.power(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub deals: Vec<DealRecord>,
    /// Agents moving to the next round, in roster order.
    pub continuing_agents: Vec<AgentId>,
    pub negotiation_over: bool,
    pub end_reason: Option<EndReason>,
}

/// A group of maximal power; ties are broken uniformly with `rng`. The
/// generator is only consulted when there is more than one candidate.
pub fn select_largest<'a, R: Rng + ?Sized>(
    groups: &'a [ViableGroup],
    rng: &mut R,
) -> Option<&'a ViableGroup> {
    let best = groups.iter().map(ViableGroup::power).max()?;
    let tied: Vec<&ViableGroup> = groups.iter().filter(|g| g.power() == best).collect();
    match tied.len() {
        1 => Some(tied[0]),
        n => Some(tied[rng.gen_range(0..n)]),
    }
}

/// Largest group strikes the only deal; everyone else leaves without one.
/// With no viable group, everyone continues until the deadline.
pub fn resolve_policy_one<R: Rng + ?Sized>(
    round: &ResolvedRound,
    groups: &[ViableGroup],
    max_rounds: u32,
    rng: &mut R,
) -> RoundOutcome {
    match select_largest(groups, rng) {
        Some(g) => RoundOutcome {
            deals: vec![DealRecord::from_group(round.round_index, g)],
            continuing_agents: Vec::new(),
            negotiation_over: true,
            end_reason: Some(EndReason::DealStruck),
        },
        None => {
            let over = round.round_index >= max_rounds;
            RoundOutcome {
                deals: Vec::new(),
                continuing_agents: round.roster.iter().map(|(a, _)| a.clone()).collect(),
                negotiation_over: over,
                end_reason: over.then_some(EndReason::Deadline),
            }
        }
    }
}

/// Greedy extraction: take the largest group, drop every group that shares
/// a member with it, repeat. Undealt agents continue unless one or none is
/// left or the deadline was reached.
pub fn resolve_policy_two<R: Rng + ?Sized>(
    round: &ResolvedRound,
    groups: &[ViableGroup],
    max_rounds: u32,
    rng: &mut R,
) -> RoundOutcome {
    let mut remaining = groups.to_vec();
    let mut dealt: BTreeSet<AgentId> = BTreeSet::new();
    let mut deals = Vec::new();
    while let Some(g) = select_largest(&remaining, rng) {
        let deal = DealRecord::from_group(round.round_index, g);
        dealt.extend(deal.members.iter().cloned());
        deals.push(deal);
        remaining.retain(|g| g.members().iter().all(|m| !dealt.contains(m)));
    }
    let continuing: Vec<AgentId> = round
        .roster
        .iter()
        .map(|(a, _)| a)
        .filter(|a| !dealt.contains(*a))
        .cloned()
        .collect();
    let end_reason = if continuing.len() <= 1 {
        Some(EndReason::AgentsExhausted)
    } else if round.round_index >= max_rounds {
        Some(EndReason::Deadline)
    } else {
        None
    };
    RoundOutcome {
        deals,
        continuing_agents: continuing,
        negotiation_over: end_reason.is_some(),
        end_reason,
    }
}

/// Dispatches on the configured policy.
pub fn resolve<R: Rng + ?Sized>(
    policy: TerminationPolicy,
    round: &ResolvedRound,
    groups: &[ViableGroup],
    max_rounds: u32,
    rng: &mut R,
) -> RoundOutcome {
    match policy {
        TerminationPolicy::LargestOnly => resolve_policy_one(round, groups, max_rounds, rng),
        TerminationPolicy::RepeatedExtraction => resolve_policy_two(round, groups, max_rounds, rng),
    }
}

/// Records the outcome's deals and either ends the negotiation or opens
/// bidding for the next round with the continuing agents.
pub fn advance_round(
    state: &mut NegotiationState,
    outcome: &RoundOutcome,
) -> Result<(), ProtocolError> {
    if state.ended.is_some() {
        return Err(ProtocolError::NegotiationOver);
    }
    if state.phase != Phase::Resolved {
        return Err(ProtocolError::NotResolved);
    }
    state.deals.extend(outcome.deals.iter().cloned());
    if outcome.negotiation_over {
        state.ended = Some(outcome.end_reason.unwrap_or(EndReason::Deadline));
        return Ok(());
    }
    state
        .roster
        .retain(|(a, _)| outcome.continuing_agents.contains(a));
    state.p_max = total_power(&state.roster);
    state.round_index += 1;
    state.phase = Phase::Bidding;
    state.current_bids.clear();
    state.bid_table.clear();
    state.votes.clear();
    state.optin_votes.clear();
    state.check_reachable();
    Ok(())
}
