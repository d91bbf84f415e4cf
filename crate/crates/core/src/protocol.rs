//! The per-round state machine: bidding, voting and opt-in, with the two
//! broadcast announcements and every vote-validity rule.
//!
//! All mutation goes through the methods on [`NegotiationState`]. A failed
//! call never modifies the state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::consensus::{ResolvedRound, MAX_AGENTS};
use crate::resolution::DealRecord;
use crate::types::{AgentId, Bid, Power, ProtocolParams, Vote};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Bidding,
    Voting,
    OptIn,
    Resolved,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Why a negotiation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// The largest viable group struck a deal and everybody else left.
    DealStruck,
    /// `max_rounds` was reached.
    Deadline,
    /// One or no agent remains.
    AgentsExhausted,
    /// The remaining agents' total power is below `p_min`.
    Unreachable,
}

impl fmt::Display for EndReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndReason::DealStruck => "deal_struck",
            EndReason::Deadline => "deadline",
            EndReason::AgentsExhausted => "agents_exhausted",
            EndReason::Unreachable => "unreachable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidEntry {
    pub agent: AgentId,
    pub bid: Bid,
    pub power: Power,
}

/// Broadcast after bidding: one `(agent, bid, power)` entry per active agent,
/// in roster order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BidAnnouncement {
    pub entries: Vec<BidEntry>,
}

impl BidAnnouncement {
    /// Distinct bids in first-appearance order.
    pub fn bids(&self) -> Vec<Bid> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(&e.bid))
            .map(|e| e.bid.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidVote {
    pub bid: Bid,
    #[serde(flatten)]
    pub vote: Vote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentVotes {
    pub agent: AgentId,
    pub votes: Vec<BidVote>,
}

/// Broadcast after voting: every agent's vote on every table bid, roster
/// order outside and table order inside.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteAnnouncement {
    pub entries: Vec<AgentVotes>,
}

impl VoteAnnouncement {
    pub fn vote_of(&self, agent: &AgentId, bid: &Bid) -> Option<Vote> {
        self.entries
            .iter()
            .find(|e| &e.agent == agent)?
            .votes
            .iter()
            .find(|bv| &bv.bid == bid)
            .map(|bv| bv.vote)
    }

    /// Number of `(agent, bid, vote)` triples.
    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.votes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdViolation {
    #[error("c_min below p_min")]
    CMinBelowPMin,
    #[error("c_max below c_min")]
    CMaxBelowCMin,
    #[error("c_max above p_max")]
    CMaxAbovePMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum OptInViolation {
    #[error("an accepted bid cannot be rejected at opt-in")]
    RejectAfterAccept,
    #[error("c_min cannot be reduced at opt-in")]
    CMinReduced,
    #[error("c_min below p_min")]
    CMinBelowPMin,
    #[error("c_max below c_min")]
    CMaxBelowCMin,
    #[error("c_max above p_max")]
    CMaxAbovePMax,
}

impl From<ThresholdViolation> for OptInViolation {
    fn from(v: ThresholdViolation) -> Self {
        match v {
            ThresholdViolation::CMinBelowPMin => OptInViolation::CMinBelowPMin,
            ThresholdViolation::CMaxBelowCMin => OptInViolation::CMaxBelowCMin,
            ThresholdViolation::CMaxAbovePMax => OptInViolation::CMaxAbovePMax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("agent {0} appears twice in the roster")]
    DuplicateAgent(AgentId),
    #[error("roster is empty")]
    EmptyRoster,
    #[error("a negotiation needs at least two agents")]
    SingleAgent,
    #[error("at most {max} agents are supported, roster has {got}")]
    TooManyAgents { max: usize, got: usize },
    #[error("agent {0} has zero power")]
    ZeroPower(AgentId),
    #[error("p_min {p_min} exceeds the roster's total power {p_max}")]
    PMinExceedsPMax { p_min: u64, p_max: u64 },
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("operation needs phase {expected}, negotiation is in {actual}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("negotiation is over")]
    NegotiationOver,
    #[error("round has not been resolved yet")]
    NotResolved,
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} already bid this round")]
    AlreadyBid(AgentId),
    #[error("agents have not bid: {}", join(.0))]
    MissingBids(Vec<AgentId>),
    #[error("bid {0} is not on the table")]
    UnknownBid(Bid),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(ThresholdViolation),
    #[error("opt-in violation: {0}")]
    OptInViolation(OptInViolation),
    #[error("agent {agent} already voted on {bid}")]
    AlreadyVoted { agent: AgentId, bid: Bid },
    #[error("missing votes: {}", .0.iter().map(|(a, b)| format!("{a}@{b}")).collect::<Vec<_>>().join(", "))]
    MissingVotes(Vec<(AgentId, Bid)>),
}

fn join(ids: &[AgentId]) -> String {
    ids.iter()
        .map(AgentId::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Checks an accept window against `p_min ≤ c_min ≤ c_max ≤ p_max`.
/// `Reject` is always valid.
pub fn validate_vote(vote: Vote, p_min: Power, p_max: u64) -> Result<(), ThresholdViolation> {
    let Vote::Accept { c_min, c_max } = vote else {
        return Ok(());
    };
    if c_min < p_min.get() {
        Err(ThresholdViolation::CMinBelowPMin)
    } else if c_max < c_min {
        Err(ThresholdViolation::CMaxBelowCMin)
    } else if c_max > p_max {
        Err(ThresholdViolation::CMaxAbovePMax)
    } else {
        Ok(())
    }
}

/// Checks an opt-in vote against the same agent's voting-phase vote on the
/// same bid. An accept may not be withdrawn and its `c_min` may not drop; a
/// reject may stay a reject or become any valid accept. The new window must
/// also satisfy `c'_min ≤ c'_max`.
pub fn validate_optin(
    prior: Vote,
    new: Vote,
    p_min: Power,
    p_max: u64,
) -> Result<(), OptInViolation> {
    match (prior, new) {
        (Vote::Reject, new) => validate_vote(new, p_min, p_max).map_err(Into::into),
        (Vote::Accept { .. }, Vote::Reject) => Err(OptInViolation::RejectAfterAccept),
        (Vote::Accept { c_min: old_min, .. }, Vote::Accept { c_min, .. }) if c_min < old_min => {
            Err(OptInViolation::CMinReduced)
        }
        (Vote::Accept { .. }, new) => validate_vote(new, p_min, p_max).map_err(Into::into),
    }
}

/// Full negotiation state across rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiationState {
    pub(crate) params: ProtocolParams,
    pub(crate) roster: Vec<(AgentId, Power)>,
    pub(crate) round_index: u32,
    pub(crate) phase: Phase,
    pub(crate) current_bids: BTreeMap<AgentId, Bid>,
    pub(crate) bid_table: Vec<Bid>,
    pub(crate) votes: BTreeMap<(AgentId, Bid), Vote>,
    pub(crate) optin_votes: BTreeMap<(AgentId, Bid), Vote>,
    pub(crate) deals: Vec<DealRecord>,
    pub(crate) p_max: u64,
    pub(crate) ended: Option<EndReason>,
}

impl NegotiationState {
    /// Sets up round 1 in the bidding phase.
    pub fn new(
        roster: impl IntoIterator<Item = (AgentId, u64)>,
        params: ProtocolParams,
    ) -> Result<Self, ProtocolError> {
        let mut seen = BTreeSet::new();
        let mut checked = Vec::new();
        for (agent, power) in roster {
            if !seen.insert(agent.clone()) {
                return Err(ProtocolError::DuplicateAgent(agent));
            }
            let power = Power::new(power).map_err(|_| ProtocolError::ZeroPower(agent.clone()))?;
            checked.push((agent, power));
        }
        match checked.len() {
            0 => return Err(ProtocolError::EmptyRoster),
            1 => return Err(ProtocolError::SingleAgent),
            n if n > MAX_AGENTS => {
                return Err(ProtocolError::TooManyAgents {
                    max: MAX_AGENTS,
                    got: n,
                })
            }
            _ => {}
        }
        if params.max_rounds == 0 {
            return Err(ProtocolError::ZeroRounds);
        }
        let p_max = total_power(&checked);
        if params.p_min.get() > p_max {
            return Err(ProtocolError::PMinExceedsPMax {
                p_min: params.p_min.get(),
                p_max,
            });
        }
        Ok(Self {
            params,
            roster: checked,
            round_index: 1,
            phase: Phase::Bidding,
            current_bids: BTreeMap::new(),
            bid_table: Vec::new(),
            votes: BTreeMap::new(),
            optin_votes: BTreeMap::new(),
            deals: Vec::new(),
            p_max,
            ended: None,
        })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn roster(&self) -> &[(AgentId, Power)] {
        &self.roster
    }

    pub fn round_index(&self) -> u32 {
        self.round_index
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn p_min(&self) -> Power {
        self.params.p_min
    }

    pub fn p_max(&self) -> u64 {
        self.p_max
    }

    pub fn bid_table(&self) -> &[Bid] {
        &self.bid_table
    }

    pub fn current_bids(&self) -> &BTreeMap<AgentId, Bid> {
        &self.current_bids
    }

    pub fn votes(&self) -> &BTreeMap<(AgentId, Bid), Vote> {
        &self.votes
    }

    pub fn optin_votes(&self) -> &BTreeMap<(AgentId, Bid), Vote> {
        &self.optin_votes
    }

    pub fn deals(&self) -> &[DealRecord] {
        &self.deals
    }

    pub fn is_over(&self) -> bool {
        self.ended.is_some()
    }

    pub fn end_reason(&self) -> Option<EndReason> {
        self.ended
    }

    pub fn power_of(&self, agent: &AgentId) -> Option<Power> {
        self.roster
            .iter()
            .find(|(a, _)| a == agent)
            .map(|&(_, p)| p)
    }

    fn expect_phase(&self, expected: Phase) -> Result<(), ProtocolError> {
        if self.ended.is_some() {
            return Err(ProtocolError::NegotiationOver);
        }
        if self.phase != expected {
            return Err(ProtocolError::WrongPhase {
                expected,
                actual: self.phase,
            });
        }
        Ok(())
    }

    fn expect_agent(&self, agent: &AgentId) -> Result<(), ProtocolError> {
        if self.power_of(agent).is_none() {
            return Err(ProtocolError::UnknownAgent(agent.clone()));
        }
        Ok(())
    }

    fn expect_table_bid(&self, bid: &Bid) -> Result<(), ProtocolError> {
        if !self.bid_table.contains(bid) {
            return Err(ProtocolError::UnknownBid(bid.clone()));
        }
        Ok(())
    }

    pub fn submit_bid(&mut self, agent: &AgentId, bid: Bid) -> Result<(), ProtocolError> {
        self.expect_phase(Phase::Bidding)?;
        self.expect_agent(agent)?;
        if self.current_bids.contains_key(agent) {
            return Err(ProtocolError::AlreadyBid(agent.clone()));
        }
        if !self.bid_table.contains(&bid) {
            self.bid_table.push(bid.clone());
        }
        self.current_bids.insert(agent.clone(), bid);
        Ok(())
    }

    /// Removes an agent that has not bid yet from the current round onward.
    ///
    /// Used by the mediator when an agent misses the bidding deadline. The
    /// negotiation ends if the remaining roster can no longer reach `p_min`
    /// or has fewer than two agents.
    pub fn withdraw_agent(&mut self, agent: &AgentId) -> Result<(), ProtocolError> {
        self.expect_phase(Phase::Bidding)?;
        self.expect_agent(agent)?;
        if self.current_bids.contains_key(agent) {
            return Err(ProtocolError::AlreadyBid(agent.clone()));
        }
        self.roster.retain(|(a, _)| a != agent);
        self.p_max = total_power(&self.roster);
        self.check_reachable();
        Ok(())
    }

    pub(crate) fn check_reachable(&mut self) {
        if self.roster.len() < 2 {
            self.ended = Some(EndReason::AgentsExhausted);
        } else if self.p_max < self.params.p_min.get() {
            self.ended = Some(EndReason::Unreachable);
        }
    }

    pub fn close_bidding(&mut self) -> Result<BidAnnouncement, ProtocolError> {
        self.expect_phase(Phase::Bidding)?;
        let missing: Vec<AgentId> = self
            .roster
            .iter()
            .filter(|(a, _)| !self.current_bids.contains_key(a))
            .map(|(a, _)| a.clone())
            .collect();
        if !missing.is_empty() {
            return Err(ProtocolError::MissingBids(missing));
        }
        self.phase = Phase::Voting;
        Ok(self.bid_announcement())
    }

    /// The announcement for the bids collected so far this round.
    pub fn bid_announcement(&self) -> BidAnnouncement {
        BidAnnouncement {
            entries: self
                .roster
                .iter()
                .filter_map(|(agent, power)| {
                    self.current_bids.get(agent).map(|bid| BidEntry {
                        agent: agent.clone(),
                        bid: bid.clone(),
                        power: *power,
                    })
                })
                .collect(),
        }
    }

    pub fn submit_vote(
        &mut self,
        agent: &AgentId,
        bid: &Bid,
        vote: Vote,
    ) -> Result<(), ProtocolError> {
        self.expect_phase(Phase::Voting)?;
        self.expect_agent(agent)?;
        self.expect_table_bid(bid)?;
        validate_vote(vote, self.params.p_min, self.p_max)
            .map_err(ProtocolError::InvalidThresholds)?;
        let key = (agent.clone(), bid.clone());
        if self.votes.contains_key(&key) {
            return Err(ProtocolError::AlreadyVoted {
                agent: agent.clone(),
                bid: bid.clone(),
            });
        }
        self.votes.insert(key, vote);
        Ok(())
    }

    pub fn close_voting(&mut self) -> Result<VoteAnnouncement, ProtocolError> {
        self.expect_phase(Phase::Voting)?;
        let missing = self.missing_pairs(&self.votes);
        if !missing.is_empty() {
            return Err(ProtocolError::MissingVotes(missing));
        }
        self.phase = Phase::OptIn;
        Ok(self.announce(&self.votes))
    }

    pub fn submit_optin(
        &mut self,
        agent: &AgentId,
        bid: &Bid,
        vote: Vote,
    ) -> Result<(), ProtocolError> {
        self.expect_phase(Phase::OptIn)?;
        self.expect_agent(agent)?;
        self.expect_table_bid(bid)?;
        let key = (agent.clone(), bid.clone());
        let prior = self.votes[&key];
        validate_optin(prior, vote, self.params.p_min, self.p_max)
            .map_err(ProtocolError::OptInViolation)?;
        if self.optin_votes.contains_key(&key) {
            return Err(ProtocolError::AlreadyVoted {
                agent: agent.clone(),
                bid: bid.clone(),
            });
        }
        self.optin_votes.insert(key, vote);
        Ok(())
    }

    pub fn close_optin(&mut self) -> Result<(), ProtocolError> {
        self.expect_phase(Phase::OptIn)?;
        let missing = self.missing_pairs(&self.optin_votes);
        if !missing.is_empty() {
            return Err(ProtocolError::MissingVotes(missing));
        }
        self.phase = Phase::Resolved;
        Ok(())
    }

    /// Opt-in votes in announcement layout. Only meaningful once the round
    /// is resolved.
    pub fn optin_announcement(&self) -> VoteAnnouncement {
        self.announce(&self.optin_votes)
    }

    /// Round data for the consensus engine, available once opt-in closed.
    pub fn resolved_round(&self) -> Option<ResolvedRound> {
        if self.phase != Phase::Resolved {
            return None;
        }
        Some(ResolvedRound {
            round_index: self.round_index,
            p_min: self.params.p_min,
            roster: self.roster.clone(),
            bid_table: self.bid_table.clone(),
            votes: self.optin_votes.clone(),
        })
    }

    fn missing_pairs(&self, votes: &BTreeMap<(AgentId, Bid), Vote>) -> Vec<(AgentId, Bid)> {
        let mut missing = Vec::new();
        for (agent, _) in &self.roster {
            for bid in &self.bid_table {
                let key = (agent.clone(), bid.clone());
                if !votes.contains_key(&key) {
                    missing.push(key);
                }
            }
        }
        missing
    }

    fn announce(&self, votes: &BTreeMap<(AgentId, Bid), Vote>) -> VoteAnnouncement {
        VoteAnnouncement {
            entries: self
                .roster
                .iter()
                .map(|(agent, _)| AgentVotes {
                    agent: agent.clone(),
                    votes: self
                        .bid_table
                        .iter()
                        .filter_map(|bid| {
                            votes
                                .get(&(agent.clone(), bid.clone()))
                                .map(|&vote| BidVote {
                                    bid: bid.clone(),
                                    vote,
                                })
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub(crate) fn total_power(roster: &[(AgentId, Power)]) -> u64 {
    roster.iter().map(|(_, p)| p.get()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TerminationPolicy;

    fn params(p_min: u64) -> ProtocolParams {
        ProtocolParams::new(
            Power::new(p_min).unwrap(),
            3,
            TerminationPolicy::LargestOnly,
            0,
        )
    }

    fn a(s: &str) -> AgentId {
        AgentId::new(s)
    }

    fn b(s: &str) -> Bid {
        Bid::new(s)
    }

    fn s3_state() -> NegotiationState {
        NegotiationState::new([(a("A1"), 2), (a("A2"), 1), (a("A3"), 1)], params(2)).unwrap()
    }

    #[test]
    fn new_negotiation_sums_power() {
        let st = s3_state();
        assert_eq!(st.p_max(), 4);
        assert_eq!(st.phase(), Phase::Bidding);
        assert_eq!(st.round_index(), 1);
        assert!(st.deals().is_empty());
    }

    #[test]
    fn new_negotiation_errors() {
        assert_eq!(
            NegotiationState::new([(a("A1"), 1), (a("A1"), 2)], params(1)),
            Err(ProtocolError::DuplicateAgent(a("A1")))
        );
        assert_eq!(
            NegotiationState::new([(a("A1"), 1), (a("A2"), 1)], params(3)),
            Err(ProtocolError::PMinExceedsPMax { p_min: 3, p_max: 2 })
        );
        assert_eq!(
            NegotiationState::new(Vec::<(AgentId, u64)>::new(), params(1)),
            Err(ProtocolError::EmptyRoster)
        );
        assert_eq!(
            NegotiationState::new([(a("A1"), 4)], params(1)),
            Err(ProtocolError::SingleAgent)
        );
        assert_eq!(
            NegotiationState::new([(a("A1"), 4), (a("A2"), 0)], params(1)),
            Err(ProtocolError::ZeroPower(a("A2")))
        );
    }

    #[test]
    fn bidding_guards() {
        let mut st = s3_state();
        st.submit_bid(&a("A1"), b("b1")).unwrap();
        assert_eq!(
            st.submit_bid(&a("A1"), b("b2")),
            Err(ProtocolError::AlreadyBid(a("A1")))
        );
        assert_eq!(
            st.submit_bid(&a("A9"), b("b2")),
            Err(ProtocolError::UnknownAgent(a("A9")))
        );
        assert_eq!(
            st.close_bidding(),
            Err(ProtocolError::MissingBids(vec![a("A2"), a("A3")]))
        );
        st.submit_bid(&a("A2"), b("b2")).unwrap();
        st.submit_bid(&a("A3"), b("b1")).unwrap();
        let ann = st.close_bidding().unwrap();
        assert_eq!(st.bid_table(), &[b("b1"), b("b2")]);
        let triples: Vec<_> = ann
            .entries
            .iter()
            .map(|e| (e.agent.as_str(), e.bid.as_str(), e.power.get()))
            .collect();
        assert_eq!(
            triples,
            vec![("A1", "b1", 2), ("A2", "b2", 1), ("A3", "b1", 1)]
        );
        assert_eq!(
            st.submit_bid(&a("A1"), b("b1")),
            Err(ProtocolError::WrongPhase {
                expected: Phase::Bidding,
                actual: Phase::Voting
            })
        );
    }

    #[test]
    fn identical_bids_merge() {
        let mut st = s3_state();
        for id in ["A1", "A2", "A3"] {
            st.submit_bid(&a(id), b("b1")).unwrap();
        }
        st.close_bidding().unwrap();
        assert_eq!(st.bid_table(), &[b("b1")]);
    }

    #[test]
    fn validate_vote_boundaries() {
        let p2 = Power::new(2).unwrap();
        assert_eq!(validate_vote(Vote::accept(2, 4), p2, 4), Ok(()));
        assert_eq!(
            validate_vote(Vote::accept(1, 4), p2, 4),
            Err(ThresholdViolation::CMinBelowPMin)
        );
        assert_eq!(
            validate_vote(Vote::accept(3, 2), p2, 4),
            Err(ThresholdViolation::CMaxBelowCMin)
        );
        assert_eq!(
            validate_vote(Vote::accept(2, 5), p2, 4),
            Err(ThresholdViolation::CMaxAbovePMax)
        );
        assert_eq!(validate_vote(Vote::Reject, p2, 4), Ok(()));
    }

    #[test]
    fn validate_optin_rules() {
        let p2 = Power::new(2).unwrap();
        assert_eq!(
            validate_optin(Vote::accept(2, 4), Vote::accept(3, 4), p2, 4),
            Ok(())
        );
        assert_eq!(
            validate_optin(Vote::accept(2, 4), Vote::Reject, p2, 4),
            Err(OptInViolation::RejectAfterAccept)
        );
        assert_eq!(
            validate_optin(Vote::Reject, Vote::accept(2, 3), p2, 4),
            Ok(())
        );
        assert_eq!(
            validate_optin(Vote::accept(2, 4), Vote::accept(1, 4), p2, 4),
            Err(OptInViolation::CMinReduced)
        );
        assert_eq!(
            validate_optin(Vote::accept(2, 2), Vote::accept(2, 4), p2, 4),
            Ok(())
        );
        assert_eq!(
            validate_optin(Vote::accept(2, 4), Vote::accept(4, 3), p2, 4),
            Err(OptInViolation::CMaxBelowCMin)
        );
        assert_eq!(
            validate_optin(Vote::Reject, Vote::accept(1, 3), p2, 4),
            Err(OptInViolation::CMinBelowPMin)
        );
    }

    fn to_voting(st: &mut NegotiationState) {
        st.submit_bid(&a("A1"), b("b1")).unwrap();
        st.submit_bid(&a("A2"), b("b2")).unwrap();
        st.submit_bid(&a("A3"), b("b1")).unwrap();
        st.close_bidding().unwrap();
    }

    #[test]
    fn voting_guards_and_announcement() {
        let mut st = s3_state();
        to_voting(&mut st);
        st.submit_vote(&a("A3"), &b("b1"), Vote::accept(2, 3))
            .unwrap();
        assert_eq!(
            st.submit_vote(&a("A1"), &b("b9"), Vote::Reject),
            Err(ProtocolError::UnknownBid(b("b9")))
        );
        assert_eq!(
            st.submit_vote(&a("A1"), &b("b1"), Vote::accept(2, 5)),
            Err(ProtocolError::InvalidThresholds(
                ThresholdViolation::CMaxAbovePMax
            ))
        );
        assert_eq!(
            st.submit_vote(&a("A3"), &b("b1"), Vote::Reject),
            Err(ProtocolError::AlreadyVoted {
                agent: a("A3"),
                bid: b("b1")
            })
        );
        for (id, bid) in [("A1", "b1"), ("A1", "b2"), ("A2", "b1"), ("A3", "b2")] {
            st.submit_vote(&a(id), &b(bid), Vote::Reject).unwrap();
        }
        assert_eq!(
            st.close_voting(),
            Err(ProtocolError::MissingVotes(vec![(a("A2"), b("b2"))]))
        );
        st.submit_vote(&a("A2"), &b("b2"), Vote::accept(2, 2))
            .unwrap();
        let ann = st.close_voting().unwrap();
        assert_eq!(ann.entries.len(), 3);
        assert!(ann.entries.iter().all(|e| e.votes.len() == 2));
        assert_eq!(ann.len(), 6);
        assert_eq!(ann.vote_of(&a("A3"), &b("b1")), Some(Vote::accept(2, 3)));
    }

    #[test]
    fn optin_phase() {
        let mut st = s3_state();
        to_voting(&mut st);
        for (id, _) in st.roster().to_vec() {
            st.submit_vote(&id, &b("b1"), Vote::Reject).unwrap();
            st.submit_vote(&id, &b("b2"), Vote::accept(2, 2)).unwrap();
        }
        st.close_voting().unwrap();
        st.submit_optin(&a("A1"), &b("b1"), Vote::Reject).unwrap();
        st.submit_optin(&a("A1"), &b("b2"), Vote::accept(2, 4))
            .unwrap();
        assert_eq!(
            st.submit_optin(&a("A2"), &b("b2"), Vote::Reject),
            Err(ProtocolError::OptInViolation(
                OptInViolation::RejectAfterAccept
            ))
        );
        assert!(matches!(st.close_optin(), Err(ProtocolError::MissingVotes(m)) if m.len() == 4));
        assert!(st.resolved_round().is_none());
        for id in ["A2", "A3"] {
            st.submit_optin(&a(id), &b("b1"), Vote::accept(3, 4))
                .unwrap();
            st.submit_optin(&a(id), &b("b2"), Vote::accept(2, 2))
                .unwrap();
        }
        st.close_optin().unwrap();
        assert_eq!(st.phase(), Phase::Resolved);
        let round = st.resolved_round().unwrap();
        assert_eq!(round.votes.len(), 6);
    }

    #[test]
    fn failed_ops_leave_state_untouched() {
        let mut st = s3_state();
        let snapshot = st.clone();
        assert!(st.submit_vote(&a("A1"), &b("b1"), Vote::Reject).is_err());
        assert!(st.submit_optin(&a("A1"), &b("b1"), Vote::Reject).is_err());
        assert!(st.close_voting().is_err());
        assert!(st.close_optin().is_err());
        assert!(st.close_bidding().is_err());
        assert_eq!(st, snapshot);
    }

    #[test]
    fn withdraw_recomputes_p_max() {
        let mut st =
            NegotiationState::new([(a("A1"), 2), (a("A2"), 1), (a("A3"), 1)], params(3)).unwrap();
        st.withdraw_agent(&a("A3")).unwrap();
        assert_eq!(st.p_max(), 3);
        assert!(!st.is_over());
        st.withdraw_agent(&a("A2")).unwrap();
        assert_eq!(st.end_reason(), Some(EndReason::AgentsExhausted));
    }
}
