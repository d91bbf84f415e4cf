//! Strategy boundary for simulated and remote participants, plus the three
//! built-in strategies.
//!
//! A strategy only ever sees its own [`RoundContext`] and the two public
//! announcements; there is no way to reach another agent's configuration.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{BidAnnouncement, VoteAnnouncement};
use crate::types::{AgentId, Bid, Power, Vote};

/// Votes on every bid of a request, keyed by bid.
pub type Ballot = BTreeMap<Bid, Vote>;

/// What an agent knows about itself and the round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundContext {
    pub agent: AgentId,
    pub power: Power,
    pub round: u32,
    pub p_min: Power,
    pub p_max: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidRequest {
    pub ctx: RoundContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub ctx: RoundContext,
    pub bids: BidAnnouncement,
}

impl VoteRequest {
    pub fn table(&self) -> Vec<Bid> {
        self.bids.bids()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptInRequest {
    pub ctx: RoundContext,
    pub bids: BidAnnouncement,
    pub votes: VoteAnnouncement,
}

impl OptInRequest {
    pub fn table(&self) -> Vec<Bid> {
        self.bids.bids()
    }

    /// This agent's own voting-phase vote on `bid`.
    pub fn own_vote(&self, bid: &Bid) -> Option<Vote> {
        self.votes.vote_of(&self.ctx.agent, bid)
    }

    /// Total power of the agents that accepted `bid` in the voting phase.
    pub fn acceptor_power(&self, bid: &Bid) -> u64 {
        self.bids
            .entries
            .iter()
            .filter(|e| {
                self.votes
                    .vote_of(&e.agent, bid)
                    .is_some_and(|v| v.is_accept())
            })
            .map(|e| e.power.get())
            .sum()
    }
}

/// One scripted response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentAction {
    PlaceBid(Bid),
    CastVotes(Ballot),
    CastOptIn(Ballot),
}

impl AgentAction {
    fn kind(&self) -> &'static str {
        match self {
            AgentAction::PlaceBid(_) => "bid",
            AgentAction::CastVotes(_) => "vote",
            AgentAction::CastOptIn(_) => "optin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StrategyError {
    #[error("script has no action left for the {0} request")]
    ScriptExhausted(&'static str),
    #[error("script expected a {expected} action but the request is {requested}")]
    ScriptMismatch {
        expected: &'static str,
        requested: &'static str,
    },
    #[error("strategy has an empty bid space")]
    EmptyBidSpace,
}

/// A participant's decision procedure, one call per phase.
pub trait Strategy: Send {
    fn on_bid_request(&mut self, req: &BidRequest) -> Result<Bid, StrategyError>;
    fn on_vote_request(&mut self, req: &VoteRequest) -> Result<Ballot, StrategyError>;
    fn on_optin_request(&mut self, req: &OptInRequest) -> Result<Ballot, StrategyError>;
}

/// Replays a fixed list of actions in request order.
#[derive(Debug, Clone)]
pub struct Scripted {
    actions: VecDeque<AgentAction>,
}

impl Scripted {
    pub fn new(actions: impl IntoIterator<Item = AgentAction>) -> Self {
        Self {
            actions: actions.into_iter().collect(),
        }
    }

    fn next(&mut self, requested: &'static str) -> Result<AgentAction, StrategyError> {
        let action = self
            .actions
            .front()
            .ok_or(StrategyError::ScriptExhausted(requested))?;
        if action.kind() != requested {
            return Err(StrategyError::ScriptMismatch {
                expected: action.kind(),
                requested,
            });
        }
        Ok(self.actions.pop_front().expect("checked"))
    }
}

impl Strategy for Scripted {
    fn on_bid_request(&mut self, _: &BidRequest) -> Result<Bid, StrategyError> {
        match self.next("bid")? {
            AgentAction::PlaceBid(b) => Ok(b),
            _ => unreachable!(),
        }
    }

    fn on_vote_request(&mut self, _: &VoteRequest) -> Result<Ballot, StrategyError> {
        match self.next("vote")? {
            AgentAction::CastVotes(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    fn on_optin_request(&mut self, _: &OptInRequest) -> Result<Ballot, StrategyError> {
        match self.next("optin")? {
            AgentAction::CastOptIn(v) => Ok(v),
            _ => unreachable!(),
        }
    }
}

/// How a utility agent sizes its accept windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowRule {
    /// `(p_min, p_max)`.
    FullRange,
    /// Fractions of `p_max`, rounded inward and clamped to a legal window.
    FixedWindow { lo: f64, hi: f64 },
    /// `(⌊p_max/2⌋ + 1, p_max)`, raised to `p_min` if needed.
    MajorityFloor,
}

impl WindowRule {
    /// The window for the given round bounds; always legal when
    /// `p_min ≤ p_max`.
    pub fn window(self, p_min: u64, p_max: u64) -> (u64, u64) {
        let (lo, hi) = match self {
            WindowRule::FullRange => (p_min, p_max),
            WindowRule::FixedWindow { lo, hi } => {
                let pm = p_max as f64;
                ((lo * pm).ceil() as u64, (hi * pm).floor() as u64)
            }
            WindowRule::MajorityFloor => (p_max / 2 + 1, p_max),
        };
        let lo = lo.clamp(p_min, p_max);
        (lo, hi.clamp(lo, p_max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    /// Utility in `[0, 1]` per bid; bids not listed count as 0.
    pub utilities: BTreeMap<Bid, f64>,
    pub reservation: f64,
    pub window_rule: WindowRule,
}

impl PreferenceProfile {
    pub fn utility(&self, bid: &Bid) -> f64 {
        self.utilities.get(bid).copied().unwrap_or(0.0)
    }
}

/// Bids its favourite, accepts what clears the reservation value, and at
/// opt-in joins rejected bids that already drew enough support.
#[derive(Debug, Clone)]
pub struct UtilityThreshold {
    profile: PreferenceProfile,
}

impl UtilityThreshold {
    pub fn new(profile: PreferenceProfile) -> Self {
        Self { profile }
    }
}

impl Strategy for UtilityThreshold {
    fn on_bid_request(&mut self, _: &BidRequest) -> Result<Bid, StrategyError> {
        // max_by keeps the last maximum; iterate in reverse so ties go to
        // the smallest token.
        self.profile
            .utilities
            .iter()
            .rev()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(bid, _)| bid.clone())
            .ok_or(StrategyError::EmptyBidSpace)
    }

    fn on_vote_request(&mut self, req: &VoteRequest) -> Result<Ballot, StrategyError> {
        let (lo, hi) = self
            .profile
            .window_rule
            .window(req.ctx.p_min.get(), req.ctx.p_max);
        Ok(req
            .table()
            .into_iter()
            .map(|bid| {
                let vote = if self.profile.utility(&bid) >= self.profile.reservation {
                    Vote::accept(lo, hi)
                } else {
                    Vote::Reject
                };
                (bid, vote)
            })
            .collect())
    }

    fn on_optin_request(&mut self, req: &OptInRequest) -> Result<Ballot, StrategyError> {
        let (lo, hi) = self
            .profile
            .window_rule
            .window(req.ctx.p_min.get(), req.ctx.p_max);
        Ok(req
            .table()
            .into_iter()
            .map(|bid| {
                let vote = match req.own_vote(&bid) {
                    Some(accepted @ Vote::Accept { .. }) => accepted,
                    _ if req.acceptor_power(&bid) >= lo => Vote::accept(lo, hi),
                    _ => Vote::Reject,
                };
                (bid, vote)
            })
            .collect())
    }
}

/// Uniformly random legal actions from a seeded generator.
#[derive(Debug, Clone)]
pub struct RandomStrategy {
    rng: ChaCha8Rng,
    bid_space: Vec<Bid>,
}

impl RandomStrategy {
    pub fn new(seed: u64, bid_space: Vec<Bid>) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            bid_space,
        }
    }

    fn window(&mut self, floor: u64, p_max: u64) -> Vote {
        let c_min = self.rng.gen_range(floor..=p_max);
        let c_max = self.rng.gen_range(c_min..=p_max);
        Vote::accept(c_min, c_max)
    }
}

impl Strategy for RandomStrategy {
    fn on_bid_request(&mut self, _: &BidRequest) -> Result<Bid, StrategyError> {
        if self.bid_space.is_empty() {
            return Err(StrategyError::EmptyBidSpace);
        }
        let i = self.rng.gen_range(0..self.bid_space.len());
        Ok(self.bid_space[i].clone())
    }

    fn on_vote_request(&mut self, req: &VoteRequest) -> Result<Ballot, StrategyError> {
        let (p_min, p_max) = (req.ctx.p_min.get(), req.ctx.p_max);
        Ok(req
            .table()
            .into_iter()
            .map(|bid| {
                let vote = if self.rng.gen_bool(0.5) {
                    self.window(p_min, p_max)
                } else {
                    Vote::Reject
                };
                (bid, vote)
            })
            .collect())
    }

    fn on_optin_request(&mut self, req: &OptInRequest) -> Result<Ballot, StrategyError> {
        let (p_min, p_max) = (req.ctx.p_min.get(), req.ctx.p_max);
        Ok(req
            .table()
            .into_iter()
            .map(|bid| {
                let vote = match req.own_vote(&bid) {
                    Some(Vote::Accept { c_min, .. }) => self.window(c_min, p_max),
                    _ if self.rng.gen_bool(0.5) => self.window(p_min, p_max),
                    _ => Vote::Reject,
                };
                (bid, vote)
            })
            .collect())
    }
}

/// Per-agent strategy configuration, as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    Scripted { actions: Vec<AgentAction> },
    Utility { profile: PreferenceProfile },
    Random { seed: u64 },
}

impl StrategyConfig {
    pub fn build(&self, bid_space: &[Bid]) -> Box<dyn Strategy> {
        match self {
            StrategyConfig::Scripted { actions } => Box::new(Scripted::new(actions.clone())),
            StrategyConfig::Utility { profile } => Box::new(UtilityThreshold::new(profile.clone())),
            StrategyConfig::Random { seed } => {
                Box::new(RandomStrategy::new(*seed, bid_space.to_vec()))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StrategyConfig::Scripted { .. } => "scripted",
            StrategyConfig::Utility { .. } => "utility",
            StrategyConfig::Random { .. } => "random",
        }
    }
}

/// Checks that a ballot covers exactly the requested bids.
pub fn check_ballot(ballot: &Ballot, table: &[Bid]) -> Result<(), String> {
    if let Some(extra) = ballot.keys().find(|b| !table.contains(b)) {
        return Err(format!("vote on {extra}, which is not on the table"));
    }
    let missing: Vec<&str> = table
        .iter()
        .filter(|b| !ballot.contains_key(*b))
        .map(Bid::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(format!("no vote on {}", missing.join(", ")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{validate_optin, validate_vote, AgentVotes, BidEntry, BidVote};

    fn ctx(p_max: u64) -> RoundContext {
        RoundContext {
            agent: AgentId::new("A1"),
            power: Power::new(1).unwrap(),
            round: 1,
            p_min: Power::new(2).unwrap(),
            p_max,
        }
    }

    fn bids(entries: &[(&str, &str, u64)]) -> BidAnnouncement {
        BidAnnouncement {
            entries: entries
                .iter()
                .map(|&(a, b, p)| BidEntry {
                    agent: AgentId::new(a),
                    bid: Bid::new(b),
                    power: Power::new(p).unwrap(),
                })
                .collect(),
        }
    }

    fn votes(rows: &[(&str, &[(&str, Vote)])]) -> VoteAnnouncement {
        VoteAnnouncement {
            entries: rows
                .iter()
                .map(|(a, vs)| AgentVotes {
                    agent: AgentId::new(*a),
                    votes: vs
                        .iter()
                        .map(|(b, v)| BidVote {
                            bid: Bid::new(*b),
                            vote: *v,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn profile(rule: WindowRule) -> PreferenceProfile {
        PreferenceProfile {
            utilities: [(Bid::new("b1"), 0.9), (Bid::new("b2"), 0.3)]
                .into_iter()
                .collect(),
            reservation: 0.5,
            window_rule: rule,
        }
    }

    #[test]
    fn scripted_replays_then_exhausts() {
        let mut s = Scripted::new([AgentAction::PlaceBid(Bid::new("b1"))]);
        let req = BidRequest { ctx: ctx(4) };
        assert_eq!(s.on_bid_request(&req), Ok(Bid::new("b1")));
        assert_eq!(
            s.on_bid_request(&req),
            Err(StrategyError::ScriptExhausted("bid"))
        );
        let mut empty = Scripted::new([]);
        assert_eq!(
            empty.on_bid_request(&req),
            Err(StrategyError::ScriptExhausted("bid"))
        );
        let mut wrong = Scripted::new([AgentAction::CastVotes(Ballot::new())]);
        assert!(matches!(
            wrong.on_bid_request(&req),
            Err(StrategyError::ScriptMismatch {
                expected: "vote",
                ..
            })
        ));
    }

    #[test]
    fn utility_bids_and_votes() {
        let mut s = UtilityThreshold::new(profile(WindowRule::FullRange));
        assert_eq!(
            s.on_bid_request(&BidRequest { ctx: ctx(4) }),
            Ok(Bid::new("b1"))
        );
        let req = VoteRequest {
            ctx: ctx(4),
            bids: bids(&[("A1", "b1", 1), ("A2", "b2", 3)]),
        };
        let ballot = s.on_vote_request(&req).unwrap();
        assert_eq!(ballot[&Bid::new("b1")], Vote::accept(2, 4));
        assert_eq!(ballot[&Bid::new("b2")], Vote::Reject);
    }

    #[test]
    fn window_rules() {
        assert_eq!(WindowRule::MajorityFloor.window(2, 4), (3, 4));
        assert_eq!(WindowRule::MajorityFloor.window(4, 5), (4, 5));
        assert_eq!(WindowRule::FullRange.window(2, 7), (2, 7));
        assert_eq!(
            WindowRule::FixedWindow { lo: 0.3, hi: 0.5 }.window(2, 10),
            (3, 5)
        );
        assert_eq!(
            WindowRule::FixedWindow { lo: 0.0, hi: 0.1 }.window(2, 10),
            (2, 2)
        );
        assert_eq!(
            WindowRule::FixedWindow { lo: 0.9, hi: 2.0 }.window(2, 10),
            (9, 10)
        );
    }

    #[test]
    fn utility_optin_flip() {
        // A1 rejected b2; A2 (power 3) accepted it, which meets A1's floor of 3.
        let mut s = UtilityThreshold::new(profile(WindowRule::MajorityFloor));
        let req = OptInRequest {
            ctx: ctx(4),
            bids: bids(&[("A1", "b1", 1), ("A2", "b2", 3)]),
            votes: votes(&[
                ("A1", &[("b1", Vote::accept(3, 4)), ("b2", Vote::Reject)]),
                ("A2", &[("b1", Vote::Reject), ("b2", Vote::accept(2, 4))]),
            ]),
        };
        let ballot = s.on_optin_request(&req).unwrap();
        assert_eq!(ballot[&Bid::new("b1")], Vote::accept(3, 4));
        assert_eq!(ballot[&Bid::new("b2")], Vote::accept(3, 4));

        // With A2 at power 2 the acceptors fall short of the floor.
        let mut weak = req.clone();
        weak.bids = bids(&[("A1", "b1", 1), ("A2", "b2", 2)]);
        let ballot = s.on_optin_request(&weak).unwrap();
        assert_eq!(ballot[&Bid::new("b2")], Vote::Reject);
    }

    #[test]
    fn random_is_legal_and_deterministic() {
        let space: Vec<Bid> = ["x", "y", "z"].into_iter().map(Bid::new).collect();
        let p_min = Power::new(2).unwrap();
        let trial = |seed: u64| {
            let mut s = RandomStrategy::new(seed, space.clone());
            let mut log = Vec::new();
            for p_max in 2..=9u64 {
                let mut c = ctx(p_max);
                c.p_min = p_min;
                let bid = s.on_bid_request(&BidRequest { ctx: c.clone() }).unwrap();
                let ann = bids(&[("A1", bid.as_str(), 1), ("A2", "y", 1)]);
                let vreq = VoteRequest {
                    ctx: c.clone(),
                    bids: ann.clone(),
                };
                let ballot = s.on_vote_request(&vreq).unwrap();
                check_ballot(&ballot, &vreq.table()).unwrap();
                for v in ballot.values() {
                    assert_eq!(validate_vote(*v, p_min, p_max), Ok(()));
                }
                let rows: Vec<(&str, Vec<(&str, Vote)>)> =
                    vec![("A1", ballot.iter().map(|(b, v)| (b.as_str(), *v)).collect())];
                let va = VoteAnnouncement {
                    entries: rows
                        .iter()
                        .map(|(a, vs)| AgentVotes {
                            agent: AgentId::new(*a),
                            votes: vs
                                .iter()
                                .map(|(b, v)| BidVote {
                                    bid: Bid::new(*b),
                                    vote: *v,
                                })
                                .collect(),
                        })
                        .collect(),
                };
                let oreq = OptInRequest {
                    ctx: c,
                    bids: ann,
                    votes: va,
                };
                let opt = s.on_optin_request(&oreq).unwrap();
                for (b, v) in &opt {
                    assert_eq!(validate_optin(ballot[b], *v, p_min, p_max), Ok(()));
                }
                log.push((bid, ballot, opt));
            }
            log
        };
        for seed in 0..200 {
            assert_eq!(trial(seed), trial(seed));
        }
    }

    #[test]
    fn ballot_coverage() {
        let table = vec![Bid::new("b1"), Bid::new("b2")];
        let mut ballot = Ballot::new();
        ballot.insert(Bid::new("b1"), Vote::Reject);
        assert!(check_ballot(&ballot, &table).unwrap_err().contains("b2"));
        ballot.insert(Bid::new("b2"), Vote::Reject);
        assert!(check_ballot(&ballot, &table).is_ok());
        ballot.insert(Bid::new("b3"), Vote::Reject);
        assert!(check_ballot(&ballot, &table).is_err());
    }
}
