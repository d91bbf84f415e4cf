//! In-process negotiation runs driven by the strategies of a [`Scenario`],
//! and replay of recorded traces.

use crate::agents::{check_ballot, BidRequest, OptInRequest, RoundContext, Strategy, VoteRequest};
use crate::consensus::{Engine, ViableGroup};
use crate::protocol::{BidAnnouncement, NegotiationState, Phase, ProtocolError, VoteAnnouncement};
use crate::resolution::{self, advance_round, tie_breaker, DealRecord, TieBreaker, RNG_ALGORITHM};
use crate::scenario::Scenario;
use crate::trace::{EventKind, TraceEvent, TraceRecorder};
use crate::types::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("strategy of agent {agent} misbehaved: {detail}")]
    StrategyViolation { agent: AgentId, detail: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// A run that stopped early, with the trace up to the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: SimError,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub state: NegotiationState,
    pub trace: Vec<TraceEvent>,
}

impl RunReport {
    pub fn deals(&self) -> &[DealRecord] {
        self.state.deals()
    }
}

pub(crate) fn header(scenario: &str, state: &NegotiationState) -> EventKind {
    EventKind::NegotiationStarted {
        scenario: scenario.to_owned(),
        params: state.params().clone(),
        roster: state.roster().to_vec(),
        rng: RNG_ALGORITHM.to_owned(),
    }
}

pub(crate) fn context(state: &NegotiationState, agent: &AgentId) -> RoundContext {
    RoundContext {
        agent: agent.clone(),
        power: state.power_of(agent).expect("active agent"),
        round: state.round_index(),
        p_min: state.p_min(),
        p_max: state.p_max(),
    }
}

/// Computes viable groups, resolves, records deals and moves the state to
/// the next round or to its end. Shared by the simulator and the mediator.
pub(crate) fn finish_round(
    state: &mut NegotiationState,
    engine: Engine,
    rng: &mut TieBreaker,
    rec: &mut TraceRecorder,
) -> Result<(Vec<ViableGroup>, resolution::RoundOutcome), ProtocolError> {
    let round = state.resolved_round().ok_or(ProtocolError::NotResolved)?;
    let groups = engine.viable_groups(&round);
    let r = round.round_index;
    rec.push(
        r,
        Phase::Resolved,
        EventKind::ViableGroupsComputed {
            groups: groups.clone(),
        },
    );
    let params = state.params().clone();
    let outcome = resolution::resolve(params.policy, &round, &groups, params.max_rounds, rng);
    for deal in &outcome.deals {
        rec.push(r, Phase::Resolved, EventKind::DealStruck(deal.clone()));
    }
    advance_round(state, &outcome)?;
    if state.is_over() {
        rec.push(r, Phase::Resolved, ended_event(state));
    } else {
        rec.push(
            r,
            Phase::Resolved,
            EventKind::RoundContinued {
                continuing: outcome.continuing_agents.clone(),
                p_max: state.p_max(),
            },
        );
    }
    Ok((groups, outcome))
}

pub(crate) fn ended_event(state: &NegotiationState) -> EventKind {
    let dealt: Vec<&AgentId> = state.deals().iter().flat_map(|d| &d.members).collect();
    let undealt = state
        .roster()
        .iter()
        .map(|(a, _)| a)
        .filter(|a| !dealt.contains(a))
        .cloned()
        .collect();
    EventKind::NegotiationEnded {
        reason: state.end_reason().expect("ended"),
        rounds: state.round_index(),
        deals: state.deals().to_vec(),
        undealt,
    }
}

/// Steps a negotiation one phase at a time.
pub struct Runner {
    scenario: String,
    state: NegotiationState,
    strategies: Vec<(AgentId, Box<dyn Strategy>)>,
    rng: TieBreaker,
    engine: Engine,
    rec: TraceRecorder,
    bids: BidAnnouncement,
    votes: VoteAnnouncement,
}

impl Runner {
    pub fn new(scenario: &Scenario, seed: Option<u64>, engine: Engine) -> Result<Self, SimError> {
        let mut params = scenario.params.clone();
        if let Some(seed) = seed {
            params.rng_seed = seed;
        }
        let state = NegotiationState::new(scenario.roster(), params)?;
        let strategies = scenario
            .agents
            .iter()
            .map(|a| (a.id.clone(), a.strategy.build(&scenario.bid_space)))
            .collect();
        let mut rec = TraceRecorder::new();
        rec.push(1, Phase::Bidding, header(&scenario.name, &state));
        Ok(Self {
            scenario: scenario.name.clone(),
            rng: tie_breaker(state.params().rng_seed),
            state,
            strategies,
            engine,
            rec,
            bids: BidAnnouncement::default(),
            votes: VoteAnnouncement::default(),
        })
    }

    pub fn scenario(&self) -> &str {
        &self.scenario
    }

    pub fn state(&self) -> &NegotiationState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.rec.events()
    }

    pub fn is_over(&self) -> bool {
        self.state.is_over()
    }

    /// Runs the current phase to completion. Returns `false` once the
    /// negotiation is over.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.state.is_over() {
            return Ok(false);
        }
        match self.state.phase() {
            Phase::Bidding => self.bidding()?,
            Phase::Voting => self.voting()?,
            Phase::OptIn => self.optin()?,
            Phase::Resolved => {
                finish_round(&mut self.state, self.engine, &mut self.rng, &mut self.rec)?;
            }
        }
        Ok(!self.state.is_over())
    }

    pub fn run_to_end(mut self) -> Result<RunReport, RunFailure> {
        loop {
            match self.step() {
                Ok(true) => {}
                Ok(false) => {
                    return Ok(RunReport {
                        state: self.state,
                        trace: self.rec.into_events(),
                    })
                }
                Err(error) => {
                    return Err(RunFailure {
                        error,
                        trace: self.rec.into_events(),
                    })
                }
            }
        }
    }

    fn active(&mut self) -> Vec<(AgentId, usize)> {
        self.state
            .roster()
            .iter()
            .map(|(a, _)| {
                let i = self
                    .strategies
                    .iter()
                    .position(|(id, _)| id == a)
                    .expect("every rostered agent has a strategy");
                (a.clone(), i)
            })
            .collect()
    }

    fn bidding(&mut self) -> Result<(), SimError> {
        let round = self.state.round_index();
        for (agent, i) in self.active() {
            let req = BidRequest {
                ctx: context(&self.state, &agent),
            };
            let bid = self.strategies[i]
                .1
                .on_bid_request(&req)
                .map_err(|e| violation(&agent, e))?;
            self.state
                .submit_bid(&agent, bid.clone())
                .map_err(|e| violation(&agent, e))?;
            self.rec.push(
                round,
                Phase::Bidding,
                EventKind::BidSubmitted { agent, bid },
            );
        }
        self.bids = self.state.close_bidding()?;
        self.rec.push(
            round,
            Phase::Bidding,
            EventKind::BidAnnouncement(self.bids.clone()),
        );
        Ok(())
    }

    fn voting(&mut self) -> Result<(), SimError> {
        let round = self.state.round_index();
        let table = self.state.bid_table().to_vec();
        for (agent, i) in self.active() {
            let req = VoteRequest {
                ctx: context(&self.state, &agent),
                bids: self.bids.clone(),
            };
            let ballot = self.strategies[i]
                .1
                .on_vote_request(&req)
                .map_err(|e| violation(&agent, e))?;
            check_ballot(&ballot, &table).map_err(|e| violation(&agent, e))?;
            for bid in &table {
                let vote = ballot[bid];
                self.state
                    .submit_vote(&agent, bid, vote)
                    .map_err(|e| violation(&agent, e))?;
                self.rec.push(
                    round,
                    Phase::Voting,
                    EventKind::VoteSubmitted {
                        agent: agent.clone(),
                        bid: bid.clone(),
                        vote,
                        substituted: false,
                    },
                );
            }
        }
        self.votes = self.state.close_voting()?;
        self.rec.push(
            round,
            Phase::Voting,
            EventKind::VoteAnnouncement(self.votes.clone()),
        );
        Ok(())
    }

    fn optin(&mut self) -> Result<(), SimError> {
        let round = self.state.round_index();
        let table = self.state.bid_table().to_vec();
        for (agent, i) in self.active() {
            let req = OptInRequest {
                ctx: context(&self.state, &agent),
                bids: self.bids.clone(),
                votes: self.votes.clone(),
            };
            let ballot = self.strategies[i]
                .1
                .on_optin_request(&req)
                .map_err(|e| violation(&agent, e))?;
            check_ballot(&ballot, &table).map_err(|e| violation(&agent, e))?;
            for bid in &table {
                let vote = ballot[bid];
                self.state
                    .submit_optin(&agent, bid, vote)
                    .map_err(|e| violation(&agent, e))?;
                self.rec.push(
                    round,
                    Phase::OptIn,
                    EventKind::OptInSubmitted {
                        agent: agent.clone(),
                        bid: bid.clone(),
                        vote,
                        substituted: false,
                    },
                );
            }
        }
        self.state.close_optin()?;
        Ok(())
    }
}

fn violation(agent: &AgentId, detail: impl std::fmt::Display) -> SimError {
    SimError::StrategyViolation {
        agent: agent.clone(),
        detail: detail.to_string(),
    }
}

/// Runs a scenario to the end.
pub fn run(
    scenario: &Scenario,
    seed: Option<u64>,
    engine: Engine,
) -> Result<RunReport, RunFailure> {
    match Runner::new(scenario, seed, engine) {
        Ok(runner) => runner.run_to_end(),
        Err(error) => Err(RunFailure {
            error,
            trace: Vec::new(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("trace does not start with NegotiationStarted")]
    MissingHeader,
    #[error("event {seq}: {source}")]
    Protocol { seq: u64, source: ProtocolError },
    #[error("event {seq}: recorded {what} differs from the recomputed one")]
    Mismatch { seq: u64, what: &'static str },
    #[error("trace ends before the negotiation does")]
    Truncated,
}

/// Feeds a trace's submissions back through the state machine and checks
/// that announcements, viable groups and deals come out the same.
pub fn replay(events: &[TraceEvent], engine: Engine) -> Result<NegotiationState, ReplayError> {
    let Some(EventKind::NegotiationStarted { params, roster, .. }) =
        events.first().map(|e| &e.event)
    else {
        return Err(ReplayError::MissingHeader);
    };
    let roster = roster.iter().map(|(a, p)| (a.clone(), p.get()));
    let mut state = NegotiationState::new(roster, params.clone())
        .map_err(|source| ReplayError::Protocol { seq: 0, source })?;
    let mut rng = tie_breaker(params.rng_seed);
    let mut scratch = TraceRecorder::new();
    let mut expected: std::collections::VecDeque<EventKind> = Default::default();

    for e in &events[1..] {
        let seq = e.seq;
        let proto = |source| ReplayError::Protocol { seq, source };
        let mismatch = |what| ReplayError::Mismatch { seq, what };
        if let Some(want) = expected.pop_front() {
            if want != e.event {
                return Err(mismatch(e.event.name()));
            }
            continue;
        }
        match &e.event {
            EventKind::BidSubmitted { agent, bid } => {
                state.submit_bid(agent, bid.clone()).map_err(proto)?
            }
            EventKind::AgentDropped { agent, .. } => state.withdraw_agent(agent).map_err(proto)?,
            EventKind::BidAnnouncement(ann) => {
                if &state.close_bidding().map_err(proto)? != ann {
                    return Err(mismatch("bid announcement"));
                }
            }
            EventKind::VoteSubmitted {
                agent, bid, vote, ..
            } => state.submit_vote(agent, bid, *vote).map_err(proto)?,
            EventKind::VoteAnnouncement(ann) => {
                if &state.close_voting().map_err(proto)? != ann {
                    return Err(mismatch("vote announcement"));
                }
            }
            EventKind::OptInSubmitted {
                agent, bid, vote, ..
            } => state.submit_optin(agent, bid, *vote).map_err(proto)?,
            EventKind::ViableGroupsComputed { .. } => {
                state.close_optin().map_err(proto)?;
                let start = scratch.events().len();
                finish_round(&mut state, engine, &mut rng, &mut scratch).map_err(proto)?;
                let produced: Vec<EventKind> = scratch.events()[start..]
                    .iter()
                    .map(|e| e.event.clone())
                    .collect();
                if produced[0] != e.event {
                    return Err(mismatch("viable group list"));
                }
                expected.extend(produced.into_iter().skip(1));
            }
            EventKind::NegotiationEnded { .. } => {
                // Only reachable here when a drop made the negotiation end.
                if !state.is_over() || ended_event(&state) != e.event {
                    return Err(mismatch("end of negotiation"));
                }
            }
            EventKind::NegotiationStarted { .. }
            | EventKind::DealStruck(_)
            | EventKind::RoundContinued { .. } => return Err(mismatch(e.event.name())),
        }
    }
    if !expected.is_empty() || !state.is_over() {
        return Err(ReplayError::Truncated);
    }
    Ok(state)
}
