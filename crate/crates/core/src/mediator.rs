//! Networked mediator: runs the negotiation state machine for remote agents.
//!
//! [`Session`] holds all protocol logic and is transport agnostic: it takes
//! one incoming message (or a phase deadline) at a time and returns the
//! messages to send. [`serve`] wraps it in a TCP server where every
//! connection has its own reader thread and all messages are funneled into
//! a single queue, so the state machine never runs concurrently.
//!
//! Within a phase, actions are applied independently of arrival order: bids
//! are buffered and submitted in roster order when bidding closes, and the
//! trace records submissions in roster order at phase close.
//!
//! Silent agents get defaults when the phase deadline passes: no bid means
//! the agent is dropped, a missing vote becomes `Reject`, and a missing
//! opt-in repeats the agent's voting-phase vote.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::agents::{check_ballot, BidRequest, OptInRequest, Strategy, VoteRequest};
use crate::consensus::Engine;
use crate::protocol::{
    BidAnnouncement, BidVote, NegotiationState, OptInViolation, Phase, ProtocolError,
    VoteAnnouncement,
};
use crate::resolution::{tie_breaker, DealRecord, TieBreaker};
use crate::scenario::SessionConfig;
use crate::sim::{context, ended_event, finish_round, header};
use crate::trace::{EventKind, TraceEvent, TraceRecorder};
use crate::types::{AgentId, Bid, Vote};
use crate::wire::{ErrorCode, ResultStatus, WireMessage, PROTOCOL_VERSION};

pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub conn: ConnId,
    pub msg: WireMessage,
}

/// One mediated negotiation.
pub struct Session {
    config: SessionConfig,
    state: NegotiationState,
    engine: Engine,
    rng: TieBreaker,
    rec: TraceRecorder,
    conns: BTreeMap<AgentId, ConnId>,
    started: bool,
    pending_bids: BTreeMap<AgentId, Bid>,
    substituted: BTreeSet<(AgentId, Bid)>,
    bids: BidAnnouncement,
    votes: VoteAnnouncement,
    epoch: u64,
}

impl Session {
    pub fn new(config: SessionConfig, engine: Engine) -> Result<Self, ProtocolError> {
        let roster = config.roster.iter().map(|(a, p, _)| (a.clone(), p.get()));
        let state = NegotiationState::new(roster, config.params.clone())?;
        let mut rec = TraceRecorder::new();
        rec.push(1, Phase::Bidding, header(&config.session, &state));
        Ok(Self {
            rng: tie_breaker(state.params().rng_seed),
            config,
            state,
            engine,
            rec,
            conns: BTreeMap::new(),
            started: false,
            pending_bids: BTreeMap::new(),
            substituted: BTreeSet::new(),
            bids: BidAnnouncement::default(),
            votes: VoteAnnouncement::default(),
            epoch: 0,
        })
    }

    pub fn state(&self) -> &NegotiationState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.rec.events()
    }

    pub fn deals(&self) -> &[DealRecord] {
        self.state.deals()
    }

    pub fn is_finished(&self) -> bool {
        self.state.is_over()
    }

    /// Whether the session is still waiting for registrations.
    pub fn is_registering(&self) -> bool {
        !self.started
    }

    /// Changes whenever a new phase starts; used to reset the deadline.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn phase_timeout(&self) -> Duration {
        self.config.phase_timeout
    }

    fn token_of(&self, agent: &AgentId) -> Option<&str> {
        self.config
            .roster
            .iter()
            .find(|(a, _, _)| a == agent)
            .map(|(_, _, t)| t.as_str())
    }

    fn to(&self, agent: &AgentId, msg: WireMessage) -> Option<Outbound> {
        self.conns.get(agent).map(|&conn| Outbound { conn, msg })
    }

    fn reply(conn: ConnId, code: ErrorCode, message: impl Into<String>) -> Vec<Outbound> {
        vec![Outbound {
            conn,
            msg: WireMessage::error(code, message),
        }]
    }

    pub fn handle(&mut self, conn: ConnId, msg: WireMessage) -> Vec<Outbound> {
        match msg {
            WireMessage::Register {
                protocol_version,
                session,
                agent,
                token,
            } => self.register(conn, protocol_version, session, agent, token),
            WireMessage::Bid {
                session,
                agent,
                token,
                bid,
            } => match self.authenticate(conn, &session, &agent, &token) {
                Err(e) => e,
                Ok(()) => self.on_bid(conn, agent, bid),
            },
            WireMessage::Vote {
                session,
                agent,
                token,
                votes,
            } => match self.authenticate(conn, &session, &agent, &token) {
                Err(e) => e,
                Ok(()) => self.on_votes(conn, agent, votes, Phase::Voting),
            },
            WireMessage::Optin {
                session,
                agent,
                token,
                votes,
            } => match self.authenticate(conn, &session, &agent, &token) {
                Err(e) => e,
                Ok(()) => self.on_votes(conn, agent, votes, Phase::OptIn),
            },
            _ => Self::reply(conn, ErrorCode::BadMessage, "not a client message"),
        }
    }

    fn register(
        &mut self,
        conn: ConnId,
        version: u32,
        session: String,
        agent: AgentId,
        token: String,
    ) -> Vec<Outbound> {
        if version != PROTOCOL_VERSION {
            return Self::reply(
                conn,
                ErrorCode::UnsupportedVersion,
                format!("protocol_version must be {PROTOCOL_VERSION}"),
            );
        }
        if session != self.config.session || self.token_of(&agent) != Some(token.as_str()) {
            return Self::reply(
                conn,
                ErrorCode::AuthFailed,
                "unknown session, agent or token",
            );
        }
        if self.conns.contains_key(&agent) {
            return Self::reply(
                conn,
                ErrorCode::DuplicateRegistration,
                format!("{agent} is already registered"),
            );
        }
        self.conns.insert(agent.clone(), conn);
        let mut out = vec![Outbound {
            conn,
            msg: WireMessage::Registered {
                protocol_version: PROTOCOL_VERSION,
                session,
                agent,
            },
        }];
        if self.conns.len() == self.config.roster.len() {
            self.started = true;
            out.extend(self.open_bidding());
        }
        out
    }

    fn authenticate(
        &self,
        conn: ConnId,
        session: &str,
        agent: &AgentId,
        token: &str,
    ) -> Result<(), Vec<Outbound>> {
        let ok = session == self.config.session
            && self.token_of(agent) == Some(token)
            && self.conns.get(agent) == Some(&conn);
        if !ok {
            return Err(Self::reply(
                conn,
                ErrorCode::AuthFailed,
                "unknown session, agent or token",
            ));
        }
        if self.state.is_over() {
            return Err(Self::reply(
                conn,
                ErrorCode::SessionClosed,
                "negotiation is over",
            ));
        }
        if self.state.power_of(agent).is_none() {
            return Err(Self::reply(
                conn,
                ErrorCode::UnknownAgent,
                format!("{agent} is no longer negotiating"),
            ));
        }
        Ok(())
    }

    fn wrong_phase(&self, conn: ConnId, expected: Phase) -> Option<Vec<Outbound>> {
        let actual = if self.started {
            self.state.phase()
        } else {
            Phase::Bidding
        };
        (!self.started || actual != expected).then(|| {
            Self::reply(
                conn,
                ErrorCode::WrongPhase,
                format!("expected phase {expected}, session is in {actual}"),
            )
        })
    }

    fn on_bid(&mut self, conn: ConnId, agent: AgentId, bid: Bid) -> Vec<Outbound> {
        if let Some(e) = self.wrong_phase(conn, Phase::Bidding) {
            return e;
        }
        if self.pending_bids.contains_key(&agent) {
            return Self::reply(conn, ErrorCode::AlreadyBid, format!("{agent} already bid"));
        }
        self.pending_bids.insert(agent, bid);
        if self.pending_bids.len() == self.state.roster().len() {
            self.close_bidding()
        } else {
            Vec::new()
        }
    }

    fn on_votes(
        &mut self,
        conn: ConnId,
        agent: AgentId,
        votes: Vec<BidVote>,
        phase: Phase,
    ) -> Vec<Outbound> {
        if let Some(e) = self.wrong_phase(conn, phase) {
            return e;
        }
        // All or nothing: a message with any invalid entry is discarded.
        let mut trial = self.state.clone();
        for BidVote { bid, vote } in &votes {
            let r = match phase {
                Phase::Voting => trial.submit_vote(&agent, bid, *vote),
                _ => trial.submit_optin(&agent, bid, *vote),
            };
            if let Err(e) = r {
                return Self::reply(conn, error_code(&e), e.to_string());
            }
        }
        self.state = trial;
        let complete = match phase {
            Phase::Voting => self.state.votes().len(),
            _ => self.state.optin_votes().len(),
        } == self.state.roster().len() * self.state.bid_table().len();
        match (complete, phase) {
            (false, _) => Vec::new(),
            (true, Phase::Voting) => self.close_voting(),
            (true, _) => self.close_optin(),
        }
    }

    /// Applies the defaults for the current phase and moves on.
    pub fn on_timeout(&mut self) -> Vec<Outbound> {
        if !self.started || self.state.is_over() {
            return Vec::new();
        }
        match self.state.phase() {
            Phase::Bidding => self.close_bidding(),
            Phase::Voting => {
                for (agent, bid) in self.missing(Phase::Voting) {
                    self.state
                        .submit_vote(&agent, &bid, Vote::Reject)
                        .expect("reject is always legal");
                    self.substituted.insert((agent, bid));
                }
                self.close_voting()
            }
            Phase::OptIn => {
                for (agent, bid) in self.missing(Phase::OptIn) {
                    let prior = self.state.votes()[&(agent.clone(), bid.clone())];
                    self.state
                        .submit_optin(&agent, &bid, prior)
                        .expect("repeating the voting-phase vote is always legal");
                    self.substituted.insert((agent, bid));
                }
                self.close_optin()
            }
            Phase::Resolved => Vec::new(),
        }
    }

    fn missing(&self, phase: Phase) -> Vec<(AgentId, Bid)> {
        let have = match phase {
            Phase::Voting => self.state.votes(),
            _ => self.state.optin_votes(),
        };
        let mut out = Vec::new();
        for (agent, _) in self.state.roster() {
            for bid in self.state.bid_table() {
                let key = (agent.clone(), bid.clone());
                if !have.contains_key(&key) {
                    out.push(key);
                }
            }
        }
        out
    }

    fn open_bidding(&mut self) -> Vec<Outbound> {
        self.epoch += 1;
        self.pending_bids.clear();
        self.substituted.clear();
        let agents: Vec<AgentId> = self.state.roster().iter().map(|(a, _)| a.clone()).collect();
        agents
            .iter()
            .filter_map(|a| {
                let msg = WireMessage::BidRequest {
                    session: self.config.session.clone(),
                    request: BidRequest {
                        ctx: context(&self.state, a),
                    },
                };
                self.to(a, msg)
            })
            .collect()
    }

    fn close_bidding(&mut self) -> Vec<Outbound> {
        let round = self.state.round_index();
        let mut out = Vec::new();
        let roster: Vec<AgentId> = self.state.roster().iter().map(|(a, _)| a.clone()).collect();
        for agent in &roster {
            if !self.pending_bids.contains_key(agent) {
                self.state
                    .withdraw_agent(agent)
                    .expect("silent agent can be withdrawn");
                self.rec.push(
                    round,
                    Phase::Bidding,
                    EventKind::AgentDropped {
                        agent: agent.clone(),
                        p_max: self.state.p_max(),
                    },
                );
                out.extend(self.to(agent, self.result(agent, ResultStatus::Dropped, None, true)));
                if self.state.is_over() {
                    break;
                }
            }
        }
        if self.state.is_over() {
            self.rec
                .push(round, Phase::Bidding, ended_event(&self.state));
            let left: Vec<AgentId> = self.state.roster().iter().map(|(a, _)| a.clone()).collect();
            for agent in left {
                out.extend(self.to(
                    &agent,
                    self.result(&agent, ResultStatus::NoDeal, None, true),
                ));
            }
            return out;
        }
        let active: Vec<AgentId> = self.state.roster().iter().map(|(a, _)| a.clone()).collect();
        for agent in &active {
            let bid = self.pending_bids[agent].clone();
            self.state
                .submit_bid(agent, bid.clone())
                .expect("buffered bid is valid");
            self.rec.push(
                round,
                Phase::Bidding,
                EventKind::BidSubmitted {
                    agent: agent.clone(),
                    bid,
                },
            );
        }
        self.bids = self.state.close_bidding().expect("every agent bid");
        self.rec.push(
            round,
            Phase::Bidding,
            EventKind::BidAnnouncement(self.bids.clone()),
        );
        self.epoch += 1;
        for agent in &active {
            let ann = WireMessage::BidAnnouncement {
                session: self.config.session.clone(),
                round,
                announcement: self.bids.clone(),
            };
            let req = WireMessage::VoteRequest {
                session: self.config.session.clone(),
                request: VoteRequest {
                    ctx: context(&self.state, agent),
                    bids: self.bids.clone(),
                },
            };
            out.extend(self.to(agent, ann));
            out.extend(self.to(agent, req));
        }
        out
    }

    fn record_submissions(&mut self, phase: Phase) {
        let round = self.state.round_index();
        let votes = match phase {
            Phase::Voting => self.state.votes().clone(),
            _ => self.state.optin_votes().clone(),
        };
        for (agent, _) in self.state.roster() {
            for bid in self.state.bid_table() {
                let key = (agent.clone(), bid.clone());
                let vote = votes[&key];
                let substituted = self.substituted.contains(&key);
                let (agent, bid) = key;
                let event = match phase {
                    Phase::Voting => EventKind::VoteSubmitted {
                        agent,
                        bid,
                        vote,
                        substituted,
                    },
                    _ => EventKind::OptInSubmitted {
                        agent,
                        bid,
                        vote,
                        substituted,
                    },
                };
                self.rec.push(round, phase, event);
            }
        }
        self.substituted.clear();
    }

    fn close_voting(&mut self) -> Vec<Outbound> {
        self.record_submissions(Phase::Voting);
        let round = self.state.round_index();
        self.votes = self.state.close_voting().expect("every pair voted");
        self.rec.push(
            round,
            Phase::Voting,
            EventKind::VoteAnnouncement(self.votes.clone()),
        );
        self.epoch += 1;
        let mut out = Vec::new();
        let active: Vec<AgentId> = self.state.roster().iter().map(|(a, _)| a.clone()).collect();
        for agent in &active {
            let ann = WireMessage::VoteAnnouncement {
                session: self.config.session.clone(),
                round,
                announcement: self.votes.clone(),
            };
            let req = WireMessage::OptinRequest {
                session: self.config.session.clone(),
                request: OptInRequest {
                    ctx: context(&self.state, agent),
                    bids: self.bids.clone(),
                    votes: self.votes.clone(),
                },
            };
            out.extend(self.to(agent, ann));
            out.extend(self.to(agent, req));
        }
        out
    }

    fn close_optin(&mut self) -> Vec<Outbound> {
        self.record_submissions(Phase::OptIn);
        self.state.close_optin().expect("every pair re-voted");
        let round = self.state.round_index();
        let roster: Vec<AgentId> = self.state.roster().iter().map(|(a, _)| a.clone()).collect();
        let (_, outcome) = finish_round(&mut self.state, self.engine, &mut self.rng, &mut self.rec)
            .expect("round is resolved");
        let over = self.state.is_over();
        let mut out = Vec::new();
        for agent in &roster {
            let deal = outcome
                .deals
                .iter()
                .find(|d| d.members.contains(agent))
                .cloned();
            let msg = match (&deal, over) {
                (Some(_), _) => {
                    self.result_at(round, agent, ResultStatus::Deal, deal.clone(), true)
                }
                (None, true) => self.result_at(round, agent, ResultStatus::NoDeal, None, true),
                (None, false) => self.result_at(round, agent, ResultStatus::Continue, None, false),
            };
            out.extend(self.to(agent, msg));
        }
        if !over {
            out.extend(self.open_bidding());
        }
        out
    }

    fn result(
        &self,
        agent: &AgentId,
        status: ResultStatus,
        deal: Option<DealRecord>,
        is_final: bool,
    ) -> WireMessage {
        self.result_at(self.state.round_index(), agent, status, deal, is_final)
    }

    fn result_at(
        &self,
        round: u32,
        agent: &AgentId,
        status: ResultStatus,
        deal: Option<DealRecord>,
        is_final: bool,
    ) -> WireMessage {
        WireMessage::Outcome {
            session: self.config.session.clone(),
            agent: agent.clone(),
            round,
            status,
            deal,
            is_final,
        }
    }
}

fn error_code(e: &ProtocolError) -> ErrorCode {
    match e {
        ProtocolError::WrongPhase { .. } | ProtocolError::NotResolved => ErrorCode::WrongPhase,
        ProtocolError::NegotiationOver => ErrorCode::SessionClosed,
        ProtocolError::UnknownAgent(_) => ErrorCode::UnknownAgent,
        ProtocolError::UnknownBid(_) => ErrorCode::UnknownBid,
        ProtocolError::AlreadyBid(_) => ErrorCode::AlreadyBid,
        ProtocolError::AlreadyVoted { .. } => ErrorCode::AlreadyVoted,
        ProtocolError::InvalidThresholds(_) => ErrorCode::InvalidThresholds,
        ProtocolError::OptInViolation(
            OptInViolation::RejectAfterAccept | OptInViolation::CMinReduced,
        ) => ErrorCode::OptinViolation,
        ProtocolError::OptInViolation(_) => ErrorCode::InvalidThresholds,
        _ => ErrorCode::BadMessage,
    }
}

/// What a finished [`serve`] call returns.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub state: NegotiationState,
    pub trace: Vec<TraceEvent>,
}

enum NetEvent {
    Connected(ConnId, TcpStream),
    Line(ConnId, String),
    Closed(ConnId),
}

/// Runs one session on `listener` until the negotiation ends.
pub fn serve(
    config: SessionConfig,
    engine: Engine,
    listener: TcpListener,
) -> io::Result<SessionReport> {
    let mut session = Session::new(config, engine)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let (tx, rx) = mpsc::channel::<NetEvent>();
    let stop = Arc::new(AtomicBool::new(false));
    listener.set_nonblocking(true)?;
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, tx, stop))
    };

    let mut writers: BTreeMap<ConnId, TcpStream> = BTreeMap::new();
    let mut epoch = session.epoch();
    let mut deadline = Instant::now() + session.phase_timeout();
    while !session.is_finished() {
        let wait = deadline.saturating_duration_since(Instant::now());
        let out = match rx.recv_timeout(wait) {
            Ok(NetEvent::Connected(conn, stream)) => {
                writers.insert(conn, stream);
                Vec::new()
            }
            Ok(NetEvent::Line(conn, line)) => match WireMessage::from_line(&line) {
                Ok(msg) => session.handle(conn, msg),
                Err(e) => Session::reply(conn, ErrorCode::BadMessage, e.to_string()),
            },
            Ok(NetEvent::Closed(conn)) => {
                writers.remove(&conn);
                Vec::new()
            }
            Err(mpsc::RecvTimeoutError::Timeout) => session.on_timeout(),
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        };
        for Outbound { conn, msg } in out {
            if let Some(w) = writers.get_mut(&conn) {
                // A failed write is treated like a silent agent.
                let _ = w.write_all(msg.to_line().as_bytes());
            }
        }
        if session.epoch() != epoch || session.is_registering() {
            epoch = session.epoch();
            deadline = Instant::now() + session.phase_timeout();
        }
    }
    stop.store(true, Ordering::Relaxed);
    for w in writers.values() {
        let _ = w.shutdown(std::net::Shutdown::Both);
    }
    let _ = acceptor.join();
    Ok(SessionReport {
        state: session.state().clone(),
        trace: session.trace().to_vec(),
    })
}

fn accept_loop(listener: TcpListener, tx: mpsc::Sender<NetEvent>, stop: Arc<AtomicBool>) {
    let mut next: ConnId = 0;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let conn = next;
                next += 1;
                let _ = stream.set_nonblocking(false);
                let Ok(writer) = stream.try_clone() else {
                    continue;
                };
                if tx.send(NetEvent::Connected(conn, writer)).is_err() {
                    return;
                }
                let tx = tx.clone();
                thread::spawn(move || {
                    for line in BufReader::new(stream).lines() {
                        let Ok(line) = line else { break };
                        if line.trim().is_empty() {
                            continue;
                        }
                        if tx.send(NetEvent::Line(conn, line)).is_err() {
                            return;
                        }
                    }
                    let _ = tx.send(NetEvent::Closed(conn));
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5))
            }
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

/// What a remote agent saw during a session.
#[derive(Debug, Clone, Default)]
pub struct ClientReport {
    pub results: Vec<WireMessage>,
    pub errors: Vec<WireMessage>,
    pub bid_announcements: Vec<BidAnnouncement>,
    pub vote_announcements: Vec<VoteAnnouncement>,
}

impl ClientReport {
    /// The deal this agent ended up in, if any.
    pub fn deal(&self) -> Option<&DealRecord> {
        self.results.iter().find_map(|m| match m {
            WireMessage::Outcome { deal: Some(d), .. } => Some(d),
            _ => None,
        })
    }
}

/// Connects to a mediator and answers its requests with `strategy` until a
/// final result arrives or the server closes the connection.
pub fn run_client(
    addr: impl ToSocketAddrs,
    session: &str,
    agent: &AgentId,
    token: &str,
    strategy: &mut dyn Strategy,
) -> io::Result<ClientReport> {
    let stream = TcpStream::connect(addr)?;
    let mut writer = stream.try_clone()?;
    let mut send = |msg: WireMessage| writer.write_all(msg.to_line().as_bytes());
    send(WireMessage::Register {
        protocol_version: PROTOCOL_VERSION,
        session: session.to_owned(),
        agent: agent.clone(),
        token: token.to_owned(),
    })?;
    let mut report = ClientReport::default();
    let strategy_err = |e: crate::agents::StrategyError| io::Error::other(e.to_string());
    for line in BufReader::new(stream).lines() {
        let line = line?;
        let msg = WireMessage::from_line(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        match msg {
            WireMessage::BidRequest { request, .. } => {
                let bid = strategy.on_bid_request(&request).map_err(strategy_err)?;
                send(WireMessage::Bid {
                    session: session.to_owned(),
                    agent: agent.clone(),
                    token: token.to_owned(),
                    bid,
                })?;
            }
            WireMessage::VoteRequest { request, .. } => {
                let ballot = strategy.on_vote_request(&request).map_err(strategy_err)?;
                check_ballot(&ballot, &request.table()).map_err(io::Error::other)?;
                send(WireMessage::Vote {
                    session: session.to_owned(),
                    agent: agent.clone(),
                    token: token.to_owned(),
                    votes: ballot
                        .into_iter()
                        .map(|(bid, vote)| BidVote { bid, vote })
                        .collect(),
                })?;
            }
            WireMessage::OptinRequest { request, .. } => {
                let ballot = strategy.on_optin_request(&request).map_err(strategy_err)?;
                check_ballot(&ballot, &request.table()).map_err(io::Error::other)?;
                send(WireMessage::Optin {
                    session: session.to_owned(),
                    agent: agent.clone(),
                    token: token.to_owned(),
                    votes: ballot
                        .into_iter()
                        .map(|(bid, vote)| BidVote { bid, vote })
                        .collect(),
                })?;
            }
            WireMessage::BidAnnouncement { announcement, .. } => {
                report.bid_announcements.push(announcement)
            }
            WireMessage::VoteAnnouncement { announcement, .. } => {
                report.vote_announcements.push(announcement)
            }
            m @ WireMessage::Outcome { is_final, .. } => {
                report.results.push(m);
                if is_final {
                    break;
                }
            }
            m @ WireMessage::Error { .. } => report.errors.push(m),
            _ => {}
        }
    }
    Ok(report)
}

/// Binds `addr`, returning the listener and the bound address.
pub fn bind(addr: impl ToSocketAddrs) -> io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
