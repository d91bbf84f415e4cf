//! Shared helpers for the integration tests: an independent brute-force
//! oracle, random instance generators and mediator drivers.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::thread;
use std::time::Duration;

use mopac::agents::{Ballot, BidRequest, OptInRequest, Strategy, StrategyError, VoteRequest};
use mopac::mediator::{bind, run_client, serve, Session};
use mopac::protocol::BidVote;
use mopac::trace::TraceEvent;
use mopac::wire::WireMessage;
use mopac::{AgentId, Bid, Engine, Power, ResolvedRound, Scenario, SessionConfig, Vote};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A plain-data round: agent powers and, per (agent, bid), an optional
/// accept window (`None` means reject).
#[derive(Debug, Clone)]
pub struct PlainRound {
    pub agents: Vec<(String, u64)>,
    pub bids: Vec<String>,
    pub windows: BTreeMap<(String, String), Option<(u64, u64)>>,
}

impl PlainRound {
    pub fn from_round(r: &ResolvedRound) -> Self {
        let mut windows = BTreeMap::new();
        for ((a, b), v) in &r.votes {
            let w = match v {
                Vote::Reject => None,
                Vote::Accept { c_min, c_max } => Some((*c_min, *c_max)),
            };
            windows.insert((a.as_str().to_owned(), b.as_str().to_owned()), w);
        }
        PlainRound {
            agents: r
                .roster
                .iter()
                .map(|(a, p)| (a.as_str().to_owned(), p.get()))
                .collect(),
            bids: r.bid_table.iter().map(|b| b.as_str().to_owned()).collect(),
            windows,
        }
    }
}

/// Every viable group as (bid, sorted members), found by checking every
/// subset of the roster against the definition directly.
pub fn oracle_viable(r: &PlainRound) -> BTreeSet<(String, Vec<String>)> {
    let n = r.agents.len();
    let mut out = BTreeSet::new();
    for bid in &r.bids {
        for mask in 0u64..(1u64 << n) {
            if mask.count_ones() < 2 {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let total: u64 = members.iter().map(|&i| r.agents[i].1).sum();
            let ok = members.iter().all(|&i| {
                match r.windows.get(&(r.agents[i].0.clone(), bid.clone())) {
                    Some(Some((lo, hi))) => *lo <= total && total <= *hi,
                    _ => false,
                }
            });
            if ok {
                let mut names: Vec<String> =
                    members.iter().map(|&i| r.agents[i].0.clone()).collect();
                names.sort();
                out.insert((bid.clone(), names));
            }
        }
    }
    out
}

pub fn groups_as_plain(groups: &[mopac::ViableGroup]) -> BTreeSet<(String, Vec<String>)> {
    groups
        .iter()
        .map(|g| {
            let mut m: Vec<String> = g.members().iter().map(|a| a.as_str().to_owned()).collect();
            m.sort();
            (g.bid().as_str().to_owned(), m)
        })
        .collect()
}

/// Opt-in legality, restated from the rules: the new vote must be a valid
/// window, an accept may not become a reject, and c_min may not go down.
pub fn optin_allowed(prior: Vote, new: Vote, p_min: u64, p_max: u64) -> bool {
    let valid = |v: Vote| match v {
        Vote::Reject => true,
        Vote::Accept { c_min, c_max } => p_min <= c_min && c_min <= c_max && c_max <= p_max,
    };
    if !valid(new) {
        return false;
    }
    match (prior, new) {
        (Vote::Reject, _) => true,
        (Vote::Accept { .. }, Vote::Reject) => false,
        (Vote::Accept { c_min: a, .. }, Vote::Accept { c_min: b, .. }) => b >= a,
    }
}

/// A random round with `n` agents and `k` bids whose votes are all valid.
pub fn random_round(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ResolvedRound {
    let roster: Vec<(AgentId, Power)> = (0..n)
        .map(|i| {
            (
                AgentId::new(format!("A{i}")),
                Power::new(rng.gen_range(1..=4)).unwrap(),
            )
        })
        .collect();
    let p_max: u64 = roster.iter().map(|(_, p)| p.get()).sum();
    let p_min = rng.gen_range(1..=p_max.min(4));
    let bid_table: Vec<Bid> = (0..k).map(|j| Bid::new(format!("b{j}"))).collect();
    let mut votes = BTreeMap::new();
    for (a, _) in &roster {
        for b in &bid_table {
            let v = if rng.gen_bool(0.6) {
                let lo = rng.gen_range(p_min..=p_max);
                let hi = rng.gen_range(lo..=p_max);
                Vote::accept(lo, hi)
            } else {
                Vote::Reject
            };
            votes.insert((a.clone(), b.clone()), v);
        }
    }
    ResolvedRound {
        round_index: 1,
        p_min: Power::new(p_min).unwrap(),
        roster,
        bid_table,
        votes,
    }
}

/// Scenario text with `n` agents mixing random and utility strategies.
pub fn random_scenario_text(rng: &mut ChaCha8Rng, n: usize, max_rounds: u32) -> String {
    let bids = ["b1", "b2", "b3"];
    let policy = if rng.gen_bool(0.5) { "one" } else { "two" };
    let mut s = format!(
        "name = random\np_min = {}\nmax_rounds = {max_rounds}\npolicy = {policy}\nseed = {}\nbids = b1 b2 b3\n",
        rng.gen_range(1..=2),
        rng.gen::<u32>()
    );
    for i in 0..n {
        s.push_str(&format!(
            "\n[agent A{i}]\npower = {}\n",
            rng.gen_range(1..=3)
        ));
        if rng.gen_bool(0.5) {
            s.push_str(&format!("strategy = random\nseed = {}\n", rng.gen::<u32>()));
        } else {
            let utils: Vec<String> = bids
                .iter()
                .map(|b| format!("{b}:{:.2}", rng.gen_range(0.0..1.0)))
                .collect();
            let window = match rng.gen_range(0..3) {
                0 => "full".to_owned(),
                1 => "majority".to_owned(),
                _ => {
                    let lo: f64 = rng.gen_range(0.0..0.6);
                    let hi: f64 = (lo + rng.gen_range(0.1..0.5)).min(1.0);
                    format!("fixed {lo:.2} {hi:.2}")
                }
            };
            s.push_str(&format!(
                "strategy = utility\nutility = {}\nreservation = {:.2}\nwindow = {window}\n",
                utils.join(" "),
                rng.gen_range(0.2..0.8)
            ));
        }
    }
    s
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ballot_to_wire(ballot: Ballot) -> Vec<BidVote> {
    ballot
        .into_iter()
        .map(|(bid, vote)| BidVote { bid, vote })
        .collect()
}

/// Drives a [`Session`] in memory. Each phase, agents answer in `order`
/// (a permutation of roster positions); connection ids equal positions.
pub fn mediate_in_memory(scenario: &Scenario, order: &[usize]) -> Session {
    let config = SessionConfig::for_scenario(scenario, Duration::from_secs(5));
    let mut session = Session::new(config, Engine::Pruned).unwrap();
    let agents = &scenario.agents;
    let mut strategies: Vec<Box<dyn Strategy>> = agents
        .iter()
        .map(|a| a.strategy.build(&scenario.bid_space))
        .collect();
    let mut inbox: Vec<VecDeque<WireMessage>> = vec![VecDeque::new(); agents.len()];
    let mut out = Vec::new();
    for &i in order {
        out.extend(session.handle(
            i as u64,
            WireMessage::Register {
                protocol_version: 1,
                session: scenario.name.clone(),
                agent: agents[i].id.clone(),
                token: format!("token-{}", agents[i].id),
            },
        ));
    }
    loop {
        for o in out.drain(..) {
            inbox[o.conn as usize].push_back(o.msg);
        }
        if session.is_finished() {
            return session;
        }
        let mut replies = Vec::new();
        for &i in order {
            let id = agents[i].id.clone();
            let token = format!("token-{id}");
            let session_name = scenario.name.clone();
            while let Some(m) = inbox[i].pop_front() {
                let reply = match m {
                    WireMessage::BidRequest { request, .. } => Some(WireMessage::Bid {
                        session: session_name.clone(),
                        agent: id.clone(),
                        token: token.clone(),
                        bid: strategies[i].on_bid_request(&request).unwrap(),
                    }),
                    WireMessage::VoteRequest { request, .. } => Some(WireMessage::Vote {
                        session: session_name.clone(),
                        agent: id.clone(),
                        token: token.clone(),
                        votes: ballot_to_wire(strategies[i].on_vote_request(&request).unwrap()),
                    }),
                    WireMessage::OptinRequest { request, .. } => Some(WireMessage::Optin {
                        session: session_name.clone(),
                        agent: id.clone(),
                        token: token.clone(),
                        votes: ballot_to_wire(strategies[i].on_optin_request(&request).unwrap()),
                    }),
                    WireMessage::Error { code, message } => panic!("{id}: {code:?} {message}"),
                    _ => None,
                };
                replies.extend(reply.map(|r| (i, r)));
            }
        }
        assert!(!replies.is_empty(), "session stalled");
        for (i, r) in replies {
            out.extend(session.handle(i as u64, r));
        }
    }
}

/// Wraps a strategy so every answer is sent after a fixed delay.
pub struct Delayed {
    pub inner: Box<dyn Strategy>,
    pub delay: Duration,
}

impl Strategy for Delayed {
    fn on_bid_request(&mut self, req: &BidRequest) -> Result<Bid, StrategyError> {
        thread::sleep(self.delay);
        self.inner.on_bid_request(req)
    }
    fn on_vote_request(&mut self, req: &VoteRequest) -> Result<Ballot, StrategyError> {
        thread::sleep(self.delay);
        self.inner.on_vote_request(req)
    }
    fn on_optin_request(&mut self, req: &OptInRequest) -> Result<Ballot, StrategyError> {
        thread::sleep(self.delay);
        self.inner.on_optin_request(req)
    }
}

/// Runs `scenario` through the TCP mediator. Agent at roster position `i`
/// answers after `delays[i]`.
pub fn mediate_over_tcp(scenario: &Scenario, delays: &[Duration]) -> Vec<TraceEvent> {
    let config = SessionConfig::for_scenario(scenario, Duration::from_secs(5));
    let (listener, addr) = bind("127.0.0.1:0").unwrap();
    let server = thread::spawn(move || serve(config, Engine::Pruned, listener).unwrap());
    let clients: Vec<_> = scenario
        .agents
        .iter()
        .zip(delays)
        .map(|(a, &delay)| {
            let id = a.id.clone();
            let session = scenario.name.clone();
            let mut strategy = Delayed {
                inner: a.strategy.build(&scenario.bid_space),
                delay,
            };
            thread::spawn(move || {
                run_client(addr, &session, &id, &format!("token-{id}"), &mut strategy).unwrap()
            })
        })
        .collect();
    for c in clients {
        let report = c.join().unwrap();
        assert!(report.errors.is_empty(), "{:?}", report.errors);
    }
    server.join().unwrap().trace
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}
