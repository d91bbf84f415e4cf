//! Line-delimited JSON event log of a negotiation.
//!
//! Each line is one [`TraceEvent`]: `seq`, `round`, `phase`, `kind`, then a
//! `payload` whose shape depends on `kind`. Field order is fixed, so two runs
//! can be compared byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::consensus::{ResolvedRound, ViableGroup};
use crate::protocol::{BidAnnouncement, EndReason, Phase, VoteAnnouncement};
use crate::resolution::DealRecord;
use crate::types::{AgentId, Bid, Power, ProtocolParams, Vote};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub round: u32,
    pub phase: Phase,
    #[serde(flatten)]
    pub event: EventKind,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    NegotiationStarted {
        scenario: String,
        params: ProtocolParams,
        roster: Vec<(AgentId, Power)>,
        rng: String,
    },
    BidSubmitted {
        agent: AgentId,
        bid: Bid,
    },
    /// An agent left before bidding closed; `p_max` is the new total.
    AgentDropped {
        agent: AgentId,
        p_max: u64,
    },
    BidAnnouncement(BidAnnouncement),
    VoteSubmitted {
        agent: AgentId,
        bid: Bid,
        vote: Vote,
        /// Set when the mediator filled in a default for a silent agent.
        #[serde(default, skip_serializing_if = "is_false")]
        substituted: bool,
    },
    VoteAnnouncement(VoteAnnouncement),
    OptInSubmitted {
        agent: AgentId,
        bid: Bid,
        vote: Vote,
        #[serde(default, skip_serializing_if = "is_false")]
        substituted: bool,
    },
    ViableGroupsComputed {
        groups: Vec<ViableGroup>,
    },
    DealStruck(DealRecord),
    RoundContinued {
        continuing: Vec<AgentId>,
        p_max: u64,
    },
    NegotiationEnded {
        reason: EndReason,
        rounds: u32,
        deals: Vec<DealRecord>,
        undealt: Vec<AgentId>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::NegotiationStarted { .. } => "NegotiationStarted",
            EventKind::BidSubmitted { .. } => "BidSubmitted",
            EventKind::AgentDropped { .. } => "AgentDropped",
            EventKind::BidAnnouncement(_) => "BidAnnouncement",
            EventKind::VoteSubmitted { .. } => "VoteSubmitted",
            EventKind::VoteAnnouncement(_) => "VoteAnnouncement",
            EventKind::OptInSubmitted { .. } => "OptInSubmitted",
            EventKind::ViableGroupsComputed { .. } => "ViableGroupsComputed",
            EventKind::DealStruck(_) => "DealStruck",
            EventKind::RoundContinued { .. } => "RoundContinued",
            EventKind::NegotiationEnded { .. } => "NegotiationEnded",
        }
    }
}

/// Appends events with increasing sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct TraceRecorder {
    events: Vec<TraceEvent>,
}

impl TraceRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: u32, phase: Phase, event: EventKind) -> &TraceEvent {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent {
            seq,
            round,
            phase,
            event,
        });
        self.events.last().expect("just pushed")
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace does not start with NegotiationStarted")]
    MissingHeader,
}

pub fn to_jsonl(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| TraceError::Json {
                line: i + 1,
                source,
            })
        })
        .collect()
}

/// Reconstructs every round's opt-in votes from a trace, in round order.
/// The roster and bid table of a round come from its bid announcement.
pub fn rounds_from_trace(events: &[TraceEvent]) -> Result<Vec<ResolvedRound>, TraceError> {
    let p_min = match events.first().map(|e| &e.event) {
        Some(EventKind::NegotiationStarted { params, .. }) => params.p_min,
        _ => return Err(TraceError::MissingHeader),
    };
    let mut rounds: BTreeMap<u32, ResolvedRound> = BTreeMap::new();
    for e in events {
        match &e.event {
            EventKind::BidAnnouncement(ann) => {
                rounds.insert(
                    e.round,
                    ResolvedRound {
                        round_index: e.round,
                        p_min,
                        roster: ann
                            .entries
                            .iter()
                            .map(|x| (x.agent.clone(), x.power))
                            .collect(),
                        bid_table: ann.bids(),
                        votes: BTreeMap::new(),
                    },
                );
            }
            EventKind::OptInSubmitted {
                agent, bid, vote, ..
            } => {
                if let Some(r) = rounds.get_mut(&e.round) {
                    r.votes.insert((agent.clone(), bid.clone()), *vote);
                }
            }
            _ => {}
        }
    }
    Ok(rounds.into_values().collect())
}
