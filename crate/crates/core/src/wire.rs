//! Line-delimited JSON messages between the mediator and remote agents.
//!
//! Every record is one UTF-8 line with a `type` field. Announcement payloads
//! use the same layout as the corresponding trace events. Client messages
//! carry the session id and the agent's token.

use serde::{Deserialize, Serialize};

use crate::agents::{BidRequest, OptInRequest, VoteRequest};
use crate::protocol::{BidAnnouncement, BidVote, VoteAnnouncement};
use crate::resolution::DealRecord;
use crate::types::{AgentId, Bid};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    /// The agent is a member of `deal`.
    Deal,
    /// The negotiation ended for this agent without a deal.
    NoDeal,
    /// The agent moves on to the next round.
    Continue,
    /// The agent missed the bidding deadline and was removed.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Register {
        protocol_version: u32,
        session: String,
        agent: AgentId,
        token: String,
    },
    Registered {
        protocol_version: u32,
        session: String,
        agent: AgentId,
    },
    BidRequest {
        session: String,
        #[serde(flatten)]
        request: BidRequest,
    },
    Bid {
        session: String,
        agent: AgentId,
        token: String,
        bid: Bid,
    },
    BidAnnouncement {
        session: String,
        round: u32,
        #[serde(flatten)]
        announcement: BidAnnouncement,
    },
    VoteRequest {
        session: String,
        #[serde(flatten)]
        request: VoteRequest,
    },
    Vote {
        session: String,
        agent: AgentId,
        token: String,
        votes: Vec<BidVote>,
    },
    VoteAnnouncement {
        session: String,
        round: u32,
        #[serde(flatten)]
        announcement: VoteAnnouncement,
    },
    OptinRequest {
        session: String,
        #[serde(flatten)]
        request: OptInRequest,
    },
    Optin {
        session: String,
        agent: AgentId,
        token: String,
        votes: Vec<BidVote>,
    },
    #[serde(rename = "result")]
    Outcome {
        session: String,
        agent: AgentId,
        round: u32,
        status: ResultStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deal: Option<DealRecord>,
        #[serde(rename = "final")]
        is_final: bool,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    AuthFailed,
    UnsupportedVersion,
    DuplicateRegistration,
    WrongPhase,
    BadMessage,
    UnknownAgent,
    UnknownBid,
    AlreadyBid,
    AlreadyVoted,
    InvalidThresholds,
    OptinViolation,
    SessionClosed,
}

impl WireMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        WireMessage::Error {
            code,
            message: message.into(),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire messages serialize");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}
