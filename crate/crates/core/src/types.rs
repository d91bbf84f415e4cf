//! Identity, weight and vote primitives shared by every layer.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque participant identifier, unique within a negotiation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// An element of the bid space. Two equal tokens are the same bid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bid(String);

impl Bid {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Bid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Bid {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Negotiation weight of a single agent. Always at least 1: a zero-power
/// agent could join any group without moving its total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Power(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("power must be at least 1")]
pub struct ZeroPower;

impl Power {
    pub fn new(value: u64) -> Result<Self, ZeroPower> {
        if value == 0 {
            Err(ZeroPower)
        } else {
            Ok(Self(value))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for Power {
    type Error = ZeroPower;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        Power::new(value)
    }
}

impl From<Power> for u64 {
    fn from(p: Power) -> u64 {
        p.0
    }
}

impl fmt::Display for Power {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A vote on one bid. `Accept` carries the inclusive window of group powers
/// the voter is willing to join.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "vote", rename_all = "snake_case")]
pub enum Vote {
    Reject,
    Accept { c_min: u64, c_max: u64 },
}

impl Vote {
    pub fn accept(c_min: u64, c_max: u64) -> Self {
        Vote::Accept { c_min, c_max }
    }

    pub fn is_accept(&self) -> bool {
        matches!(self, Vote::Accept { .. })
    }

    /// The accept window, if any.
    pub fn window(&self) -> Option<(u64, u64)> {
        match *self {
            Vote::Accept { c_min, c_max } => Some((c_min, c_max)),
            Vote::Reject => None,
        }
    }
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vote::Reject => f.write_str("reject"),
            Vote::Accept { c_min, c_max } => write!(f, "accept({c_min},{c_max})"),
        }
    }
}

/// How a round ends once viable groups are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationPolicy {
    /// One deal for the largest viable group; everyone else ends without a deal.
    LargestOnly,
    /// Extract disjoint viable groups largest-first; the rest go to the next round.
    RepeatedExtraction,
}

impl fmt::Display for TerminationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminationPolicy::LargestOnly => f.write_str("one"),
            TerminationPolicy::RepeatedExtraction => f.write_str("two"),
        }
    }
}

impl std::str::FromStr for TerminationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one" | "1" | "largest" | "LargestOnly" => Ok(TerminationPolicy::LargestOnly),
            "two" | "2" | "repeated" | "RepeatedExtraction" => {
                Ok(TerminationPolicy::RepeatedExtraction)
            }
            other => Err(format!(
                "unknown termination policy `{other}` (expected one|two)"
            )),
        }
    }
}

/// Protocol parameters fixed for the whole negotiation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub p_min: Power,
    pub max_rounds: u32,
    pub policy: TerminationPolicy,
    pub rng_seed: u64,
}

impl ProtocolParams {
    pub fn new(p_min: Power, max_rounds: u32, policy: TerminationPolicy, rng_seed: u64) -> Self {
        Self {
            p_min,
            max_rounds,
            policy,
            rng_seed,
        }
    }
}
