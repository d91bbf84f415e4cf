//! Multilateral negotiation with partial consensus.
//!
//! A negotiation runs in rounds of three phases (bidding, voting, opt-in).
//! After the opt-in phase every set of agents that accepted the same bid,
//! and whose combined power fits every member's accept window, is a viable
//! group; the configured termination policy turns viable groups into deals.
//!
//! * [`protocol`]: the state machine and vote rules.
//! * [`consensus`]: viable-group computation (exhaustive and pruned).
//! * [`resolution`]: termination policies and round-to-round evolution.
//! * [`agents`]: the strategy interface and built-in strategies.
//! * [`scenario`], [`sim`], [`trace`]: scenario files, runs and event logs.
//! * [`mediator`], [`wire`]: the networked mediator and its line protocol.

pub mod agents;
pub mod consensus;
pub mod mediator;
pub mod protocol;
pub mod resolution;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod types;
pub mod wire;

pub use consensus::{Engine, ResolvedRound, ViableGroup};
pub use protocol::{NegotiationState, Phase, ProtocolError};
pub use resolution::DealRecord;
pub use scenario::{Scenario, SessionConfig};
pub use types::{AgentId, Bid, Power, ProtocolParams, TerminationPolicy, Vote};
