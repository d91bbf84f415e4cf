//! Scenario and session files.
//!
//! Both use the same line-oriented grammar:
//!
//! ```text
//! # comment
//! key = value            top-level settings
//! [agent A1]             starts an agent section
//! key = value            settings for that agent
//! ```
//!
//! Scenario top-level keys: `name`, `p_min`, `max_rounds`, `policy`
//! (`one` | `two`), `seed`, `bids` (space separated). Agent keys: `power`,
//! `strategy` (`scripted` | `utility` | `random`), and per strategy:
//!
//! * scripted: repeated `action = bid <bid>`, `action = vote <ballot>`,
//!   `action = optin <ballot>`, where a ballot is a list such as
//!   `b1:accept(2,4) b2:reject`.
//! * utility: `utility = b1:0.9 b2:0.3`, `reservation = 0.5`,
//!   `window = full | majority | fixed <lo> <hi>`.
//! * random: `seed = <n>` (defaults to the agent's position in the file).
//!
//! Session files replace `name` with `session`, add `phase_timeout_ms`, and
//! give each agent a `power` and a `token`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use crate::agents::{AgentAction, Ballot, PreferenceProfile, StrategyConfig, WindowRule};
use crate::protocol::NegotiationState;
use crate::types::{AgentId, Bid, Power, ProtocolParams, TerminationPolicy, Vote};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        field: field.to_owned(),
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

#[derive(Debug, Clone)]
struct Section {
    line: usize,
    name: String,
    entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> {
        self.entries.iter().filter(move |e| e.key == key)
    }

    fn require(&self, key: &str) -> Result<&Entry, ScenarioError> {
        self.get(key)
            .ok_or_else(|| parse_err(self.line, key, "missing required key"))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ScenarioError> {
        match self
            .entries
            .iter()
            .find(|e| !allowed.contains(&e.key.as_str()))
        {
            Some(e) => Err(parse_err(e.line, &e.key, "unknown key")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
struct Document {
    header: Section,
    agents: Vec<Section>,
}

fn parse_document(text: &str) -> Result<Document, ScenarioError> {
    let mut header = Section {
        line: 1,
        name: String::new(),
        entries: Vec::new(),
    };
    let mut agents: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(inner) = trimmed.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, trimmed, "unterminated section header"))?;
            let mut words = inner.split_whitespace();
            match (words.next(), words.next(), words.next()) {
                (Some("agent"), Some(name), None) => agents.push(Section {
                    line,
                    name: name.to_owned(),
                    entries: Vec::new(),
                }),
                _ => return Err(parse_err(line, trimmed, "expected `[agent <id>]`")),
            }
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| parse_err(line, trimmed, "expected `key = value`"))?;
        let entry = Entry {
            line,
            key: key.trim().to_owned(),
            value: value.trim().to_owned(),
        };
        agents.last_mut().unwrap_or(&mut header).entries.push(entry);
    }
    Ok(Document { header, agents })
}

fn number<T: std::str::FromStr>(e: &Entry) -> Result<T, ScenarioError> {
    e.value.parse().map_err(|_| {
        parse_err(
            e.line,
            &e.key,
            format!("`{}` is not a valid number", e.value),
        )
    })
}

fn fraction(e: &Entry, text: &str) -> Result<f64, ScenarioError> {
    match text.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(parse_err(
            e.line,
            &e.key,
            format!("`{text}` is not a number in [0, 1]"),
        )),
    }
}

fn power(e: &Entry) -> Result<Power, ScenarioError> {
    Power::new(number(e)?).map_err(|_| parse_err(e.line, &e.key, "power must be at least 1"))
}

/// Parses `b1:accept(2,4) b2:reject`.
pub fn parse_ballot(text: &str) -> Result<Ballot, String> {
    let mut ballot = Ballot::new();
    for item in text.split_whitespace() {
        let (bid, vote) = item
            .split_once(':')
            .ok_or_else(|| format!("`{item}` is not `<bid>:<vote>`"))?;
        let vote = parse_vote(vote).ok_or_else(|| format!("`{vote}` is not a vote"))?;
        if ballot.insert(Bid::new(bid), vote).is_some() {
            return Err(format!("bid {bid} voted twice"));
        }
    }
    Ok(ballot)
}

fn parse_vote(text: &str) -> Option<Vote> {
    if text == "reject" {
        return Some(Vote::Reject);
    }
    let inner = text.strip_prefix("accept(")?.strip_suffix(')')?;
    let (lo, hi) = inner.split_once(',')?;
    Some(Vote::accept(
        lo.trim().parse().ok()?,
        hi.trim().parse().ok()?,
    ))
}

fn parse_action(e: &Entry) -> Result<AgentAction, ScenarioError> {
    let (kind, rest) = e
        .value
        .split_once(char::is_whitespace)
        .unwrap_or((&e.value, ""));
    let rest = rest.trim();
    let ballot = |rest: &str| parse_ballot(rest).map_err(|m| parse_err(e.line, &e.key, m));
    match kind {
        "bid" if !rest.is_empty() && !rest.contains(char::is_whitespace) => {
            Ok(AgentAction::PlaceBid(Bid::new(rest)))
        }
        "bid" => Err(parse_err(e.line, &e.key, "expected `bid <token>`")),
        "vote" => Ok(AgentAction::CastVotes(ballot(rest)?)),
        "optin" => Ok(AgentAction::CastOptIn(ballot(rest)?)),
        other => Err(parse_err(
            e.line,
            &e.key,
            format!("unknown action `{other}` (expected bid|vote|optin)"),
        )),
    }
}

fn parse_window(e: &Entry) -> Result<WindowRule, ScenarioError> {
    let words: Vec<&str> = e.value.split_whitespace().collect();
    match words.as_slice() {
        ["full"] => Ok(WindowRule::FullRange),
        ["majority"] => Ok(WindowRule::MajorityFloor),
        ["fixed", lo, hi] => {
            let (lo, hi) = (fraction(e, lo)?, fraction(e, hi)?);
            if lo > hi {
                return Err(parse_err(e.line, &e.key, "fixed window needs lo ≤ hi"));
            }
            Ok(WindowRule::FixedWindow { lo, hi })
        }
        _ => Err(parse_err(
            e.line,
            &e.key,
            "expected full | majority | fixed <lo> <hi>",
        )),
    }
}

fn parse_params(
    header: &Section,
    default_rounds: Option<u32>,
) -> Result<ProtocolParams, ScenarioError> {
    let p_min = power(header.require("p_min")?)?;
    let max_rounds = match (header.get("max_rounds"), default_rounds) {
        (Some(e), _) => number(e)?,
        (None, Some(d)) => d,
        (None, None) => return Err(parse_err(header.line, "max_rounds", "missing required key")),
    };
    let policy = match header.get("policy") {
        Some(e) => e
            .value
            .parse()
            .map_err(|m: String| parse_err(e.line, &e.key, m))?,
        None => TerminationPolicy::LargestOnly,
    };
    let seed = header.get("seed").map(number).transpose()?.unwrap_or(0);
    Ok(ProtocolParams::new(p_min, max_rounds, policy, seed))
}

fn check_roster(
    roster: impl IntoIterator<Item = (AgentId, u64)>,
    params: &ProtocolParams,
) -> Result<(), ScenarioError> {
    NegotiationState::new(roster, params.clone())
        .map(|_| ())
        .map_err(|e| ScenarioError::Validation(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: AgentId,
    pub power: Power,
    pub strategy: StrategyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: ProtocolParams,
    pub agents: Vec<AgentSpec>,
    pub bid_space: Vec<Bid>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let doc = parse_document(text)?;
        let h = &doc.header;
        h.check_keys(&["name", "p_min", "max_rounds", "policy", "seed", "bids"])?;
        let name = h.require("name")?.value.clone();
        let params = parse_params(h, None)?;
        let bid_space: Vec<Bid> = h
            .get("bids")
            .map(|e| e.value.split_whitespace().map(Bid::new).collect())
            .unwrap_or_default();
        let mut agents = Vec::new();
        for (index, s) in doc.agents.iter().enumerate() {
            agents.push(parse_agent(s, index)?);
        }
        let scenario = Scenario {
            name,
            params,
            agents,
            bid_space,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn roster(&self) -> Vec<(AgentId, u64)> {
        self.agents
            .iter()
            .map(|a| (a.id.clone(), a.power.get()))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        check_roster(self.roster(), &self.params)?;
        let space: BTreeSet<&Bid> = self.bid_space.iter().collect();
        if space.len() != self.bid_space.len() {
            return Err(ScenarioError::Validation(
                "bid space lists a bid twice".into(),
            ));
        }
        for agent in &self.agents {
            let mentioned: Vec<&Bid> = match &agent.strategy {
                StrategyConfig::Scripted { actions } => actions
                    .iter()
                    .flat_map(|a| match a {
                        AgentAction::PlaceBid(b) => vec![b],
                        AgentAction::CastVotes(v) | AgentAction::CastOptIn(v) => v.keys().collect(),
                    })
                    .collect(),
                StrategyConfig::Utility { profile } => {
                    if profile.utilities.is_empty() {
                        return Err(ScenarioError::Validation(format!(
                            "agent {} has no utilities",
                            agent.id
                        )));
                    }
                    profile.utilities.keys().collect()
                }
                StrategyConfig::Random { .. } => {
                    if self.bid_space.is_empty() {
                        return Err(ScenarioError::Validation(format!(
                            "agent {} is random but the scenario has no `bids`",
                            agent.id
                        )));
                    }
                    Vec::new()
                }
            };
            if !self.bid_space.is_empty() {
                if let Some(b) = mentioned.into_iter().find(|b| !space.contains(b)) {
                    return Err(ScenarioError::Validation(format!(
                        "agent {} mentions bid {b}, which is not in the bid space",
                        agent.id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_agent(s: &Section, index: usize) -> Result<AgentSpec, ScenarioError> {
    let strategy_entry = s.require("strategy")?;
    let strategy = match strategy_entry.value.as_str() {
        "scripted" => {
            s.check_keys(&["power", "strategy", "action"])?;
            StrategyConfig::Scripted {
                actions: s
                    .all("action")
                    .map(parse_action)
                    .collect::<Result<_, _>>()?,
            }
        }
        "utility" => {
            s.check_keys(&["power", "strategy", "utility", "reservation", "window"])?;
            let mut utilities = BTreeMap::new();
            for e in s.all("utility") {
                for item in e.value.split_whitespace() {
                    let (bid, u) = item.split_once(':').ok_or_else(|| {
                        parse_err(e.line, &e.key, format!("`{item}` is not `<bid>:<utility>`"))
                    })?;
                    utilities.insert(Bid::new(bid), fraction(e, u)?);
                }
            }
            let reservation = match s.get("reservation") {
                Some(e) => fraction(e, &e.value)?,
                None => 0.5,
            };
            let window_rule = match s.get("window") {
                Some(e) => parse_window(e)?,
                None => WindowRule::FullRange,
            };
            StrategyConfig::Utility {
                profile: PreferenceProfile {
                    utilities,
                    reservation,
                    window_rule,
                },
            }
        }
        "random" => {
            s.check_keys(&["power", "strategy", "seed"])?;
            let seed = s
                .get("seed")
                .map(number)
                .transpose()?
                .unwrap_or(index as u64);
            StrategyConfig::Random { seed }
        }
        other => {
            return Err(parse_err(
                strategy_entry.line,
                "strategy",
                format!("unknown strategy kind `{other}` (expected scripted|utility|random)"),
            ))
        }
    };
    Ok(AgentSpec {
        id: AgentId::new(s.name.clone()),
        power: power(s.require("power")?)?,
        strategy,
    })
}

/// Mediator session settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub session: String,
    pub params: ProtocolParams,
    /// `(agent, power, token)` in roster order.
    pub roster: Vec<(AgentId, Power, String)>,
    pub phase_timeout: Duration,
}

impl SessionConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let doc = parse_document(text)?;
        let h = &doc.header;
        h.check_keys(&[
            "session",
            "p_min",
            "max_rounds",
            "policy",
            "seed",
            "phase_timeout_ms",
        ])?;
        let session = h.require("session")?.value.clone();
        let params = parse_params(h, Some(1))?;
        let timeout_ms: u64 = h
            .get("phase_timeout_ms")
            .map(number)
            .transpose()?
            .unwrap_or(5_000);
        let mut roster = Vec::new();
        for s in &doc.agents {
            s.check_keys(&["power", "token"])?;
            roster.push((
                AgentId::new(s.name.clone()),
                power(s.require("power")?)?,
                s.require("token")?.value.clone(),
            ));
        }
        let config = SessionConfig {
            session,
            params,
            roster,
            phase_timeout: Duration::from_millis(timeout_ms),
        };
        check_roster(
            config.roster.iter().map(|(a, p, _)| (a.clone(), p.get())),
            &config.params,
        )?;
        Ok(config)
    }

    /// A session for the agents of a scenario, with generated tokens.
    pub fn for_scenario(scenario: &Scenario, phase_timeout: Duration) -> Self {
        SessionConfig {
            session: scenario.name.clone(),
            params: scenario.params.clone(),
            roster: scenario
                .agents
                .iter()
                .map(|a| (a.id.clone(), a.power, format!("token-{}", a.id)))
                .collect(),
            phase_timeout,
        }
    }
}

/// Scenario files shipped with the crate.
pub mod presets {
    pub const S3: &str = include_str!("../scenarios/s3.scenario");
    pub const FOUR_AGENTS: &str = include_str!("../scenarios/four_agents.scenario");
    pub const MEETING: &str = include_str!("../scenarios/meeting.scenario");
    pub const GOVERNMENT: &str = include_str!("../scenarios/government.scenario");
    pub const FLATMATES: &str = include_str!("../scenarios/flatmates.scenario");

    /// `(file stem, text)` for every preset.
    pub const ALL: &[(&str, &str)] = &[
        ("s3", S3),
        ("four_agents", FOUR_AGENTS),
        ("meeting", MEETING),
        ("government", GOVERNMENT),
        ("flatmates", FLATMATES),
    ];

    pub fn get(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }
}
