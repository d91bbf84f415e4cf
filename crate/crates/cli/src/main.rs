use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use mopac::consensus::{viable_groups_pruned_with_stats, ResolvedRound};
use mopac::mediator::{self, bind};
use mopac::scenario::presets;
use mopac::sim::run;
use mopac::trace::{parse_jsonl, rounds_from_trace, to_jsonl, EventKind, TraceEvent};
use mopac::wire::{ResultStatus, WireMessage};
use mopac::{AgentId, Engine, Scenario, SessionConfig, TerminationPolicy};

/// Run, inspect and mediate multilateral negotiations with partial consensus.
#[derive(Parser)]
#[command(name = "mopac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or a built-in preset by name) to completion.
    Run {
        scenario: String,
        /// Tie-breaking seed; overrides the scenario's `seed`.
        #[arg(long, env = "MOPAC_SEED")]
        seed: Option<u64>,
        /// Override the scenario's termination policy.
        #[arg(long)]
        policy: Option<TerminationPolicy>,
        #[arg(long, default_value = "pruned")]
        engine: Engine,
        /// Write the event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print nothing on success.
        #[arg(long)]
        quiet: bool,
    },
    /// Recompute viable groups from a trace or a single-round votes file.
    Analyze {
        file: PathBuf,
        #[arg(long, default_value = "pruned")]
        engine: Engine,
    },
    /// Parse and check a scenario without running it.
    Validate { scenario: String },
    /// Mediate one session for remote agents.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value = "pruned")]
        engine: Engine,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Join a mediated session as one agent of a scenario.
    Connect {
        scenario: String,
        /// Mediator address, host:port.
        #[arg(long)]
        addr: String,
        #[arg(long)]
        agent: String,
        /// Session id; defaults to the scenario name.
        #[arg(long)]
        session: Option<String>,
        /// Defaults to `token-<agent>`.
        #[arg(long)]
        token: Option<String>,
    },
    /// List the built-in presets.
    Presets,
}

/// A failure caused by the negotiation itself rather than by the input.
#[derive(Debug)]
struct Violation(String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn violation(msg: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Violation(msg.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Violation>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            scenario,
            seed,
            policy,
            engine,
            trace,
            quiet,
        } => cmd_run(&scenario, seed, policy, engine, trace.as_deref(), quiet),
        Command::Analyze { file, engine } => cmd_analyze(&file, engine),
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            println!(
                "ok: {} ({} agents, {} bids, policy {}, max_rounds {})",
                s.name,
                s.agents.len(),
                s.bid_space.len(),
                s.params.policy,
                s.params.max_rounds
            );
            Ok(())
        }
        Command::Serve {
            listen,
            session,
            engine,
            trace,
        } => cmd_serve(&listen, &session, engine, trace.as_deref()),
        Command::Connect {
            scenario,
            addr,
            agent,
            session,
            token,
        } => cmd_connect(&scenario, &addr, &agent, session, token),
        Command::Presets => {
            for (name, _) in presets::ALL {
                println!("{name}");
            }
            Ok(())
        }
    }
}

/// Reads a scenario from a path, falling back to a preset of that name.
fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => match presets::get(arg) {
            Some(t) if !path.exists() => t.to_owned(),
            _ => return Err(e).with_context(|| format!("cannot read {arg}")),
        },
    };
    Scenario::parse(&text).with_context(|| arg.to_string())
}

fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<()> {
    fs::write(path, to_jsonl(events)).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run(
    arg: &str,
    seed: Option<u64>,
    policy: Option<TerminationPolicy>,
    engine: Engine,
    trace: Option<&Path>,
    quiet: bool,
) -> Result<()> {
    let mut scenario = load_scenario(arg)?;
    if let Some(p) = policy {
        scenario.params.policy = p;
    }
    let seed = seed.unwrap_or(scenario.params.rng_seed);
    let events = match run(&scenario, Some(seed), engine) {
        Ok(report) => report.trace,
        Err(failure) => {
            if let Some(path) = trace {
                write_trace(path, &failure.trace)?;
            }
            return Err(violation(failure.error));
        }
    };
    if let Some(path) = trace {
        write_trace(path, &events)?;
    }
    if !quiet {
        println!(
            "scenario {}: policy {}, engine {}, seed {seed}",
            scenario.name,
            scenario.params.policy,
            engine_name(engine)
        );
        print_summary(&events);
    }
    Ok(())
}

fn engine_name(engine: Engine) -> &'static str {
    match engine {
        Engine::Naive => "naive",
        Engine::Pruned => "pruned",
    }
}

fn names(agents: &[AgentId]) -> String {
    if agents.is_empty() {
        return "-".into();
    }
    agents
        .iter()
        .map(AgentId::as_str)
        .collect::<Vec<_>>()
        .join(",")
}

fn print_summary(events: &[TraceEvent]) {
    for e in events {
        match &e.event {
            EventKind::AgentDropped { agent, p_max } => {
                println!("round {}: {agent} dropped, p_max {p_max}", e.round)
            }
            EventKind::ViableGroupsComputed { groups } => {
                println!("round {}: {} viable group(s)", e.round, groups.len())
            }
            EventKind::DealStruck(d) => println!(
                "round {}: deal {} on {} (power {})",
                e.round,
                names(&d.members),
                d.bid,
                d.power
            ),
            EventKind::RoundContinued { continuing, p_max } => println!(
                "round {}: continuing {} (p_max {p_max})",
                e.round,
                names(continuing)
            ),
            EventKind::NegotiationEnded {
                reason,
                rounds,
                deals,
                undealt,
            } => println!(
                "ended: {reason} after {rounds} round(s), {} deal(s), undealt {}",
                deals.len(),
                names(undealt)
            ),
            _ => {}
        }
    }
}

fn cmd_analyze(path: &Path, engine: Engine) -> Result<()> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let is_trace = serde_json::from_str::<TraceEvent>(first).is_ok();
    if is_trace {
        let events = parse_jsonl(&text).with_context(|| path.display().to_string())?;
        let rounds = rounds_from_trace(&events).with_context(|| path.display().to_string())?;
        let recorded: Vec<_> = events
            .iter()
            .filter_map(|e| match &e.event {
                EventKind::ViableGroupsComputed { groups } => Some((e.round, groups)),
                _ => None,
            })
            .collect();
        let mut mismatches = Vec::new();
        for round in &rounds {
            let groups = print_round(round, engine);
            if let Some((_, rec)) = recorded.iter().find(|(r, _)| *r == round.round_index) {
                if *rec != &groups {
                    mismatches.push(round.round_index);
                }
            }
        }
        if !mismatches.is_empty() {
            return Err(violation(format!(
                "recorded viable groups differ from the recomputed ones in round(s) {mismatches:?}"
            )));
        }
    } else {
        let round: ResolvedRound = serde_json::from_str(&text)
            .with_context(|| format!("{} is neither a trace nor a votes file", path.display()))?;
        print_round(&round, engine);
    }
    Ok(())
}

fn print_round(round: &ResolvedRound, engine: Engine) -> Vec<mopac::ViableGroup> {
    let (groups, tested) = match engine {
        Engine::Pruned => {
            let (g, stats) = viable_groups_pruned_with_stats(round);
            (
                g,
                format!(
                    "{} candidate sets tested, {} pruned",
                    stats.tested, stats.pruned
                ),
            )
        }
        Engine::Naive => {
            let n = round.roster.len() as u32;
            let per_bid = (1u64 << n) - u64::from(n) - 1;
            let g = engine.viable_groups(round);
            (
                g,
                format!(
                    "{} candidate sets tested",
                    per_bid * round.bid_table.len() as u64
                ),
            )
        }
    };
    println!(
        "round {}: p_min {}, p_max {}, {} agents, {} bids; {tested}",
        round.round_index,
        round.p_min,
        round.p_max(),
        round.roster.len(),
        round.bid_table.len()
    );
    if groups.is_empty() {
        println!("  no viable group");
    }
    for g in &groups {
        println!(
            "  {} on {} (power {})",
            names(g.members()),
            g.bid(),
            g.power()
        );
    }
    groups
}

fn cmd_serve(listen: &str, session: &Path, engine: Engine, trace: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(session)
        .with_context(|| format!("cannot read {}", session.display()))?;
    let config = SessionConfig::parse(&text).with_context(|| session.display().to_string())?;
    let (listener, addr) = bind(listen).with_context(|| format!("cannot listen on {listen}"))?;
    eprintln!(
        "session {} listening on {addr}, waiting for {} agents",
        config.session,
        config.roster.len()
    );
    let report = mediator::serve(config, engine, listener).map_err(violation)?;
    if let Some(path) = trace {
        write_trace(path, &report.trace)?;
    }
    print_summary(&report.trace);
    Ok(())
}

fn cmd_connect(
    arg: &str,
    addr: &str,
    agent: &str,
    session: Option<String>,
    token: Option<String>,
) -> Result<()> {
    let scenario = load_scenario(arg)?;
    let id = AgentId::new(agent);
    let spec = scenario
        .agents
        .iter()
        .find(|a| a.id == id)
        .ok_or_else(|| anyhow!("scenario {} has no agent {agent}", scenario.name))?;
    let mut strategy = spec.strategy.build(&scenario.bid_space);
    let session = session.unwrap_or_else(|| scenario.name.clone());
    let token = token.unwrap_or_else(|| format!("token-{agent}"));
    let report =
        mediator::run_client(addr, &session, &id, &token, strategy.as_mut()).map_err(violation)?;
    for e in &report.errors {
        if let WireMessage::Error { code, message } = e {
            eprintln!("mediator error {code:?}: {message}");
        }
    }
    match report.results.last() {
        Some(WireMessage::Outcome {
            status: ResultStatus::Deal,
            deal: Some(d),
            ..
        }) => println!(
            "{agent}: deal {} on {} (power {}) in round {}",
            names(&d.members),
            d.bid,
            d.power,
            d.round
        ),
        Some(WireMessage::Outcome { status, round, .. }) => {
            let status = serde_json::to_value(status)?;
            println!(
                "{agent}: {} after round {round}",
                status.as_str().unwrap_or("?")
            )
        }
        _ => return Err(violation("session closed without a final result")),
    }
    Ok(())
}
