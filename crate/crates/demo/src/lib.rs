//! Browser bindings. Every export takes and returns JSON text so the page
//! needs no generated glue types.

use mopac::consensus::{
    enumerate_candidate_groups, viable_groups_naive, viable_groups_pruned_with_stats,
};
use mopac::scenario::presets;
use mopac::sim::run;
use mopac::trace::{to_jsonl, EventKind};
use mopac::{Engine, ResolvedRound, Scenario, TerminationPolicy};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn group_json(g: &mopac::ViableGroup) -> Value {
    json!({ "bid": g.bid(), "members": g.members(), "power": g.power() })
}

/// Viable groups of one round, with the work each engine did.
pub fn explore_round(votes_json: &str) -> Result<Value, String> {
    let round: ResolvedRound = serde_json::from_str(votes_json).map_err(|e| e.to_string())?;
    let naive = viable_groups_naive(&round);
    let (pruned, stats) = viable_groups_pruned_with_stats(&round);
    let n = round.roster.len() as u64;
    Ok(json!({
        "p_max": round.p_max(),
        "groups": pruned.iter().map(group_json).collect::<Vec<_>>(),
        "naive_tested": ((1u64 << n) - n - 1) * round.bid_table.len() as u64,
        "pruned_tested": stats.tested,
        "pruned_skipped": stats.pruned,
        "engines_agree": naive == pruned,
    }))
}

/// Runs a built-in preset; `policy` is `one`, `two` or empty for the
/// preset's own.
pub fn run_preset_json(name: &str, seed: u64, policy: &str) -> Result<Value, String> {
    let text = presets::get(name).ok_or_else(|| format!("no preset named {name}"))?;
    let mut scenario = Scenario::parse(text).map_err(|e| e.to_string())?;
    if !policy.is_empty() {
        scenario.params.policy = policy.parse::<TerminationPolicy>()?;
    }
    let report = run(&scenario, Some(seed), Engine::Pruned).map_err(|f| f.error.to_string())?;
    let rounds: Vec<Value> = report
        .trace
        .iter()
        .filter_map(|e| match &e.event {
            EventKind::ViableGroupsComputed { groups } => Some(json!({
                "round": e.round,
                "groups": groups.iter().map(group_json).collect::<Vec<_>>(),
            })),
            _ => None,
        })
        .collect();
    Ok(json!({
        "scenario": scenario.name,
        "policy": scenario.params.policy.to_string(),
        "seed": seed,
        "rounds": rounds,
        "deals": report.state.deals(),
        "end_reason": report.state.end_reason().map(|r| r.to_string()),
        "trace": to_jsonl(&report.trace),
    }))
}

/// `[n, count]` pairs for the candidate-set law, counted by enumeration.
pub fn candidate_counts_json(max_n: usize) -> Value {
    let max_n = max_n.clamp(2, 20);
    let rows: Vec<Value> = (2..=max_n)
        .map(|n| json!([n, enumerate_candidate_groups(n).count()]))
        .collect();
    Value::Array(rows)
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn explore(votes_json: &str) -> Result<String, JsError> {
    to_js(explore_round(votes_json))
}

#[wasm_bindgen]
pub fn run_preset(name: &str, seed: u64, policy: &str) -> Result<String, JsError> {
    to_js(run_preset_json(name, seed, policy))
}

#[wasm_bindgen]
pub fn candidate_counts(max_n: usize) -> String {
    candidate_counts_json(max_n).to_string()
}

#[wasm_bindgen]
pub fn preset_names() -> String {
    Value::from(presets::ALL.iter().map(|(n, _)| *n).collect::<Vec<_>>()).to_string()
}
