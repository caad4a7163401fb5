//! Scripted multi-agent runs on the simulated network, each ending in a
//! list of named checks.

mod data_purchase;
mod fig4;
mod manufacturing;
mod onboarding;
mod stage;
mod templates;
mod treasury;

use std::fmt::Write as _;
use std::time::Instant;

use conet_core::agent::store::parse_log;
use conet_core::agent::{Agent, MemoryBackend, MessageStore, Quarantine};
use conet_core::negotiation::{SessionId, SessionState};
use conet_core::Hash;
use serde::Serialize;

pub use stage::{node_name, Fault, Hop, ScenarioError, Stage, Step, START};
pub use templates::steel_rod_purchase;
pub use treasury::expected_inflow_cents;

pub const CATALOG: [&str; 5] = ["fig4", "data-purchase", "treasury", "manufacturing", "onboarding"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn eq<T: PartialEq + std::fmt::Debug>(name: impl Into<String>, found: T, expected: T) -> Self {
        let passed = found == expected;
        let detail = if passed {
            String::new()
        } else {
            format!("expected {expected:?}, found {found:?}")
        };
        Self::new(name, passed, detail)
    }
}

/// What a scenario hands back to the runner.
pub struct Outcome {
    pub expected: Vec<Hop>,
    pub checks: Vec<Check>,
}

/// Builds an expected hop list from `(from, to, kind)` triples.
pub fn hops(list: &[(&str, &str, &str)]) -> Vec<Hop> {
    list.iter()
        .map(|(from, to, kind)| Hop {
            from: from.to_string(),
            to: to.to_string(),
            kind: kind.to_string(),
        })
        .collect()
}

/// Passes iff `actual` equals `expected`; otherwise names the first hop
/// where they part.
pub fn sequence_check(actual: &[Hop], expected: &[Hop]) -> Check {
    let show = |h: Option<&Hop>| h.map_or("nothing".to_string(), |h| format!("{} -> {}: {}", h.from, h.to, h.kind));
    match (0..actual.len().max(expected.len())).find(|i| actual.get(*i) != expected.get(*i)) {
        None => Check::new("message sequence matches the figure", true, ""),
        Some(i) => Check::new(
            "message sequence matches the figure",
            false,
            format!("step {}: expected {}, found {}", i + 1, show(expected.get(i)), show(actual.get(i))),
        ),
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub steps: Vec<Step>,
    pub checks: Vec<Check>,
    pub transcript_hash: Hash,
    pub elapsed_ms: u128,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn step_log(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = writeln!(out, "[{:>10} ms] {}", s.t, s.text);
        }
        out
    }

    /// TAP version 13 lines, one per check.
    pub fn tap(&self) -> String {
        let mut out = format!("TAP version 13\n1..{}\n", self.checks.len());
        for (i, c) in self.checks.iter().enumerate() {
            let _ = writeln!(out, "{} {} - {}: {}", if c.passed { "ok" } else { "not ok" }, i + 1, self.name, c.name);
            if !c.detail.is_empty() {
                let _ = writeln!(out, "  # {}", c.detail);
            }
        }
        out
    }
}

type Script = fn(&mut Stage) -> Result<Outcome, ScenarioError>;

fn script(name: &str) -> Option<Script> {
    Some(match name {
        "fig4" => fig4::run,
        "data-purchase" => data_purchase::run,
        "treasury" => treasury::run,
        "manufacturing" => manufacturing::run,
        "onboarding" => onboarding::run,
        _ => return None,
    })
}

/// The agents each scenario casts, for fault injection.
pub fn agents_of(name: &str) -> &'static [&'static str] {
    match name {
        "fig4" => fig4::AGENTS,
        "data-purchase" => data_purchase::AGENTS,
        "treasury" => treasury::AGENTS,
        "manufacturing" => manufacturing::AGENTS,
        "onboarding" => onboarding::AGENTS,
        _ => &[],
    }
}

/// The agents of `name` that keep a message log, as opposed to scripted
/// nodes.
pub fn negotiators(name: &str, seed: u64) -> Vec<String> {
    let Some(script) = script(name) else { return Vec::new() };
    let mut stage = Stage::new(seed, None);
    let _ = script(&mut stage);
    stage.negotiators()
}

/// Runs scenario `name`; `None` if the catalog has no such scenario.
pub fn run(name: &str, seed: u64) -> Option<ScenarioReport> {
    let script = script(name)?;
    let started = Instant::now();
    let mut stage = Stage::new(seed, None);
    let result = script(&mut stage);
    let checks = match result {
        Ok(outcome) => {
            let mut checks = vec![sequence_check(stage.hops(), &outcome.expected)];
            checks.extend(outcome.checks);
            checks
        }
        Err(e) => vec![Check::new("script runs to completion", false, e.to_string())],
    };
    Some(ScenarioReport {
        name: name.to_string(),
        seed,
        steps: stage.steps(),
        checks,
        transcript_hash: stage.transcript_hash(),
        elapsed_ms: started.elapsed().as_millis(),
    })
}

/// Sessions, states and transcript hashes, for comparing engines.
pub fn engine_view(agent: &Agent) -> Vec<(SessionId, SessionState, Vec<Hash>)> {
    agent.engine().sessions().map(|s| (s.id(), s.state(), s.log())).collect()
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CrashReport {
    pub scenario: String,
    pub agent: String,
    /// Appends in the uninterrupted run.
    pub fault_points: usize,
    pub failures: Vec<String>,
}

/// Crashes `agent` at every append of an uninterrupted run of `name`,
/// replays what reached its log into a fresh agent, and compares the
/// rebuilt engine with the crashed one.
pub fn crash_recovery(name: &str, seed: u64, agent: &str) -> Option<CrashReport> {
    let script = script(name)?;
    let fault = |budget| {
        Some(Fault {
            agent: agent.to_string(),
            budget,
            torn_bytes: 0,
        })
    };
    let mut clean = Stage::new(seed, fault(usize::MAX));
    let mut failures = Vec::new();
    if let Err(e) = script(&mut clean) {
        failures.push(format!("uninterrupted run failed: {e}"));
    }
    let clean_records = clean
        .fault_log
        .as_ref()
        .map(|b| parse_log(&b.bytes()).expect("complete log parses"))
        .unwrap_or_default();
    for budget in 0..clean_records.len() {
        for torn in [0, 23] {
            let mut stage = Stage::new(
                seed,
                Some(Fault {
                    agent: agent.to_string(),
                    budget,
                    torn_bytes: torn,
                }),
            );
            let crashed = matches!(script(&mut stage), Err(ScenarioError::Crashed(ref who)) if who == agent)
                || stage.agent(agent).is_crashed();
            if !crashed {
                failures.push(format!("fault point {budget}: {agent} did not crash"));
                continue;
            }
            let records = match parse_log(&stage.fault_log.as_ref().expect("faulted agent").bytes()) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("fault point {budget}: log unreadable: {e}"));
                    continue;
                }
            };
            if records[..] != clean_records[..budget] {
                failures.push(format!("fault point {budget}: persisted prefix differs from the uninterrupted log"));
            }
            let Some(parts) = stage.initial_parts(agent) else {
                failures.push(format!("fault point {budget}: {agent} never started"));
                continue;
            };
            let recovered = Agent::start(
                parts,
                MessageStore::with_records(Box::new(MemoryBackend::new()), records),
                Quarantine::new(Box::new(MemoryBackend::new())),
            );
            match recovered {
                Ok(r) if engine_view(&r) == engine_view(stage.agent(agent)) => {}
                Ok(_) => failures.push(format!("fault point {budget} (torn {torn}): rebuilt engine differs")),
                Err(e) => failures.push(format!("fault point {budget}: restart failed: {e}")),
            }
        }
    }
    Some(CrashReport {
        scenario: name.to_string(),
        agent: agent.to_string(),
        fault_points: clean_records.len(),
        failures,
    })
}
