//! Runs a scenario, checks its trace and measures it.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::checkers::{check_all, CheckConfig, CheckReport};
use crate::scenario::{Scenario, ScenarioError};
use crate::simnet::RunOutcome;
use crate::trace::{EventDetail, Trace};
use crate::types::{InstanceId, Payload, ProcessId, SimTime, Value, WireMessage};

/// One `(client, message)` as seen across the run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BroadcastMetric {
    pub client: ProcessId,
    pub message: String,
    pub broadcast_at: i64,
    /// Distinct bets the client sent this message with.
    pub attempts: usize,
    /// Correct servers that delivered it.
    pub delivered_by: usize,
    /// Time from broadcast to the last delivery at a correct server, if all
    /// correct servers delivered it.
    pub latency: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub broadcasts: Vec<BroadcastMetric>,
    pub sends_by_kind: BTreeMap<String, u64>,
    /// Sum of message sizes with one word per time, value or tag.
    pub total_bits: u64,
    /// Consensus instances anyone proposed to.
    pub instances: usize,
    /// Tuple instances the correct servers decided to accept / reject.
    pub accepted_instances: usize,
    pub rejected_instances: usize,
    /// `AppDeliver` events at correct servers.
    pub app_deliveries: usize,
    /// Largest number of `Suggest` sends within one instance.
    pub max_suggests_per_instance: u64,
}

impl Metrics {
    pub fn measure(trace: &Trace, cfg: &CheckConfig) -> Metrics {
        let mut m = Metrics::default();
        let mut instances: BTreeSet<&InstanceId> = BTreeSet::new();
        let mut decided: BTreeMap<&InstanceId, Value> = BTreeMap::new();
        let mut suggests: BTreeMap<&InstanceId, u64> = BTreeMap::new();
        let mut bets: BTreeMap<(ProcessId, &Payload), BTreeSet<SimTime>> = BTreeMap::new();
        let mut delivered: BTreeMap<(ProcessId, &Payload), Vec<SimTime>> = BTreeMap::new();

        for e in trace {
            match &e.detail {
                EventDetail::Send { msg, .. } => {
                    *m.sends_by_kind.entry(msg.kind().to_string()).or_default() += 1;
                    m.total_bits += msg.size_bits();
                    match msg {
                        WireMessage::Suggest { instance, .. } => *suggests.entry(instance).or_default() += 1,
                        WireMessage::Message { message, bet } => {
                            bets.entry((e.process, message)).or_default().insert(*bet);
                        }
                        _ => {}
                    }
                }
                EventDetail::Propose { instance, .. } => {
                    instances.insert(instance);
                }
                EventDetail::Decide { instance, value, .. } if cfg.is_correct_server(e.process) => {
                    decided.entry(instance).or_insert(*value);
                }
                EventDetail::AppDeliver(t) if cfg.is_correct_server(e.process) => {
                    m.app_deliveries += 1;
                    delivered.entry((t.client, &t.message)).or_default().push(e.time);
                }
                _ => {}
            }
        }

        m.instances = instances.len();
        for (id, v) in decided {
            if id.tuple().is_some() {
                match v {
                    Value::True => m.accepted_instances += 1,
                    Value::False => m.rejected_instances += 1,
                }
            }
        }
        m.max_suggests_per_instance = suggests.values().copied().max().unwrap_or(0);

        for e in trace {
            let EventDetail::Broadcast(msg) = &e.detail else {
                continue;
            };
            let key = (e.process, msg);
            let times = delivered.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let all = !cfg.correct_servers.is_empty() && times.len() == cfg.correct_servers.len();
            m.broadcasts.push(BroadcastMetric {
                client: e.process,
                message: String::from_utf8_lossy(msg.as_bytes()).into_owned(),
                broadcast_at: e.time.0,
                attempts: bets.get(&key).map_or(0, BTreeSet::len),
                delivered_by: times.len(),
                latency: all.then(|| times.iter().max().expect("non-empty").0 - e.time.0),
            });
        }
        m
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub scenario: Scenario,
    pub outcome: RunOutcome,
    pub trace: Trace,
    pub config: CheckConfig,
    pub checks: Vec<CheckReport>,
    pub metrics: Metrics,
}

/// The JSON report written next to a trace.
#[derive(Serialize)]
pub struct RunReport<'a> {
    pub scenario: &'a str,
    pub quiescent: bool,
    pub end_time: i64,
    pub steps: u64,
    pub events: usize,
    pub passed: bool,
    pub checks: &'a [CheckReport],
    pub metrics: &'a Metrics,
}

impl RunResult {
    /// No check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|r| !r.verdict.is_fail())
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckReport> {
        self.checks.iter().filter(|r| r.verdict.is_fail())
    }

    pub fn check(&self, property: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|r| r.property == property)
    }

    pub fn report(&self) -> RunReport<'_> {
        RunReport {
            scenario: &self.scenario.name,
            quiescent: self.outcome.quiescent,
            end_time: self.outcome.end_time.0,
            steps: self.outcome.steps,
            events: self.trace.len(),
            passed: self.passed(),
            checks: &self.checks,
            metrics: &self.metrics,
        }
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report()).expect("report serializes")
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunResult, ScenarioError> {
    let mut sim = scenario.build()?;
    let outcome = sim.run(scenario.stop_at(), scenario.step_budget)?;
    let trace = sim.into_trace();
    let config = scenario.check_config(outcome.quiescent);
    let checks = check_all(&trace.events, &config);
    let metrics = Metrics::measure(&trace, &config);
    Ok(RunResult {
        scenario: scenario.clone(),
        outcome,
        trace,
        config,
        checks,
        metrics,
    })
}
