//! Post-hoc trace checkers.
//!
//! Every property is a pure function `(events, config) -> Verdict`. A failing
//! verdict carries the events that exhibit the violation, in trace order, and
//! feeding just those events back into the same property fails again
//! ([`recheck`]), so a witness can be inspected on its own.

pub mod consensus;
pub mod latency;
pub mod network;
pub mod tob;

use std::collections::{BTreeMap, BTreeSet};

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::trace::TraceEvent;
use crate::types::{ProcessId, Quorums, SimTime};

/// A client that runs the honest client code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientProfile {
    pub delay_estimate: i64,
    pub bet_margin: i64,
    /// Scheduled to crash at some point, hence not correct.
    pub crashes: bool,
}

/// What the checkers need to know about a run beyond its trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckConfig {
    pub n: u32,
    pub f: usize,
    pub delta: i64,
    pub drift: i64,
    pub offsets: BTreeMap<ProcessId, i64>,
    pub correct_servers: BTreeSet<ProcessId>,
    pub honest_clients: BTreeMap<ProcessId, ClientProfile>,
    /// Every message took exactly δ.
    pub exact_delta: bool,
    /// Exact δ, no drift, no faulty process of any kind.
    pub good_case: bool,
    /// The run ended with nothing pending.
    pub quiescent: bool,
}

impl CheckConfig {
    pub fn quorums(&self) -> Quorums {
        Quorums::new(self.n as usize, self.f)
    }

    pub fn is_correct_server(&self, p: ProcessId) -> bool {
        self.correct_servers.contains(&p)
    }

    pub fn local_time(&self, p: ProcessId, t: SimTime) -> SimTime {
        SimTime(t.0 + self.offsets.get(&p).copied().unwrap_or(0))
    }

    /// Correct client whose eventual delivery the protocol promises.
    pub fn expects_validity(&self, c: ProcessId) -> bool {
        self.honest_clients
            .get(&c)
            .is_some_and(|p| !p.crashes && p.delay_estimate >= 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail { reason: String, witness: Vec<TraceEvent> },
    NotApplicable(String),
}

impl Verdict {
    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail { .. } => "fail",
            Verdict::NotApplicable(_) => "not_applicable",
        }
    }

    pub fn witness(&self) -> &[TraceEvent] {
        match self {
            Verdict::Fail { witness, .. } => witness,
            _ => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckReport {
    pub property: &'static str,
    pub verdict: Verdict,
}

impl Serialize for CheckReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("CheckReport", 4)?;
        st.serialize_field("property", self.property)?;
        st.serialize_field("verdict", self.verdict.label())?;
        match &self.verdict {
            Verdict::Pass => {}
            Verdict::Fail { reason, witness } => {
                st.serialize_field("reason", reason)?;
                let lines: Vec<String> = witness.iter().map(|e| e.to_string()).collect();
                st.serialize_field("witness", &lines)?;
            }
            Verdict::NotApplicable(reason) => st.serialize_field("reason", reason)?,
        }
        st.end()
    }
}

pub type Property = fn(&[TraceEvent], &CheckConfig) -> Verdict;

/// Every property, by name.
pub const PROPERTIES: &[(&str, Property)] = &[
    ("tob.no_duplication", tob::no_duplication),
    ("tob.integrity", tob::integrity),
    ("tob.total_order", tob::total_order),
    ("tob.validity", tob::validity),
    ("tob.ascending_processing", tob::ascending_processing),
    ("tob.lock_time_bound", tob::lock_time_bound),
    ("tob.candidate_completeness", tob::candidate_completeness),
    ("consensus.integrity", consensus::integrity),
    ("consensus.agreement", consensus::agreement),
    ("consensus.termination", consensus::termination),
    ("consensus.representative_validity", consensus::representative_validity),
    ("dep.weak_validity", consensus::dep_weak_validity),
    ("dep.agreement", consensus::dep_agreement),
    ("dep.integrity", consensus::dep_integrity),
    ("dep.termination", consensus::dep_termination),
    ("latency.good_case_delivery", latency::good_case_delivery),
    ("latency.blink_fast_path", latency::blink_fast_path),
    ("network.fifo", network::fifo),
    ("network.delay_bound", network::delay_bound),
];

fn run_group(prefix: &str, trace: &[TraceEvent], cfg: &CheckConfig) -> Vec<CheckReport> {
    PROPERTIES
        .iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .map(|&(property, check)| CheckReport {
            property,
            verdict: check(trace, cfg),
        })
        .collect()
}

pub fn check_tob(trace: &[TraceEvent], cfg: &CheckConfig) -> Vec<CheckReport> {
    run_group("tob.", trace, cfg)
}

/// Blink-level and dep-level consensus properties over every instance.
pub fn check_consensus(trace: &[TraceEvent], cfg: &CheckConfig) -> Vec<CheckReport> {
    let mut out = run_group("consensus.", trace, cfg);
    out.extend(run_group("dep.", trace, cfg));
    out
}

pub fn check_latency(trace: &[TraceEvent], cfg: &CheckConfig) -> Vec<CheckReport> {
    run_group("latency.", trace, cfg)
}

pub fn check_network(trace: &[TraceEvent], cfg: &CheckConfig) -> Vec<CheckReport> {
    run_group("network.", trace, cfg)
}

pub fn check_all(trace: &[TraceEvent], cfg: &CheckConfig) -> Vec<CheckReport> {
    run_group("", trace, cfg)
}

/// Re-runs `property` on a failing report's witness alone.
pub fn recheck(report: &CheckReport, cfg: &CheckConfig) -> Option<Verdict> {
    let (_, check) = PROPERTIES.iter().find(|(n, _)| *n == report.property)?;
    Some(check(report.verdict.witness(), cfg))
}

/// Builds a failing verdict from trace positions.
pub(crate) fn fail(trace: &[TraceEvent], mut at: Vec<usize>, reason: String) -> Verdict {
    at.sort_unstable();
    at.dedup();
    Verdict::Fail {
        reason,
        witness: at.into_iter().map(|i| trace[i].clone()).collect(),
    }
}
