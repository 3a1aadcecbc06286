//! Latency guarantees, only meaningful on runs with exact message delays.

use std::collections::BTreeMap;

use super::{fail, CheckConfig, Verdict};
use crate::trace::{EventDetail, TraceEvent};
use crate::types::{InstanceId, Payload, ProcessId, SimTime, Value};

/// In the good case a broadcast at `t` is delivered by every server at
/// exactly `t + 2δ + ε`, provided the client's estimate is the real δ.
pub fn good_case_delivery(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    if !cfg.good_case {
        return Verdict::NotApplicable("not a good-case run".into());
    }
    if !cfg.quiescent {
        return Verdict::NotApplicable("run was cut off before quiescence".into());
    }
    let mut delivered: BTreeMap<(ProcessId, ProcessId, &Payload), (usize, SimTime)> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        if let EventDetail::AppDeliver(t) = &e.detail {
            delivered
                .entry((e.process, t.client, &t.message))
                .or_insert((i, e.time));
        }
    }
    let mut checked = 0;
    for (i, e) in trace.iter().enumerate() {
        let EventDetail::Broadcast(m) = &e.detail else {
            continue;
        };
        let Some(profile) = cfg.honest_clients.get(&e.process) else {
            continue;
        };
        if profile.delay_estimate != cfg.delta {
            continue;
        }
        checked += 1;
        let due = SimTime(e.time.0 + 2 * cfg.delta + profile.bet_margin);
        for &server in &cfg.correct_servers {
            match delivered.get(&(server, e.process, m)) {
                None => return fail(trace, vec![i], format!("{server} never delivered {}/{m}", e.process)),
                Some(&(j, at)) if at != due => {
                    return fail(
                        trace,
                        vec![i, j],
                        format!("{server} delivered {}/{m} at {at}, expected {due}", e.process),
                    )
                }
                Some(_) => {}
            }
        }
    }
    if checked == 0 {
        return Verdict::NotApplicable("no broadcast from a client that knows δ".into());
    }
    Verdict::Pass
}

/// When every correct server proposes the same value, every correct server
/// decides within one message delay of the last of those proposals.
pub fn blink_fast_path(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    if !cfg.exact_delta {
        return Verdict::NotApplicable("message delays are not exactly δ".into());
    }
    #[derive(Default)]
    struct Inst {
        proposals: BTreeMap<ProcessId, (usize, SimTime, Value)>,
        decisions: BTreeMap<ProcessId, (usize, SimTime)>,
    }
    let mut instances: BTreeMap<&InstanceId, Inst> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        if !cfg.is_correct_server(e.process) {
            continue;
        }
        match &e.detail {
            EventDetail::Propose { instance, value } => {
                instances
                    .entry(instance)
                    .or_default()
                    .proposals
                    .entry(e.process)
                    .or_insert((i, e.time, *value));
            }
            EventDetail::Decide { instance, .. } => {
                instances
                    .entry(instance)
                    .or_default()
                    .decisions
                    .entry(e.process)
                    .or_insert((i, e.time));
            }
            _ => {}
        }
    }
    let mut checked = 0;
    for (id, inst) in &instances {
        if inst.proposals.len() < cfg.correct_servers.len() {
            continue;
        }
        let mut values = inst.proposals.values().map(|p| p.2);
        let first = values.next();
        if values.any(|v| Some(v) != first) {
            continue;
        }
        checked += 1;
        let last = inst.proposals.values().map(|p| p.1).max().expect("non-empty");
        let due = SimTime(last.0 + cfg.delta);
        let proposals: Vec<usize> = inst.proposals.values().map(|p| p.0).collect();
        for &server in &cfg.correct_servers {
            match inst.decisions.get(&server) {
                None if cfg.quiescent => {
                    return fail(trace, proposals, format!("{server} never decided unanimous {id}"));
                }
                Some(&(j, at)) if at > due => {
                    let mut w = proposals.clone();
                    w.push(j);
                    return fail(
                        trace,
                        w,
                        format!("{server} decided unanimous {id} at {at}, bound {due}"),
                    );
                }
                _ => {}
            }
        }
    }
    if checked == 0 {
        return Verdict::NotApplicable("no instance with a unanimous correct proposal".into());
    }
    Verdict::Pass
}
