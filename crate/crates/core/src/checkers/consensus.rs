//! Per-instance consensus properties for Blink (`Propose`/`Decide`) and for
//! the underlying weak consensus (`DepPropose`/`DepDecide`), over correct
//! servers only.

use std::collections::BTreeMap;

use super::{fail, CheckConfig, Verdict};
use crate::trace::{EventDetail, TraceEvent};
use crate::types::{InstanceId, ProcessId, Value};

/// `(position, server, value)` per instance for one pair of event kinds.
#[derive(Default)]
struct Instance {
    proposals: Vec<(usize, ProcessId, Value)>,
    decisions: Vec<(usize, ProcessId, Value)>,
}

#[derive(Clone, Copy)]
enum Layer {
    Blink,
    Dep,
}

fn instances(trace: &[TraceEvent], cfg: &CheckConfig, layer: Layer) -> BTreeMap<InstanceId, Instance> {
    let mut out: BTreeMap<InstanceId, Instance> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        if !cfg.is_correct_server(e.process) {
            continue;
        }
        let (instance, value, is_decision) = match (layer, &e.detail) {
            (Layer::Blink, EventDetail::Propose { instance, value }) => (instance, *value, false),
            (Layer::Blink, EventDetail::Decide { instance, value, .. }) => (instance, *value, true),
            (Layer::Dep, EventDetail::DepPropose { instance, value }) => (instance, *value, false),
            (Layer::Dep, EventDetail::DepDecide { instance, value }) => (instance, *value, true),
            _ => continue,
        };
        let slot = out.entry(instance.clone()).or_default();
        let list = if is_decision {
            &mut slot.decisions
        } else {
            &mut slot.proposals
        };
        list.push((i, e.process, value));
    }
    out
}

fn once_per_server(trace: &[TraceEvent], cfg: &CheckConfig, layer: Layer) -> Verdict {
    for (id, inst) in instances(trace, cfg, layer) {
        let mut first: BTreeMap<ProcessId, usize> = BTreeMap::new();
        for &(i, s, _) in &inst.decisions {
            if let Some(j) = first.insert(s, i) {
                return fail(trace, vec![j, i], format!("{s} decided {id} twice"));
            }
        }
    }
    Verdict::Pass
}

fn same_value(trace: &[TraceEvent], cfg: &CheckConfig, layer: Layer) -> Verdict {
    for (id, inst) in instances(trace, cfg, layer) {
        if let Some(&(first, s0, v0)) = inst.decisions.first() {
            if let Some(&(i, s1, v1)) = inst.decisions.iter().find(|d| d.2 != v0) {
                return fail(
                    trace,
                    vec![first, i],
                    format!("{id}: {s0} decided {v0}, {s1} decided {v1}"),
                );
            }
        }
    }
    Verdict::Pass
}

/// Once every correct server proposed, every correct server decides.
fn all_decide(trace: &[TraceEvent], cfg: &CheckConfig, layer: Layer) -> Verdict {
    if !cfg.quiescent {
        return Verdict::NotApplicable("run was cut off before quiescence".into());
    }
    for (id, inst) in instances(trace, cfg, layer) {
        let everyone_proposed = cfg
            .correct_servers
            .iter()
            .all(|s| inst.proposals.iter().any(|p| p.1 == *s));
        if !everyone_proposed {
            continue;
        }
        if let Some(s) = cfg
            .correct_servers
            .iter()
            .find(|s| !inst.decisions.iter().any(|d| d.1 == **s))
        {
            let at = inst.proposals.iter().map(|p| p.0).collect();
            return fail(
                trace,
                at,
                format!("{s} never decided {id} although every correct server proposed"),
            );
        }
    }
    Verdict::Pass
}

pub fn integrity(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    once_per_server(trace, cfg, Layer::Blink)
}

pub fn agreement(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    same_value(trace, cfg, Layer::Blink)
}

pub fn termination(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    all_decide(trace, cfg, Layer::Blink)
}

/// A decided value was proposed by at least f+1 correct servers.
pub fn representative_validity(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    let needed = cfg.quorums().one_correct();
    for (id, inst) in instances(trace, cfg, Layer::Blink) {
        for &(i, s, v) in &inst.decisions {
            let backers: Vec<usize> = inst.proposals.iter().filter(|p| p.2 == v).map(|p| p.0).collect();
            if backers.len() < needed {
                let mut at = backers.clone();
                at.push(i);
                return fail(
                    trace,
                    at,
                    format!("{s} decided {v} in {id} with only {} correct proposers", backers.len()),
                );
            }
        }
    }
    Verdict::Pass
}

pub fn dep_weak_validity(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    for (id, inst) in instances(trace, cfg, Layer::Dep) {
        for &(i, s, v) in &inst.decisions {
            if !inst.proposals.iter().any(|p| p.2 == v) {
                return fail(
                    trace,
                    vec![i],
                    format!("{s} got dep decision {v} in {id}, which no correct server proposed"),
                );
            }
        }
    }
    Verdict::Pass
}

pub fn dep_agreement(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    same_value(trace, cfg, Layer::Dep)
}

pub fn dep_integrity(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    once_per_server(trace, cfg, Layer::Dep)
}

pub fn dep_termination(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    all_decide(trace, cfg, Layer::Dep)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::trace::DecidePath;

    fn inst() -> InstanceId {
        InstanceId::Named(0)
    }

    fn propose(t: i64, server: u32, v: bool) -> TraceEvent {
        ev(
            t,
            s(server),
            EventDetail::Propose {
                instance: inst(),
                value: v.into(),
            },
        )
    }

    fn decide(t: i64, server: u32, v: bool) -> TraceEvent {
        ev(
            t,
            s(server),
            EventDetail::Decide {
                instance: inst(),
                value: v.into(),
                path: DecidePath::Fast,
            },
        )
    }

    fn unanimous() -> Vec<TraceEvent> {
        let mut t: Vec<_> = (0..6).map(|i| propose(0, i, true)).collect();
        t.extend((0..6).map(|i| decide(10, i, true)));
        t
    }

    #[test]
    fn unanimous_instance_passes() {
        let cfg = config(true);
        let t = unanimous();
        for check in [integrity, agreement, termination, representative_validity] {
            assert_eq!(check(&t, &cfg), Verdict::Pass);
        }
    }

    #[test]
    fn conflicting_decisions_fail_agreement() {
        let cfg = config(true);
        let mut t = unanimous();
        t[8] = decide(10, 2, false);
        let w = assert_self_validating("consensus.agreement", agreement(&t, &cfg), &cfg);
        assert_eq!(w, vec![decide(10, 0, true), decide(10, 2, false)]);
    }

    #[test]
    fn deciding_twice_fails_integrity() {
        let cfg = config(true);
        let mut t = unanimous();
        t.push(decide(30, 4, true));
        assert_self_validating("consensus.integrity", integrity(&t, &cfg), &cfg);
    }

    #[test]
    fn value_with_f_correct_proposers_fails_representative_validity() {
        let cfg = config(true);
        // f = 1: a single correct proposer of False is not enough
        let mut t: Vec<_> = (0..5).map(|i| propose(0, i, true)).collect();
        t.push(propose(0, 5, false));
        t.push(decide(10, 0, false));
        let w = assert_self_validating(
            "consensus.representative_validity",
            representative_validity(&t, &cfg),
            &cfg,
        );
        assert_eq!(w, vec![propose(0, 5, false), decide(10, 0, false)]);
    }

    #[test]
    fn byzantine_proposals_do_not_count() {
        let mut cfg = config(true);
        cfg.correct_servers.remove(&s(5));
        let mut t: Vec<_> = (0..4).map(|i| propose(0, i, true)).collect();
        t.push(propose(0, 4, false));
        t.push(propose(0, 5, false));
        t.push(decide(10, 0, false));
        assert!(representative_validity(&t, &cfg).is_fail());
    }

    #[test]
    fn missing_decision_fails_termination_at_quiescence() {
        let mut t = unanimous();
        t.retain(|e| *e != decide(10, 3, true));
        assert!(matches!(termination(&t, &config(false)), Verdict::NotApplicable(_)));
        let cfg = config(true);
        let w = assert_self_validating("consensus.termination", termination(&t, &cfg), &cfg);
        assert_eq!(w.len(), 6);
        // nobody is owed a decision before everyone proposed
        let partial: Vec<_> = (0..5).map(|i| propose(0, i, true)).collect();
        assert_eq!(termination(&partial, &cfg), Verdict::Pass);
    }

    fn dep(t: i64, server: u32, v: bool, decide: bool) -> TraceEvent {
        let (instance, value) = (inst(), Value::from(v));
        ev(
            t,
            s(server),
            if decide {
                EventDetail::DepDecide { instance, value }
            } else {
                EventDetail::DepPropose { instance, value }
            },
        )
    }

    #[test]
    fn dep_properties() {
        let cfg = config(true);
        let mut t: Vec<_> = (0..6).map(|i| dep(0, i, i < 3, false)).collect();
        t.extend((0..6).map(|i| dep(30, i, false, true)));
        for check in [dep_weak_validity, dep_agreement, dep_integrity, dep_termination] {
            assert_eq!(check(&t, &cfg), Verdict::Pass);
        }

        let mut unproposed: Vec<_> = (0..6).map(|i| dep(0, i, true, false)).collect();
        unproposed.push(dep(30, 0, false, true));
        assert_self_validating("dep.weak_validity", dep_weak_validity(&unproposed, &cfg), &cfg);

        let mut split = t.clone();
        split.push(dep(31, 0, true, true));
        assert_self_validating("dep.agreement", dep_agreement(&split, &cfg), &cfg);
        assert_self_validating("dep.integrity", dep_integrity(&split, &cfg), &cfg);

        t.pop();
        assert_self_validating("dep.termination", dep_termination(&t, &cfg), &cfg);
    }
}
