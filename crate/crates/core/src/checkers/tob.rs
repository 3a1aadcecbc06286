//! Total-order broadcast properties, over the `AppDeliver` events of correct
//! servers, plus two internal invariants of the server reconstructed from the
//! `Time` and `Observe` messages each server received.

use std::collections::{BTreeMap, BTreeSet};

use super::{fail, CheckConfig, Verdict};
use crate::trace::{EventDetail, TraceEvent};
use crate::types::{BroadcastTuple, InstanceId, Payload, ProcessId, SimTime, Value, WireMessage};

/// `(position, tuple)` of every `AppDeliver` at each correct server, including
/// correct servers that delivered nothing.
fn deliveries<'a>(trace: &'a [TraceEvent], cfg: &CheckConfig) -> BTreeMap<ProcessId, Vec<(usize, &'a BroadcastTuple)>> {
    let mut out: BTreeMap<ProcessId, Vec<_>> = cfg.correct_servers.iter().map(|&s| (s, Vec::new())).collect();
    for (i, e) in trace.iter().enumerate() {
        if let EventDetail::AppDeliver(t) = &e.detail {
            if let Some(seq) = out.get_mut(&e.process) {
                seq.push((i, t));
            }
        }
    }
    out
}

pub fn no_duplication(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    for (server, seq) in deliveries(trace, cfg) {
        let mut seen: BTreeMap<(ProcessId, &Payload), usize> = BTreeMap::new();
        for (i, t) in seq {
            if let Some(first) = seen.insert((t.client, &t.message), i) {
                return fail(
                    trace,
                    vec![first, i],
                    format!("{server} delivered {}/{} twice", t.client, t.message),
                );
            }
        }
    }
    Verdict::Pass
}

/// A correct server only delivers what an honest client actually broadcast.
pub fn integrity(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    let mut broadcast: BTreeSet<(ProcessId, &Payload)> = BTreeSet::new();
    for (i, e) in trace.iter().enumerate() {
        match &e.detail {
            EventDetail::Broadcast(m) => {
                broadcast.insert((e.process, m));
            }
            EventDetail::AppDeliver(t)
                if cfg.is_correct_server(e.process)
                    && cfg.honest_clients.contains_key(&t.client)
                    && !broadcast.contains(&(t.client, &t.message)) =>
            {
                return fail(
                    trace,
                    vec![i],
                    format!(
                        "{} delivered {}/{} which was never broadcast",
                        e.process, t.client, t.message
                    ),
                );
            }
            _ => {}
        }
    }
    Verdict::Pass
}

/// Correct servers deliver the same `(client, message)` sequence: equal at
/// quiescence, prefix-compatible at a cutoff.
pub fn total_order(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    let seqs = deliveries(trace, cfg);
    let key = |t: &BroadcastTuple| (t.client, t.message.clone());
    let servers: Vec<_> = seqs.iter().collect();
    for (a_idx, (a, sa)) in servers.iter().enumerate() {
        for (b, sb) in &servers[a_idx + 1..] {
            let common = sa.len().min(sb.len());
            if let Some(k) = (0..common).find(|&k| key(sa[k].1) != key(sb[k].1)) {
                return fail(
                    trace,
                    vec![sa[k].0, sb[k].0],
                    format!("{a} and {b} disagree at delivery #{k}"),
                );
            }
            if cfg.quiescent && sa.len() != sb.len() {
                let (longer, extra) = if sa.len() > sb.len() {
                    (a, sa[common].0)
                } else {
                    (b, sb[common].0)
                };
                return fail(
                    trace,
                    vec![extra],
                    format!(
                        "{longer} delivered more than {} by the end of the run",
                        if longer == a { b } else { a }
                    ),
                );
            }
        }
    }
    Verdict::Pass
}

/// Every broadcast of a correct client is eventually delivered by every
/// correct server. Only decidable on a quiescent run.
pub fn validity(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    if !cfg.quiescent {
        return Verdict::NotApplicable("run was cut off before quiescence".into());
    }
    if !cfg.honest_clients.keys().any(|&c| cfg.expects_validity(c)) {
        return Verdict::NotApplicable("no correct client with a positive delay estimate".into());
    }
    let delivered: BTreeMap<ProcessId, BTreeSet<(ProcessId, &Payload)>> = deliveries(trace, cfg)
        .into_iter()
        .map(|(s, seq)| (s, seq.into_iter().map(|(_, t)| (t.client, &t.message)).collect()))
        .collect();
    for (i, e) in trace.iter().enumerate() {
        let EventDetail::Broadcast(m) = &e.detail else {
            continue;
        };
        if !cfg.expects_validity(e.process) {
            continue;
        }
        if let Some((s, _)) = delivered.iter().find(|(_, d)| !d.contains(&(e.process, m))) {
            return fail(trace, vec![i], format!("{s} never delivered {}/{m}", e.process));
        }
    }
    Verdict::Pass
}

/// Each correct server delivers tuples in strictly ascending tuple order.
pub fn ascending_processing(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    for (server, seq) in deliveries(trace, cfg) {
        for w in seq.windows(2) {
            if w[0].1 >= w[1].1 {
                return fail(
                    trace,
                    vec![w[0].0, w[1].0],
                    format!("{server} delivered {} after {}", w[1].1, w[0].1),
                );
            }
        }
    }
    Verdict::Pass
}

/// One server's `remote_times`, rebuilt from the `Time` messages it received.
#[derive(Default)]
struct LockView {
    /// Highest time per sender and the position that announced it.
    remote: BTreeMap<ProcessId, (SimTime, usize)>,
}

impl LockView {
    fn on_time(&mut self, from: ProcessId, t: SimTime, at: usize) {
        let slot = self.remote.entry(from).or_insert((SimTime::NEG_INF, at));
        if t > slot.0 {
            *slot = (t, at);
        }
    }

    fn top(&self, large: usize) -> Vec<(SimTime, usize)> {
        let mut v: Vec<_> = self.remote.values().copied().collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v.truncate(large);
        v
    }

    fn lock(&self, large: usize) -> SimTime {
        let top = self.top(large);
        if top.len() < large {
            SimTime::NEG_INF
        } else {
            top[large - 1].0
        }
    }

    /// Positions of the announcements that hold the lock time where it is.
    fn support(&self, large: usize) -> Vec<usize> {
        self.top(large).into_iter().map(|(_, i)| i).collect()
    }
}

fn time_delivery(e: &TraceEvent) -> Option<(ProcessId, SimTime)> {
    match &e.detail {
        EventDetail::Deliver {
            from,
            msg: WireMessage::Time(t),
        } => Some((*from, *t)),
        _ => None,
    }
}

/// A correct server's lock time never runs ahead of its own clock by more
/// than 2Δ: whatever f liars announce, the (4f+1)-th largest announcement is
/// backed by a correct sender, whose clock was at most Δ ahead of real time.
pub fn lock_time_bound(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    let large = cfg.quorums().large();
    let mut views: BTreeMap<ProcessId, LockView> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        let Some((from, t)) = time_delivery(e) else {
            continue;
        };
        if !cfg.is_correct_server(e.process) {
            continue;
        }
        let view = views.entry(e.process).or_default();
        view.on_time(from, t, i);
        let lock = view.lock(large);
        let limit = cfg.local_time(e.process, e.time).saturating_add(2 * cfg.drift);
        if lock > limit {
            return fail(
                trace,
                view.support(large),
                format!("{} lock time {lock} exceeds local time plus 2Δ = {limit}", e.process),
            );
        }
    }
    Verdict::Pass
}

fn spotted_tuple(e: &TraceEvent) -> Option<BroadcastTuple> {
    match &e.detail {
        EventDetail::Deliver {
            msg: WireMessage::Observe(t),
            ..
        } => Some(t.clone()),
        EventDetail::Deliver {
            from,
            msg: WireMessage::Message { message, bet },
        } => Some(BroadcastTuple {
            client: *from,
            message: message.clone(),
            bet: *bet,
        }),
        _ => None,
    }
}

/// Every tuple some correct server decided to accept was heard of by every
/// correct server before that server's lock time passed its bet, so no
/// server can process past it without knowing it.
pub fn candidate_completeness(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    let large = cfg.quorums().large();
    let mut accepted: BTreeMap<BroadcastTuple, usize> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        if let EventDetail::Decide {
            instance: InstanceId::Tuple(t),
            value: Value::True,
            ..
        } = &e.detail
        {
            if cfg.is_correct_server(e.process) {
                accepted.entry(t.clone()).or_insert(i);
            }
        }
    }
    if accepted.is_empty() {
        return Verdict::Pass;
    }
    for &server in &cfg.correct_servers {
        let mut view = LockView::default();
        let mut spotted: BTreeSet<BroadcastTuple> = BTreeSet::new();
        // accepted tuples not yet known to this server
        let mut pending: BTreeSet<&BroadcastTuple> = accepted.keys().collect();
        for (i, e) in trace.iter().enumerate() {
            if e.process != server {
                continue;
            }
            if let Some(t) = spotted_tuple(e) {
                pending.remove(&t);
                spotted.insert(t);
            }
            let Some((from, t)) = time_delivery(e) else {
                continue;
            };
            view.on_time(from, t, i);
            let lock = view.lock(large);
            if let Some(&missed) = pending.iter().find(|t| t.bet <= lock) {
                let mut at = view.support(large);
                at.push(accepted[missed]);
                return fail(
                    trace,
                    at,
                    format!("{server} lock time reached {lock} without having seen accepted {missed}"),
                );
            }
        }
    }
    Verdict::Pass
}
