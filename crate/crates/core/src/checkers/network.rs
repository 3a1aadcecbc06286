//! Link properties: FIFO, reliability at quiescence, and the delay bound.

use std::collections::BTreeMap;

use super::{fail, CheckConfig, Verdict};
use crate::trace::{EventDetail, TraceEvent};
use crate::types::{ProcessId, WireMessage};

#[derive(Default)]
struct Link<'a> {
    sends: Vec<(usize, &'a WireMessage)>,
    delivers: Vec<(usize, &'a WireMessage)>,
}

fn links(trace: &[TraceEvent]) -> BTreeMap<(ProcessId, ProcessId), Link<'_>> {
    let mut out: BTreeMap<_, Link<'_>> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        match &e.detail {
            EventDetail::Send { to, msg } => out.entry((e.process, *to)).or_default().sends.push((i, msg)),
            EventDetail::Deliver { from, msg } => out.entry((*from, e.process)).or_default().delivers.push((i, msg)),
            _ => {}
        }
    }
    out
}

/// Each link delivers exactly what was sent on it, in send order; at
/// quiescence nothing is left in flight.
pub fn fifo(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    for ((src, dst), link) in links(trace) {
        for (k, &(j, got)) in link.delivers.iter().enumerate() {
            match link.sends.get(k) {
                None => {
                    return fail(
                        trace,
                        vec![j],
                        format!("{src}->{dst} delivered {got} that was never sent"),
                    )
                }
                Some(&(i, sent)) if sent != got => {
                    return fail(
                        trace,
                        vec![i, j],
                        format!("{src}->{dst} message #{k}: sent {sent}, delivered {got}"),
                    )
                }
                Some(_) => {}
            }
        }
        if cfg.quiescent {
            if let Some(&(i, sent)) = link.sends.get(link.delivers.len()) {
                return fail(trace, vec![i], format!("{src}->{dst} never delivered {sent}"));
            }
        }
    }
    Verdict::Pass
}

/// Every delay is at least one tick and at most δ, unless the delivery was
/// held back to keep FIFO order behind an earlier delivery on the same link.
pub fn delay_bound(trace: &[TraceEvent], cfg: &CheckConfig) -> Verdict {
    for ((src, dst), link) in links(trace) {
        let mut previous = None;
        for (&(i, _), &(j, _)) in link.sends.iter().zip(&link.delivers) {
            let (sent, got) = (trace[i].time, trace[j].time);
            let d = got.0 - sent.0;
            let repaired = previous == Some(got);
            if d < 1 || (d > cfg.delta && !repaired) {
                return fail(
                    trace,
                    vec![i, j],
                    format!("{src}->{dst} delay {d} outside [1, {}]", cfg.delta),
                );
            }
            previous = Some(got);
        }
    }
    Verdict::Pass
}
