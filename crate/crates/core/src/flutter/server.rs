use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound;

use serde::{Deserialize, Serialize};

use crate::blink::Consensus;
use crate::error::ProtocolError;
use crate::simnet::{Context, Input, Node};
use crate::trace::{EventDetail, TimerToken};
use crate::types::{BroadcastTuple, InstanceId, Payload, ProcessId, Quorums, SimTime, Value, WireMessage};

/// Optional periodic time beacon, off by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicBeat {
    pub every: i64,
    /// Last local time at which a periodic beat is armed.
    pub until: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerConfig {
    pub id: ProcessId,
    pub servers: u32,
    pub f: usize,
    pub periodic_beat: Option<PeriodicBeat>,
}

/// One Flutter server: relays what it sees, announces its local time, runs
/// one Blink instance per `(client, message, bet)` and delivers accepted
/// tuples in bet order once its lock time has passed them.
#[derive(Clone, Debug)]
pub struct FlutterServer {
    config: ServerConfig,
    quorums: Quorums,
    consensus: Consensus,
    observed: BTreeSet<BroadcastTuple>,
    proposed: BTreeSet<BroadcastTuple>,
    candidates: BTreeSet<BroadcastTuple>,
    delivered: BTreeSet<(ProcessId, Payload)>,
    remote_times: BTreeMap<ProcessId, SimTime>,
    decisions: BTreeMap<BroadcastTuple, Value>,
    /// `None` is the initial `(⊥, ⊥, −∞)` cursor, below every tuple.
    last_processed: Option<BroadcastTuple>,
    /// Tuples in the order `order()` was called, for inspection.
    processed_log: Vec<BroadcastTuple>,
}

impl FlutterServer {
    pub fn new(config: ServerConfig) -> Self {
        let quorums = Quorums::new(config.servers as usize, config.f);
        let remote_times = (0..config.servers)
            .map(|i| (ProcessId::server(i), SimTime::NEG_INF))
            .collect();
        FlutterServer {
            consensus: Consensus::new(config.id, quorums),
            config,
            quorums,
            observed: BTreeSet::new(),
            proposed: BTreeSet::new(),
            candidates: BTreeSet::new(),
            delivered: BTreeSet::new(),
            remote_times,
            decisions: BTreeMap::new(),
            last_processed: None,
            processed_log: Vec::new(),
        }
    }

    pub fn id(&self) -> ProcessId {
        self.config.id
    }

    pub fn observed(&self) -> &BTreeSet<BroadcastTuple> {
        &self.observed
    }

    pub fn proposed(&self) -> &BTreeSet<BroadcastTuple> {
        &self.proposed
    }

    pub fn candidates(&self) -> &BTreeSet<BroadcastTuple> {
        &self.candidates
    }

    pub fn delivered(&self) -> &BTreeSet<(ProcessId, Payload)> {
        &self.delivered
    }

    pub fn remote_times(&self) -> &BTreeMap<ProcessId, SimTime> {
        &self.remote_times
    }

    pub fn decisions(&self) -> &BTreeMap<BroadcastTuple, Value> {
        &self.decisions
    }

    pub fn last_processed(&self) -> Option<&BroadcastTuple> {
        self.last_processed.as_ref()
    }

    pub fn processed_log(&self) -> &[BroadcastTuple] {
        &self.processed_log
    }

    pub fn consensus(&self) -> &Consensus {
        &self.consensus
    }

    /// Highest time that at least 4f+1 servers announced reaching:
    /// the (4f+1)-th largest entry of `remote_times`.
    pub fn lock_time(&self) -> SimTime {
        let mut times: Vec<SimTime> = self.remote_times.values().copied().collect();
        times.sort_unstable_by(|a, b| b.cmp(a));
        times.get(self.quorums.large() - 1).copied().unwrap_or(SimTime::NEG_INF)
    }

    pub fn beat(&self, ctx: &mut Context<'_>) {
        ctx.send_to_servers(&WireMessage::Time(ctx.local_time()));
    }

    pub fn on_time(&mut self, from: ProcessId, t: SimTime, ctx: &mut Context<'_>) {
        if let Some(slot) = self.remote_times.get_mut(&from) {
            *slot = (*slot).max(t);
        }
        self.process_next(ctx);
    }

    pub fn spot(&mut self, tuple: BroadcastTuple, ctx: &mut Context<'_>) {
        if tuple.bet > self.lock_time() {
            self.candidates.insert(tuple.clone());
        }
        if !self.observed.contains(&tuple) {
            ctx.send_to_servers(&WireMessage::Observe(tuple.clone()));
            ctx.schedule_timer(tuple.bet, TimerToken::Beat);
            ctx.schedule_timer(tuple.bet, TimerToken::Expiry(tuple.clone()));
            self.observed.insert(tuple);
        }
        self.process_next(ctx);
    }

    fn propose(&mut self, tuple: BroadcastTuple, v: Value, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        self.proposed.insert(tuple.clone());
        self.consensus.propose(InstanceId::Tuple(tuple), v, ctx)
    }

    /// `Message(m, b)` straight from client `c`.
    pub fn on_client_message(
        &mut self,
        client: ProcessId,
        message: Payload,
        bet: SimTime,
        ctx: &mut Context<'_>,
    ) -> Result<(), ProtocolError> {
        let tuple = BroadcastTuple { client, message, bet };
        self.spot(tuple.clone(), ctx);
        if !self.proposed.contains(&tuple) {
            let in_time = bet > ctx.local_time();
            self.propose(tuple, in_time.into(), ctx)?;
        }
        Ok(())
    }

    /// Local time reached `b` for a tuple this server may never have heard
    /// from its client: reject it unless already proposed.
    pub fn on_expiry_check(&mut self, tuple: BroadcastTuple, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        debug_assert!(tuple.bet <= ctx.local_time());
        if self.observed.contains(&tuple) && !self.proposed.contains(&tuple) {
            self.propose(tuple, Value::False, ctx)?;
        }
        Ok(())
    }

    pub fn on_consensus_decide(&mut self, instance: InstanceId, v: Value, ctx: &mut Context<'_>) {
        let InstanceId::Tuple(tuple) = instance else {
            return;
        };
        ctx.send(
            tuple.client,
            WireMessage::Decision {
                message: tuple.message.clone(),
                bet: tuple.bet,
                value: v,
            },
        );
        self.decisions.insert(tuple, v);
        self.process_next(ctx);
    }

    /// Processes candidates in ascending order while the next one is decided
    /// and below the lock time.
    pub fn process_next(&mut self, ctx: &mut Context<'_>) {
        let lock = self.lock_time();
        loop {
            let lower = match &self.last_processed {
                Some(t) => Bound::Excluded(t),
                None => Bound::Unbounded,
            };
            let Some(next) = self.candidates.range((lower, Bound::Unbounded)).next() else {
                return;
            };
            let Some(&decision) = self.decisions.get(next) else {
                return;
            };
            if next.bet > lock {
                return;
            }
            let next = next.clone();
            if decision == Value::True {
                self.order(&next, ctx);
            }
            self.last_processed = Some(next);
        }
    }

    fn order(&mut self, tuple: &BroadcastTuple, ctx: &mut Context<'_>) {
        self.processed_log.push(tuple.clone());
        if self.delivered.insert((tuple.client, tuple.message.clone())) {
            ctx.record(EventDetail::AppDeliver(tuple.clone()));
        }
    }
}

impl Node for FlutterServer {
    fn on_start(&mut self, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        if let Some(p) = self.config.periodic_beat {
            ctx.schedule_timer(SimTime(ctx.local_time().0 + p.every), TimerToken::Periodic);
        }
        Ok(())
    }

    fn on_input(&mut self, input: Input, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        match input {
            Input::Propose { instance, value } => self.consensus.propose(instance, value, ctx),
            other => Err(ProtocolError::UnsupportedInput {
                process: self.id(),
                input: other.to_string(),
            }),
        }
    }

    fn on_message(&mut self, from: ProcessId, msg: WireMessage, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        match msg {
            WireMessage::Time(t) => self.on_time(from, t, ctx),
            WireMessage::Observe(tuple) => self.spot(tuple, ctx),
            WireMessage::Message { message, bet } => self.on_client_message(from, message, bet, ctx)?,
            WireMessage::Suggest { instance, value } => {
                if let Some(v) = self.consensus.on_suggest(from, instance.clone(), value, ctx) {
                    self.on_consensus_decide(instance, v, ctx);
                }
            }
            // Routing never hands a Decision to a server.
            WireMessage::Decision { .. } => {}
        }
        Ok(())
    }

    fn on_timer(&mut self, token: TimerToken, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        match token {
            TimerToken::Beat => self.beat(ctx),
            TimerToken::Expiry(tuple) => self.on_expiry_check(tuple, ctx)?,
            TimerToken::Periodic => {
                self.beat(ctx);
                if let Some(p) = self.config.periodic_beat {
                    let next = SimTime(ctx.local_time().0 + p.every);
                    if next <= p.until {
                        ctx.schedule_timer(next, TimerToken::Periodic);
                    }
                }
            }
            TimerToken::Adversary(_) => {}
        }
        Ok(())
    }

    fn on_dep_decide(
        &mut self,
        instance: InstanceId,
        value: Value,
        ctx: &mut Context<'_>,
    ) -> Result<(), ProtocolError> {
        if let Some(v) = self.consensus.on_dep_decide(instance.clone(), value, ctx) {
            self.on_consensus_decide(instance, v, ctx);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::Scratchpad;
    use crate::simnet::Effect;
    use proptest::prelude::*;

    fn s(i: u32) -> ProcessId {
        ProcessId::server(i)
    }

    fn c0() -> ProcessId {
        ProcessId::client(0)
    }

    fn server(f: usize) -> FlutterServer {
        FlutterServer::new(ServerConfig {
            id: s(0),
            servers: 5 * f as u32 + 1,
            f,
            periodic_beat: None,
        })
    }

    fn tuple(m: &str, b: i64) -> BroadcastTuple {
        BroadcastTuple::new(c0(), m, SimTime(b))
    }

    /// Runs `body` against a fresh context at local time `local`, returning
    /// the effects it queued.
    fn with_ctx<R>(local: i64, servers: u32, body: impl FnOnce(&mut Context<'_>) -> R) -> (R, Vec<Effect>) {
        let mut scratch = Scratchpad::default();
        let mut ctx = Context::new(s(0), SimTime(local), servers, &[], &mut scratch);
        let r = body(&mut ctx);
        (r, ctx.into_effects())
    }

    fn sends(effects: &[Effect]) -> Vec<(ProcessId, WireMessage)> {
        effects
            .iter()
            .filter_map(|e| match e {
                Effect::Send { to, msg } => Some((*to, msg.clone())),
                _ => None,
            })
            .collect()
    }

    fn proposals(effects: &[Effect]) -> Vec<(InstanceId, Value)> {
        effects
            .iter()
            .filter_map(|e| match e {
                Effect::Record(EventDetail::Propose { instance, value }) => Some((instance.clone(), *value)),
                _ => None,
            })
            .collect()
    }

    fn app_delivers(effects: &[Effect]) -> Vec<BroadcastTuple> {
        effects
            .iter()
            .filter_map(|e| match e {
                Effect::Record(EventDetail::AppDeliver(t)) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }

    fn set_times(srv: &mut FlutterServer, times: &[i64]) {
        for (i, &t) in times.iter().enumerate() {
            with_ctx(0, 6, |ctx| srv.on_time(s(i as u32), SimTime(t), ctx));
        }
    }

    /// max t such that at least 4f+1 entries are >= t, scanning every
    /// candidate threshold.
    fn lock_time_oracle(times: &[SimTime], f: usize) -> SimTime {
        let mut best = SimTime::NEG_INF;
        for &t in times {
            if times.iter().filter(|&&x| x >= t).count() > 4 * f {
                best = best.max(t);
            }
        }
        best
    }

    #[test]
    fn lock_time_starts_at_neg_inf() {
        assert_eq!(server(1).lock_time(), SimTime::NEG_INF);
    }

    #[test]
    fn lock_time_is_the_4f_plus_1_th_largest() {
        let mut srv = server(1);
        set_times(&mut srv, &[10, 10, 10, 10, 10, 3]);
        assert_eq!(srv.lock_time(), SimTime(10));
        let mut srv = server(1);
        set_times(&mut srv, &[9, 8, 7, 6, 5, 4]);
        assert_eq!(srv.lock_time(), SimTime(5));
        let mut srv = server(1);
        set_times(&mut srv, &[9, 8, 7, 6]);
        assert_eq!(srv.lock_time(), SimTime::NEG_INF);
    }

    #[test]
    fn time_updates_take_the_max() {
        let mut srv = server(1);
        set_times(&mut srv, &[4]);
        assert_eq!(srv.remote_times()[&s(0)], SimTime(4));
        set_times(&mut srv, &[9]);
        set_times(&mut srv, &[3]);
        assert_eq!(srv.remote_times()[&s(0)], SimTime(9));
    }

    #[test]
    fn beat_announces_local_time_to_everyone() {
        let srv = server(1);
        let ((), eff) = with_ctx(11, 6, |ctx| srv.beat(ctx));
        let sent = sends(&eff);
        assert_eq!(sent.len(), 6);
        assert!(sent.iter().all(|(_, m)| *m == WireMessage::Time(SimTime(11))));
    }

    #[test]
    fn spot_relays_once_and_arms_timers() {
        let mut srv = server(1);
        let ((), eff) = with_ctx(10, 6, |ctx| srv.spot(tuple("m", 11), ctx));
        assert!(srv.candidates().contains(&tuple("m", 11)));
        assert_eq!(sends(&eff).len(), 6);
        let timers: Vec<_> = eff
            .iter()
            .filter_map(|e| match e {
                Effect::Timer { at_local, token } => Some((*at_local, token.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(
            timers,
            vec![
                (SimTime(11), TimerToken::Beat),
                (SimTime(11), TimerToken::Expiry(tuple("m", 11)))
            ]
        );
        // second spot: nothing re-sent
        let ((), eff) = with_ctx(10, 6, |ctx| srv.spot(tuple("m", 11), ctx));
        assert!(eff.is_empty());
    }

    #[test]
    fn late_spot_is_relayed_but_not_a_candidate() {
        let mut srv = server(1);
        set_times(&mut srv, &[20; 6]);
        let ((), eff) = with_ctx(25, 6, |ctx| srv.spot(tuple("m", 15), ctx));
        assert!(!srv.candidates().contains(&tuple("m", 15)));
        assert!(srv.observed().contains(&tuple("m", 15)));
        assert_eq!(sends(&eff).len(), 6);
    }

    #[test]
    fn observed_tuple_can_still_become_candidate() {
        let mut srv = server(1);
        set_times(&mut srv, &[20; 6]);
        with_ctx(25, 6, |ctx| srv.spot(tuple("m", 30), ctx));
        srv.candidates.clear();
        let ((), eff) = with_ctx(25, 6, |ctx| srv.spot(tuple("m", 30), ctx));
        assert!(srv.candidates().contains(&tuple("m", 30)));
        assert!(sends(&eff).is_empty());
    }

    #[test]
    fn in_time_is_strict() {
        for (local, expect) in [(9, Value::True), (11, Value::False)] {
            let mut srv = server(1);
            let (r, eff) = with_ctx(local, 6, |ctx| {
                srv.on_client_message(c0(), "m".into(), SimTime(11), ctx)
            });
            r.unwrap();
            assert_eq!(proposals(&eff), vec![(InstanceId::Tuple(tuple("m", 11)), expect)]);
        }
    }

    #[test]
    fn expiry_rejects_observe_only_tuples() {
        let mut srv = server(1);
        with_ctx(5, 6, |ctx| srv.spot(tuple("m", 11), ctx));
        let (r, eff) = with_ctx(11, 6, |ctx| srv.on_expiry_check(tuple("m", 11), ctx));
        r.unwrap();
        assert_eq!(proposals(&eff), vec![(InstanceId::Tuple(tuple("m", 11)), Value::False)]);
    }

    #[test]
    fn expiry_after_client_message_is_a_no_op() {
        let mut srv = server(1);
        with_ctx(9, 6, |ctx| srv.on_client_message(c0(), "m".into(), SimTime(11), ctx))
            .0
            .unwrap();
        let (r, eff) = with_ctx(11, 6, |ctx| srv.on_expiry_check(tuple("m", 11), ctx));
        r.unwrap();
        assert!(proposals(&eff).is_empty());
    }

    #[test]
    fn message_at_bet_then_expiry_proposes_false_once() {
        let mut srv = server(1);
        let (r, eff1) = with_ctx(11, 6, |ctx| srv.on_client_message(c0(), "m".into(), SimTime(11), ctx));
        r.unwrap();
        let (r, eff2) = with_ctx(11, 6, |ctx| srv.on_expiry_check(tuple("m", 11), ctx));
        r.unwrap();
        let all: Vec<_> = proposals(&eff1).into_iter().chain(proposals(&eff2)).collect();
        assert_eq!(all, vec![(InstanceId::Tuple(tuple("m", 11)), Value::False)]);
    }

    #[test]
    fn decision_goes_to_the_client_only() {
        let mut srv = server(1);
        let ((), eff) = with_ctx(20, 6, |ctx| {
            srv.on_consensus_decide(InstanceId::Tuple(tuple("m", 11)), Value::True, ctx)
        });
        assert_eq!(
            sends(&eff),
            vec![(
                c0(),
                WireMessage::Decision {
                    message: "m".into(),
                    bet: SimTime(11),
                    value: Value::True
                }
            )]
        );
        // lock time still -inf: recorded but not processed
        assert_eq!(srv.decisions()[&tuple("m", 11)], Value::True);
        assert!(srv.last_processed().is_none());
    }

    fn prime(srv: &mut FlutterServer, tuples: &[(BroadcastTuple, Option<Value>)]) {
        for (t, _) in tuples {
            with_ctx(0, 6, |ctx| srv.spot(t.clone(), ctx));
        }
        for (t, d) in tuples {
            if let Some(v) = d {
                with_ctx(0, 6, |ctx| {
                    srv.on_consensus_decide(InstanceId::Tuple(t.clone()), *v, ctx)
                });
            }
        }
    }

    fn release(srv: &mut FlutterServer, lock: i64) -> Vec<BroadcastTuple> {
        let mut delivered = Vec::new();
        for i in 0..6 {
            let ((), eff) = with_ctx(lock, 6, |ctx| srv.on_time(s(i), SimTime(lock), ctx));
            delivered.extend(app_delivers(&eff));
        }
        delivered
    }

    #[test]
    fn processes_in_order_once_lock_time_passes() {
        let (a, b) = (tuple("a", 5), tuple("b", 8));
        let mut srv = server(1);
        prime(
            &mut srv,
            &[(a.clone(), Some(Value::True)), (b.clone(), Some(Value::True))],
        );
        assert_eq!(release(&mut srv, 10), vec![a, b.clone()]);
        assert_eq!(srv.last_processed(), Some(&b));
    }

    #[test]
    fn rejected_candidates_only_advance_the_cursor() {
        let (a, b) = (tuple("a", 5), tuple("b", 8));
        let mut srv = server(1);
        prime(&mut srv, &[(a, Some(Value::False)), (b.clone(), Some(Value::True))]);
        assert_eq!(release(&mut srv, 10), vec![b.clone()]);
        assert_eq!(srv.last_processed(), Some(&b));
    }

    #[test]
    fn undecided_predecessor_blocks_delivery() {
        let (a, b) = (tuple("a", 5), tuple("b", 8));
        let mut srv = server(1);
        prime(&mut srv, &[(a.clone(), None), (b.clone(), Some(Value::True))]);
        assert!(release(&mut srv, 10).is_empty());
        assert!(srv.last_processed().is_none());
        let ((), eff) = with_ctx(10, 6, |ctx| {
            srv.on_consensus_decide(InstanceId::Tuple(a.clone()), Value::True, ctx)
        });
        assert_eq!(app_delivers(&eff), vec![a, b]);
    }

    #[test]
    fn non_candidate_decisions_are_recorded_but_never_processed() {
        let mut srv = server(1);
        set_times(&mut srv, &[20; 6]);
        with_ctx(25, 6, |ctx| srv.spot(tuple("m", 15), ctx));
        let ((), eff) = with_ctx(25, 6, |ctx| {
            srv.on_consensus_decide(InstanceId::Tuple(tuple("m", 15)), Value::False, ctx)
        });
        assert!(app_delivers(&eff).is_empty());
        assert!(srv.last_processed().is_none());
        assert!(srv.decisions().contains_key(&tuple("m", 15)));
    }

    #[test]
    fn retried_message_is_delivered_once() {
        let (a, b) = (tuple("m", 5), tuple("m", 8));
        let other = BroadcastTuple::new(c0(), "n", SimTime(9));
        let mut srv = server(1);
        prime(
            &mut srv,
            &[
                (a.clone(), Some(Value::True)),
                (b.clone(), Some(Value::True)),
                (other.clone(), Some(Value::True)),
            ],
        );
        assert_eq!(release(&mut srv, 10), vec![a.clone(), other.clone()]);
        assert_eq!(srv.processed_log(), &[a, b, other]);
    }

    proptest! {
        #[test]
        fn lock_time_matches_threshold_scan(f in 0usize..3, times in prop::collection::vec(-5i64..30, 16)) {
            let n = 5 * f + 1;
            let mut srv = server(f);
            for (i, &t) in times.iter().take(n).enumerate() {
                with_ctx(0, n as u32, |ctx| srv.on_time(s(i as u32), SimTime(t), ctx));
            }
            let current: Vec<SimTime> = srv.remote_times().values().copied().collect();
            prop_assert_eq!(srv.lock_time(), lock_time_oracle(&current, f));
        }

        /// Lock time never decreases, whatever Time messages arrive.
        #[test]
        fn lock_time_is_monotone(updates in prop::collection::vec((0u32..6, -5i64..50), 0..60)) {
            let mut srv = server(1);
            let mut last = srv.lock_time();
            for (from, t) in updates {
                with_ctx(0, 6, |ctx| srv.on_time(s(from), SimTime(t), ctx));
                let now = srv.lock_time();
                prop_assert!(now >= last);
                last = now;
            }
        }
    }
}
