//! Byzantine servers and faulty clients.
//!
//! A Byzantine server wraps an honest [`FlutterServer`] core and rewrites the
//! effects it produces, so it stays plausible everywhere except where the
//! behavior attacks. It never talks to the underlying weak consensus (the
//! oracle already quantifies over every adversarial dep behavior), and it
//! cannot forge a sender: the simulator stamps every send with the process
//! that issued it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;
use crate::flutter::{bet_for, FlutterServer};
use crate::simnet::{Context, Effect, Input, Node};
use crate::trace::{EventDetail, TimerToken};
use crate::types::{BroadcastTuple, InstanceId, ParseError, Payload, ProcessId, Value, WireMessage};

/// Memory shared by every Byzantine process in a run.
#[derive(Clone, Debug, Default)]
pub struct Scratchpad {
    /// Tuples some forger has already fabricated.
    pub forged: BTreeSet<BroadcastTuple>,
}

/// How an equivocator chooses the value suggested to each recipient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equivocation {
    /// `True` to the lower half of the servers, `False` to the rest.
    #[default]
    Split,
    AllTrue,
    AllFalse,
    /// Whatever is currently the minority among the suggestions the
    /// recipient has received, read off the trace.
    Adaptive,
}

fn default_skew() -> i64 {
    1_000
}

fn default_forge_offset() -> i64 {
    3
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum ServerBehavior {
    /// Sends conflicting `Suggest`s in every instance.
    Equivocator {
        #[serde(default)]
        pattern: Equivocation,
    },
    /// Announces `Time(t + skew)` instead of `Time(t)`.
    TimeLiar {
        #[serde(default = "default_skew")]
        skew: i64,
    },
    /// For every genuine tuple it sees, relays two fabricated ones: same
    /// client and bet with a different message, and same client and message
    /// with the bet shifted by `bet_offset`.
    ObserveForger {
        #[serde(default = "default_forge_offset")]
        bet_offset: i64,
    },
    /// Sends nothing at all.
    Mute,
    /// Holds every `Observe` relay until its local clock reaches the bet,
    /// then announces its time and only then relays.
    StaleRelay,
}

fn default_reach() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum ClientBehavior {
    /// Sends its first `Message` to servers `0..reach` only, then crashes.
    PartialDisseminator {
        #[serde(default = "default_reach")]
        reach: u32,
    },
}

/// A named entry of the built-in catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Behavior {
    Server(ServerBehavior),
    Client(ClientBehavior),
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Server(ServerBehavior::Equivocator { .. }) => "equivocator",
            Behavior::Server(ServerBehavior::TimeLiar { .. }) => "time_liar",
            Behavior::Server(ServerBehavior::ObserveForger { .. }) => "observe_forger",
            Behavior::Server(ServerBehavior::Mute) => "mute",
            Behavior::Server(ServerBehavior::StaleRelay) => "stale_relay",
            Behavior::Client(ClientBehavior::PartialDisseminator { .. }) => "partial_disseminator",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behavior {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        builtin_behaviors()
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| ParseError::new("behavior", s))
    }
}

/// Every built-in behavior with default parameters.
pub fn builtin_behaviors() -> Vec<Behavior> {
    vec![
        Behavior::Server(ServerBehavior::Equivocator {
            pattern: Equivocation::Split,
        }),
        Behavior::Server(ServerBehavior::TimeLiar { skew: default_skew() }),
        Behavior::Server(ServerBehavior::ObserveForger {
            bet_offset: default_forge_offset(),
        }),
        Behavior::Server(ServerBehavior::Mute),
        Behavior::Server(ServerBehavior::StaleRelay),
        Behavior::Client(ClientBehavior::PartialDisseminator { reach: default_reach() }),
    ]
}

pub struct ByzantineServer {
    core: FlutterServer,
    behavior: ServerBehavior,
    /// StaleRelay: withheld relays by timer token.
    held: BTreeMap<u64, BroadcastTuple>,
    next_token: u64,
    /// Tuples this process already relayed (or withheld) itself.
    handled: BTreeSet<BroadcastTuple>,
}

impl ByzantineServer {
    pub fn new(core: FlutterServer, behavior: ServerBehavior) -> Self {
        ByzantineServer {
            core,
            behavior,
            held: BTreeMap::new(),
            next_token: 0,
            handled: BTreeSet::new(),
        }
    }

    pub fn behavior(&self) -> &ServerBehavior {
        &self.behavior
    }

    fn run_core<F>(&mut self, ctx: &mut Context<'_>, handler: F) -> Result<(), ProtocolError>
    where
        F: FnOnce(&mut FlutterServer, &mut Context<'_>) -> Result<(), ProtocolError>,
    {
        if self.behavior == ServerBehavior::Mute {
            return Ok(());
        }
        let mark = ctx.mark();
        handler(&mut self.core, ctx)?;
        for effect in ctx.take_effects_from(mark) {
            self.rewrite(effect, ctx);
        }
        Ok(())
    }

    fn rewrite(&mut self, effect: Effect, ctx: &mut Context<'_>) {
        match (&self.behavior, effect) {
            (_, Effect::DepPropose { .. }) => {}
            (
                ServerBehavior::Equivocator { pattern },
                Effect::Send {
                    to,
                    msg: WireMessage::Suggest { instance, value },
                },
            ) => {
                let value = equivocate(*pattern, to, &instance, value, ctx);
                ctx.send(to, WireMessage::Suggest { instance, value });
            }
            (
                ServerBehavior::TimeLiar { skew },
                Effect::Send {
                    to,
                    msg: WireMessage::Time(t),
                },
            ) => {
                ctx.send(to, WireMessage::Time(t.saturating_add(*skew)));
            }
            (
                ServerBehavior::StaleRelay,
                Effect::Send {
                    msg: WireMessage::Observe(t),
                    ..
                },
            ) => {
                if !self.handled.insert(t.clone()) {
                    return;
                }
                if t.bet > ctx.local_time() {
                    let token = self.next_token;
                    self.next_token += 1;
                    ctx.schedule_timer(t.bet, TimerToken::Adversary(token));
                    self.held.insert(token, t);
                } else {
                    release(t, ctx);
                }
            }
            (
                ServerBehavior::ObserveForger { bet_offset },
                Effect::Send {
                    to,
                    msg: WireMessage::Observe(t),
                },
            ) => {
                let first = self.handled.insert(t.clone());
                let genuine = !ctx.scratch().forged.contains(&t);
                ctx.send(to, WireMessage::Observe(t.clone()));
                if first && genuine {
                    for forged in forgeries(&t, *bet_offset) {
                        ctx.scratch().forged.insert(forged.clone());
                        ctx.send_to_servers(&WireMessage::Observe(forged));
                    }
                }
            }
            (_, other) => ctx.push(other),
        }
    }
}

/// Announces the local time, then relays `t`.
fn release(t: BroadcastTuple, ctx: &mut Context<'_>) {
    ctx.send_to_servers(&WireMessage::Time(ctx.local_time()));
    ctx.send_to_servers(&WireMessage::Observe(t));
}

fn forgeries(t: &BroadcastTuple, bet_offset: i64) -> [BroadcastTuple; 2] {
    let mut other = t.message.0.clone();
    other.extend_from_slice(b"!forged");
    [
        BroadcastTuple {
            client: t.client,
            message: Payload(other),
            bet: t.bet,
        },
        BroadcastTuple {
            client: t.client,
            message: t.message.clone(),
            bet: t.bet.saturating_add(bet_offset),
        },
    ]
}

fn equivocate(pattern: Equivocation, to: ProcessId, instance: &InstanceId, honest: Value, ctx: &Context<'_>) -> Value {
    match pattern {
        Equivocation::Split => Value::from(to.index < ctx.server_count() / 2),
        Equivocation::AllTrue => Value::True,
        Equivocation::AllFalse => Value::False,
        Equivocation::Adaptive => {
            let mut counts = [0usize; 2];
            for e in ctx.trace().iter().filter(|e| e.process == to) {
                if let EventDetail::Deliver {
                    msg: WireMessage::Suggest { instance: i, value },
                    ..
                } = &e.detail
                {
                    if i == instance {
                        counts[value.as_bool() as usize] += 1;
                    }
                }
            }
            match counts[0].cmp(&counts[1]) {
                std::cmp::Ordering::Less => Value::False,
                std::cmp::Ordering::Greater => Value::True,
                std::cmp::Ordering::Equal => honest.negate(),
            }
        }
    }
}

impl Node for ByzantineServer {
    fn on_start(&mut self, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        self.run_core(ctx, |core, ctx| core.on_start(ctx))
    }

    fn on_input(&mut self, input: Input, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        self.run_core(ctx, |core, ctx| core.on_input(input, ctx))
    }

    fn on_message(&mut self, from: ProcessId, msg: WireMessage, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        self.run_core(ctx, |core, ctx| core.on_message(from, msg, ctx))
    }

    fn on_timer(&mut self, token: TimerToken, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        if let TimerToken::Adversary(k) = token {
            if let Some(t) = self.held.remove(&k) {
                release(t, ctx);
            }
            return Ok(());
        }
        self.run_core(ctx, |core, ctx| core.on_timer(token, ctx))
    }

    fn on_dep_decide(
        &mut self,
        instance: InstanceId,
        value: Value,
        ctx: &mut Context<'_>,
    ) -> Result<(), ProtocolError> {
        self.run_core(ctx, |core, ctx| core.on_dep_decide(instance, value, ctx))
    }
}

/// Faulty client that reaches only part of the system, then crashes.
pub struct PartialDisseminator {
    id: ProcessId,
    reach: u32,
    delay_estimate: i64,
    bet_margin: i64,
    crashed: bool,
}

impl PartialDisseminator {
    pub fn new(id: ProcessId, reach: u32, delay_estimate: i64, bet_margin: i64) -> Self {
        PartialDisseminator {
            id,
            reach,
            delay_estimate,
            bet_margin,
            crashed: false,
        }
    }
}

impl Node for PartialDisseminator {
    fn on_input(&mut self, input: Input, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        if self.crashed {
            return Ok(());
        }
        match input {
            Input::Broadcast(m) => {
                ctx.record(EventDetail::Broadcast(m.clone()));
                let bet = bet_for(ctx.local_time(), 0, self.delay_estimate, self.bet_margin);
                let reach = self.reach.min(ctx.server_count());
                for s in 0..reach {
                    ctx.send(
                        ProcessId::server(s),
                        WireMessage::Message {
                            message: m.clone(),
                            bet,
                        },
                    );
                }
                self.crashed = true;
                Ok(())
            }
            Input::Crash => {
                self.crashed = true;
                Ok(())
            }
            other => Err(ProtocolError::UnsupportedInput {
                process: self.id,
                input: other.to_string(),
            }),
        }
    }

    fn on_message(&mut self, _from: ProcessId, _msg: WireMessage, _ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        Ok(())
    }

    fn on_timer(&mut self, _token: TimerToken, _ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flutter::ServerConfig;
    use crate::types::SimTime;

    fn byz(behavior: ServerBehavior) -> ByzantineServer {
        let core = FlutterServer::new(ServerConfig {
            id: ProcessId::server(5),
            servers: 6,
            f: 1,
            periodic_beat: None,
        });
        ByzantineServer::new(core, behavior)
    }

    fn drive(
        node: &mut dyn Node,
        local: i64,
        scratch: &mut Scratchpad,
        body: impl FnOnce(&mut dyn Node, &mut Context<'_>) -> Result<(), ProtocolError>,
    ) -> Vec<Effect> {
        let mut ctx = Context::new(ProcessId::server(5), SimTime(local), 6, &[], scratch);
        body(node, &mut ctx).unwrap();
        ctx.into_effects()
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

    fn client_msg(bet: i64) -> (ProcessId, WireMessage) {
        (
            ProcessId::client(0),
            WireMessage::Message {
                message: "m".into(),
                bet: SimTime(bet),
            },
        )
    }

    #[test]
    fn catalog_names_round_trip() {
        let all = builtin_behaviors();
        assert_eq!(all.len(), 6);
        for b in all {
            assert_eq!(b.name().parse::<Behavior>().unwrap(), b);
        }
        assert!("nope".parse::<Behavior>().is_err());
    }

    #[test]
    fn mute_sends_nothing() {
        let mut node = byz(ServerBehavior::Mute);
        let mut scratch = Scratchpad::default();
        let (from, msg) = client_msg(11);
        let eff = drive(&mut node, 10, &mut scratch, |n, ctx| n.on_message(from, msg, ctx));
        assert!(eff.is_empty());
    }

    #[test]
    fn split_equivocator_and_no_dep_access() {
        let mut node = byz(ServerBehavior::Equivocator {
            pattern: Equivocation::Split,
        });
        let mut scratch = Scratchpad::default();
        let input = Input::Propose {
            instance: InstanceId::Named(0),
            value: Value::True,
        };
        let eff = drive(&mut node, 0, &mut scratch, |n, ctx| n.on_input(input, ctx));
        let values: Vec<Value> = sends(&eff)
            .into_iter()
            .map(|(_, m)| match m {
                WireMessage::Suggest { value, .. } => value,
                other => panic!("unexpected {other}"),
            })
            .collect();
        use Value::*;
        assert_eq!(values, vec![True, True, True, False, False, False]);
        // even with a fast quorum of suggestions, no DepPropose escapes
        let mut eff = Vec::new();
        for s in 0..6 {
            eff.extend(drive(&mut node, 10, &mut scratch, |n, ctx| {
                n.on_message(
                    ProcessId::server(s),
                    WireMessage::Suggest {
                        instance: InstanceId::Named(0),
                        value: True,
                    },
                    ctx,
                )
            }));
        }
        assert!(!eff.iter().any(|e| matches!(e, Effect::DepPropose { .. })));
    }

    #[test]
    fn time_liar_skews_beats() {
        let mut node = byz(ServerBehavior::TimeLiar { skew: 100 });
        let mut scratch = Scratchpad::default();
        let eff = drive(&mut node, 11, &mut scratch, |n, ctx| n.on_timer(TimerToken::Beat, ctx));
        assert!(sends(&eff).iter().all(|(_, m)| *m == WireMessage::Time(SimTime(111))));
    }

    #[test]
    fn forger_fabricates_two_tuples_once() {
        let mut node = byz(ServerBehavior::ObserveForger { bet_offset: 3 });
        let mut scratch = Scratchpad::default();
        let (from, msg) = client_msg(11);
        let eff = drive(&mut node, 10, &mut scratch, |n, ctx| n.on_message(from, msg, ctx));
        let observes: BTreeSet<BroadcastTuple> = sends(&eff)
            .into_iter()
            .filter_map(|(_, m)| match m {
                WireMessage::Observe(t) => Some(t),
                _ => None,
            })
            .collect();
        assert_eq!(observes.len(), 3);
        assert_eq!(scratch.forged.len(), 2);
        assert!(scratch
            .forged
            .contains(&BroadcastTuple::new(ProcessId::client(0), "m", SimTime(14))));
        // forged tuples coming back are relayed but not forged from again
        let forged = scratch.forged.iter().next().unwrap().clone();
        let eff = drive(&mut node, 12, &mut scratch, |n, ctx| {
            n.on_message(ProcessId::server(0), WireMessage::Observe(forged), ctx)
        });
        assert_eq!(sends(&eff).len(), 6);
        assert_eq!(scratch.forged.len(), 2);
    }

    #[test]
    fn stale_relay_announces_time_before_relaying() {
        let mut node = byz(ServerBehavior::StaleRelay);
        let mut scratch = Scratchpad::default();
        let (from, msg) = client_msg(30);
        let eff = drive(&mut node, 10, &mut scratch, |n, ctx| n.on_message(from, msg, ctx));
        assert!(!sends(&eff).iter().any(|(_, m)| matches!(m, WireMessage::Observe(_))));
        let token = eff
            .iter()
            .find_map(|e| match e {
                Effect::Timer {
                    at_local,
                    token: TimerToken::Adversary(k),
                } => Some((*at_local, *k)),
                _ => None,
            })
            .unwrap();
        assert_eq!(token.0, SimTime(30));
        let eff = drive(&mut node, 30, &mut scratch, |n, ctx| {
            n.on_timer(TimerToken::Adversary(token.1), ctx)
        });
        let sent = sends(&eff);
        assert_eq!(sent.len(), 12);
        assert!(sent[..6].iter().all(|(_, m)| *m == WireMessage::Time(SimTime(30))));
        assert!(sent[6..].iter().all(|(_, m)| matches!(m, WireMessage::Observe(_))));
    }

    #[test]
    fn partial_disseminator_reaches_a_prefix_then_crashes() {
        let mut node = PartialDisseminator::new(ProcessId::client(0), 1, 100, 1);
        let mut scratch = Scratchpad::default();
        let mut ctx = Context::new(ProcessId::client(0), SimTime(0), 6, &[], &mut scratch);
        node.on_input(Input::Broadcast("m".into()), &mut ctx).unwrap();
        node.on_input(Input::Broadcast("n".into()), &mut ctx).unwrap();
        let sent = sends(&ctx.into_effects());
        assert_eq!(
            sent,
            vec![(
                ProcessId::server(0),
                WireMessage::Message {
                    message: "m".into(),
                    bet: SimTime(101)
                }
            )]
        );
    }

    #[test]
    fn behavior_json_shape() {
        let b: ServerBehavior = serde_json::from_str(r#"{"behavior":"equivocator","pattern":"all_false"}"#).unwrap();
        assert_eq!(
            b,
            ServerBehavior::Equivocator {
                pattern: Equivocation::AllFalse
            }
        );
        let b: ServerBehavior = serde_json::from_str(r#"{"behavior":"time_liar"}"#).unwrap();
        assert_eq!(b, ServerBehavior::TimeLiar { skew: 1000 });
    }
}
