use std::collections::{BTreeMap, BTreeSet};

use crate::error::ProtocolError;
use crate::simnet::{Context, Input, Node};
use crate::trace::{EventDetail, TimerToken};
use crate::types::{Payload, ProcessId, Quorums, SimTime, Value, WireMessage};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientConfig {
    pub id: ProcessId,
    pub f: usize,
    /// δ̃, the client's guess of the network delay.
    pub delay_estimate: i64,
    /// ε ≥ 1.
    pub bet_margin: i64,
}

/// The submission currently in flight for a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Submission {
    pub retry: u32,
    pub bet: SimTime,
}

/// `local + 2^retry · δ̃ + ε`, saturating.
pub fn bet_for(local: SimTime, retry: u32, delay_estimate: i64, bet_margin: i64) -> SimTime {
    let factor = 1i64.checked_shl(retry).filter(|f| *f > 0).unwrap_or(i64::MAX);
    SimTime(
        local
            .0
            .saturating_add(factor.saturating_mul(delay_estimate))
            .saturating_add(bet_margin),
    )
}

/// A Flutter client: bets on a delivery time, sends `(m, b)` to every server
/// and resubmits with a doubled margin when f+1 servers report a rejection.
#[derive(Clone, Debug)]
pub struct FlutterClient {
    config: ClientConfig,
    quorums: Quorums,
    broadcasts: BTreeSet<Payload>,
    submissions: BTreeMap<Payload, Submission>,
    decisions: BTreeMap<(Payload, SimTime, ProcessId), Value>,
    crashed: bool,
}

impl FlutterClient {
    pub fn new(config: ClientConfig) -> Self {
        FlutterClient {
            quorums: Quorums::minimal(config.f),
            config,
            broadcasts: BTreeSet::new(),
            submissions: BTreeMap::new(),
            decisions: BTreeMap::new(),
            crashed: false,
        }
    }

    pub fn id(&self) -> ProcessId {
        self.config.id
    }

    pub fn submission(&self, m: &Payload) -> Option<Submission> {
        self.submissions.get(m).copied()
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn submit(&mut self, m: Payload, retry: u32, ctx: &mut Context<'_>) {
        let bet = bet_for(
            ctx.local_time(),
            retry,
            self.config.delay_estimate,
            self.config.bet_margin,
        );
        debug_assert!(self.submissions.get(&m).is_none_or(|prev| prev.bet < bet));
        ctx.send_to_servers(&WireMessage::Message {
            message: m.clone(),
            bet,
        });
        self.submissions.insert(m, Submission { retry, bet });
    }

    pub fn broadcast(&mut self, m: Payload, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        if !self.broadcasts.insert(m.clone()) {
            return Err(ProtocolError::DuplicateBroadcast {
                client: self.id(),
                message: m,
            });
        }
        ctx.record(EventDetail::Broadcast(m.clone()));
        self.submit(m, 0, ctx);
        Ok(())
    }

    pub fn on_decision(&mut self, from: ProcessId, m: Payload, bet: SimTime, v: Value, ctx: &mut Context<'_>) {
        self.decisions.insert((m.clone(), bet, from), v);
        let Some(current) = self.submissions.get(&m).copied() else {
            return;
        };
        if current.bet != bet {
            return;
        }
        let rejections = self
            .decisions
            .range((m.clone(), bet, ProcessId::server(0))..=(m.clone(), bet, ProcessId::server(u32::MAX)))
            .filter(|(_, v)| **v == Value::False)
            .count();
        if rejections >= self.quorums.one_correct() {
            self.submit(m, current.retry + 1, ctx);
        }
    }
}

impl Node for FlutterClient {
    fn on_input(&mut self, input: Input, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        if self.crashed {
            return Ok(());
        }
        match input {
            Input::Broadcast(m) => self.broadcast(m, ctx),
            Input::Crash => {
                self.crashed = true;
                Ok(())
            }
            other => Err(ProtocolError::UnsupportedInput {
                process: self.id(),
                input: other.to_string(),
            }),
        }
    }

    fn on_message(&mut self, from: ProcessId, msg: WireMessage, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        if self.crashed {
            return Ok(());
        }
        if let WireMessage::Decision { message, bet, value } = msg {
            self.on_decision(from, message, bet, value, ctx);
        }
        Ok(())
    }

    fn on_timer(&mut self, _token: TimerToken, _ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        Ok(())
    }
}
