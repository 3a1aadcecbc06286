//! Blink: representative binary consensus with a one-message-delay fast path.
//!
//! Each server suggests its proposal to everyone. A server that collects
//! `4f+1` suggestions proposes the majority among them to the underlying weak
//! consensus; a server that collects `4f+1` *matching* suggestions decides
//! immediately. Whichever route fires first wins, and the other is ignored.

use std::collections::BTreeMap;

use crate::error::ProtocolError;
use crate::simnet::Context;
use crate::trace::{DecidePath, EventDetail};
use crate::types::{InstanceId, ProcessId, Quorums, Value, WireMessage};

/// Follow-up work requested by an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlinkAction {
    DepPropose(Value),
    Decide(Value, DecidePath),
}

/// State of one instance at one server.
#[derive(Clone, Debug)]
pub struct BlinkInstance {
    quorums: Quorums,
    suggestions: BTreeMap<ProcessId, Value>,
    suggested: bool,
    dep_proposed: bool,
    decided: Option<Value>,
}

impl BlinkInstance {
    pub fn new(quorums: Quorums) -> Self {
        BlinkInstance {
            quorums,
            suggestions: BTreeMap::new(),
            suggested: false,
            dep_proposed: false,
            decided: None,
        }
    }

    pub fn suggestions(&self) -> &BTreeMap<ProcessId, Value> {
        &self.suggestions
    }

    pub fn has_proposed(&self) -> bool {
        self.suggested
    }

    pub fn dep_proposed(&self) -> bool {
        self.dep_proposed
    }

    pub fn decided(&self) -> Option<Value> {
        self.decided
    }

    pub fn count(&self, v: Value) -> usize {
        self.suggestions.values().filter(|&&s| s == v).count()
    }

    /// Marks the local proposal; the caller suggests `v` to every server.
    /// Returns `false` if this server already proposed.
    pub fn propose(&mut self) -> bool {
        !std::mem::replace(&mut self.suggested, true)
    }

    /// Records a suggestion and evaluates the slow-path trigger, then the
    /// fast-path trigger.
    pub fn on_suggest(&mut self, from: ProcessId, v: Value) -> Vec<BlinkAction> {
        // A repeated suggestion from a Byzantine sender overwrites.
        self.suggestions.insert(from, v);
        let mut out = Vec::new();

        if self.suggestions.len() >= self.quorums.large() && !self.dep_proposed {
            // 4f+1 is odd over two values: exactly one reaches 2f+1 the
            // first time the map reaches that size.
            let majority = Value::ALL
                .into_iter()
                .find(|&v| self.count(v) >= self.quorums.majority())
                .expect("4f+1 binary suggestions always contain a 2f+1 majority");
            self.dep_proposed = true;
            out.push(BlinkAction::DepPropose(majority));
        }

        if self.decided.is_none() {
            if let Some(v) = Value::ALL.into_iter().find(|&v| self.count(v) >= self.quorums.large()) {
                self.decided = Some(v);
                out.push(BlinkAction::Decide(v, DecidePath::Fast));
            }
        }
        out
    }

    pub fn on_dep_decide(&mut self, v: Value) -> Option<BlinkAction> {
        if self.decided.is_some() {
            return None;
        }
        self.decided = Some(v);
        Some(BlinkAction::Decide(v, DecidePath::Slow))
    }
}

/// All Blink instances hosted by one server, wired to the simulator.
#[derive(Clone, Debug)]
pub struct Consensus {
    me: ProcessId,
    quorums: Quorums,
    instances: BTreeMap<InstanceId, BlinkInstance>,
}

impl Consensus {
    pub fn new(me: ProcessId, quorums: Quorums) -> Self {
        Consensus {
            me,
            quorums,
            instances: BTreeMap::new(),
        }
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&BlinkInstance> {
        self.instances.get(id)
    }

    fn entry(&mut self, id: &InstanceId) -> &mut BlinkInstance {
        let quorums = self.quorums;
        self.instances
            .entry(id.clone())
            .or_insert_with(|| BlinkInstance::new(quorums))
    }

    /// Proposes `v`: records it and suggests it to every server, self included.
    pub fn propose(&mut self, instance: InstanceId, v: Value, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        if !self.entry(&instance).propose() {
            return Err(ProtocolError::DoublePropose {
                server: self.me,
                instance,
            });
        }
        ctx.record(EventDetail::Propose {
            instance: instance.clone(),
            value: v,
        });
        ctx.send_to_servers(&WireMessage::Suggest { instance, value: v });
        Ok(())
    }

    /// Returns the decision, if this suggestion produced one.
    pub fn on_suggest(
        &mut self,
        from: ProcessId,
        instance: InstanceId,
        v: Value,
        ctx: &mut Context<'_>,
    ) -> Option<Value> {
        let actions = self.entry(&instance).on_suggest(from, v);
        self.perform(instance, actions, ctx)
    }

    /// Returns the decision, if the slow path decided first.
    pub fn on_dep_decide(&mut self, instance: InstanceId, v: Value, ctx: &mut Context<'_>) -> Option<Value> {
        let action = self.entry(&instance).on_dep_decide(v);
        self.perform(instance, action.into_iter().collect(), ctx)
    }

    fn perform(&mut self, instance: InstanceId, actions: Vec<BlinkAction>, ctx: &mut Context<'_>) -> Option<Value> {
        let mut decided = None;
        for action in actions {
            match action {
                BlinkAction::DepPropose(v) => ctx.dep_propose(instance.clone(), v),
                BlinkAction::Decide(v, path) => {
                    ctx.record(EventDetail::Decide {
                        instance: instance.clone(),
                        value: v,
                        path,
                    });
                    decided = Some(v);
                }
            }
        }
        decided
    }
}
