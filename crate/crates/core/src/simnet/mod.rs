//! Deterministic discrete-event simulator.
//!
//! Processes are [`Node`] state machines. They never touch the network or the
//! clock directly: each handler gets a [`Context`], queues [`Effect`]s on it,
//! and the simulator applies them once the handler returns. Events are
//! processed in `(time, sequence)` order, so a scenario and a seed fully
//! determine the trace.

mod clock;
mod network;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

pub use clock::ClockModel;
pub use network::{LinkState, Network, NetworkMode, ScriptedDelay};

use crate::adversary::Scratchpad;
use crate::error::ProtocolError;
use crate::trace::{EventDetail, TimerToken, Trace, TraceEvent};
use crate::types::{InstanceId, Payload, ProcessId, SimTime, Value, WireMessage};
use crate::weakcon::{DepError, DepOracle};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown process {0}")]
    UnknownProcess(ProcessId),
    #[error("malformed message {msg} from {src} to {dst}")]
    Malformed {
        src: ProcessId,
        dst: ProcessId,
        msg: WireMessage,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Dep(#[from] DepError),
    #[error("step budget of {0} events exceeded")]
    BudgetExceeded(u64),
}

/// External stimuli injected by the scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    /// Client-side TOB broadcast.
    Broadcast(Payload),
    /// Server-side propose to a free-standing consensus instance.
    Propose { instance: InstanceId, value: Value },
    /// Stop participating; later events are ignored.
    Crash,
}

impl std::fmt::Display for Input {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Input::Broadcast(m) => write!(f, "Broadcast({m})"),
            Input::Propose { instance, value } => write!(f, "Propose({instance}, {value})"),
            Input::Crash => f.write_str("Crash"),
        }
    }
}

/// Something a handler asked the simulator to do.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    Send { to: ProcessId, msg: WireMessage },
    Timer { at_local: SimTime, token: TimerToken },
    Record(EventDetail),
    DepPropose { instance: InstanceId, value: Value },
}

/// Handler-side view of the world.
pub struct Context<'a> {
    me: ProcessId,
    local_time: SimTime,
    servers: u32,
    trace: &'a [TraceEvent],
    scratch: &'a mut Scratchpad,
    effects: Vec<Effect>,
}

impl<'a> Context<'a> {
    pub fn new(
        me: ProcessId,
        local_time: SimTime,
        servers: u32,
        trace: &'a [TraceEvent],
        scratch: &'a mut Scratchpad,
    ) -> Self {
        Context {
            me,
            local_time,
            servers,
            trace,
            scratch,
            effects: Vec::new(),
        }
    }

    pub fn me(&self) -> ProcessId {
        self.me
    }

    pub fn local_time(&self) -> SimTime {
        self.local_time
    }

    pub fn servers(&self) -> impl Iterator<Item = ProcessId> {
        (0..self.servers).map(ProcessId::server)
    }

    pub fn server_count(&self) -> u32 {
        self.servers
    }

    /// The trace so far. Protocol code must not look at it; adversaries may.
    pub fn trace(&self) -> &[TraceEvent] {
        self.trace
    }

    /// State shared by all colluding Byzantine processes.
    pub fn scratch(&mut self) -> &mut Scratchpad {
        self.scratch
    }

    pub fn send(&mut self, to: ProcessId, msg: WireMessage) {
        self.effects.push(Effect::Send { to, msg });
    }

    /// Sends `msg` to every server, self included, in index order.
    pub fn send_to_servers(&mut self, msg: &WireMessage) {
        for s in 0..self.servers {
            self.send(ProcessId::server(s), msg.clone());
        }
    }

    /// Fires when the local clock reads `at_local`, or right after the current
    /// handler if that moment has passed.
    pub fn schedule_timer(&mut self, at_local: SimTime, token: TimerToken) {
        self.effects.push(Effect::Timer { at_local, token });
    }

    pub fn record(&mut self, detail: EventDetail) {
        self.effects.push(Effect::Record(detail));
    }

    pub fn dep_propose(&mut self, instance: InstanceId, value: Value) {
        self.effects.push(Effect::DepPropose { instance, value });
    }

    pub fn push(&mut self, effect: Effect) {
        self.effects.push(effect);
    }

    /// Number of queued effects, for use with [`Context::take_effects_from`].
    pub fn mark(&self) -> usize {
        self.effects.len()
    }

    /// Removes and returns the effects queued since `mark`.
    pub fn take_effects_from(&mut self, mark: usize) -> Vec<Effect> {
        self.effects.split_off(mark)
    }

    pub fn into_effects(self) -> Vec<Effect> {
        self.effects
    }
}

/// A simulated process.
pub trait Node {
    fn on_start(&mut self, _ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
        Ok(())
    }

    fn on_input(&mut self, input: Input, ctx: &mut Context<'_>) -> Result<(), ProtocolError>;

    fn on_message(&mut self, from: ProcessId, msg: WireMessage, ctx: &mut Context<'_>) -> Result<(), ProtocolError>;

    fn on_timer(&mut self, token: TimerToken, ctx: &mut Context<'_>) -> Result<(), ProtocolError>;

    fn on_dep_decide(
        &mut self,
        _instance: InstanceId,
        _value: Value,
        _ctx: &mut Context<'_>,
    ) -> Result<(), ProtocolError> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Input {
        to: ProcessId,
        input: Input,
    },
    Deliver {
        from: ProcessId,
        to: ProcessId,
        msg: WireMessage,
    },
    Timer {
        to: ProcessId,
        token: TimerToken,
    },
    DepDecide {
        to: ProcessId,
        instance: InstanceId,
        value: Value,
    },
}

impl Action {
    pub fn target(&self) -> ProcessId {
        match self {
            Action::Input { to, .. }
            | Action::Deliver { to, .. }
            | Action::Timer { to, .. }
            | Action::DepDecide { to, .. } => *to,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pending {
    pub time: SimTime,
    pub seq: u64,
    pub action: Action,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopAt {
    Quiescence,
    /// Process every event with time `<= t`.
    Until(SimTime),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub quiescent: bool,
    pub end_time: SimTime,
    pub steps: u64,
}

/// Authenticated-link routing rules: clients talk to servers with `Message`,
/// servers answer with `Decision`, everything else is server to server.
fn route_is_valid(src: ProcessId, dst: ProcessId, msg: &WireMessage) -> bool {
    match msg {
        WireMessage::Message { .. } => src.is_client() && dst.is_server(),
        WireMessage::Decision { .. } => src.is_server() && dst.is_client(),
        WireMessage::Suggest { .. } | WireMessage::Time(_) | WireMessage::Observe(_) => {
            src.is_server() && dst.is_server()
        }
    }
}

pub struct Simulation {
    servers: u32,
    network: Network,
    clocks: ClockModel,
    oracle: DepOracle,
    nodes: BTreeMap<ProcessId, Box<dyn Node>>,
    queue: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    now: SimTime,
    steps: u64,
    started: bool,
    trace: Vec<TraceEvent>,
    scratch: Scratchpad,
}

impl Simulation {
    pub fn new(servers: u32, network: Network, clocks: ClockModel, oracle: DepOracle) -> Self {
        Simulation {
            servers,
            network,
            clocks,
            oracle,
            nodes: BTreeMap::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            steps: 0,
            started: false,
            trace: Vec::new(),
            scratch: Scratchpad::default(),
        }
    }

    pub fn add_node(&mut self, id: ProcessId, node: Box<dyn Node>) {
        self.nodes.insert(id, node);
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn clocks(&self) -> &ClockModel {
        &self.clocks
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn oracle(&self) -> &DepOracle {
        &self.oracle
    }

    pub fn trace(&self) -> Trace {
        Trace::new(self.trace.clone())
    }

    pub fn into_trace(self) -> Trace {
        Trace::new(self.trace)
    }

    /// Events not yet processed, in processing order.
    pub fn pending(&self) -> Vec<Pending> {
        let mut v: Vec<Pending> = self.queue.iter().map(|r| r.0.clone()).collect();
        v.sort();
        v
    }

    fn push(&mut self, time: SimTime, action: Action) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Pending { time, seq, action }));
    }

    pub fn schedule_input(&mut self, at: SimTime, to: ProcessId, input: Input) -> Result<(), SimError> {
        if !self.nodes.contains_key(&to) {
            return Err(SimError::UnknownProcess(to));
        }
        self.push(at, Action::Input { to, input });
        Ok(())
    }

    fn record(&mut self, process: ProcessId, detail: EventDetail) {
        self.trace.push(TraceEvent::new(self.now, process, detail));
    }

    /// Runs one handler of `pid` and applies its effects.
    fn dispatch<F>(&mut self, pid: ProcessId, handler: F) -> Result<(), SimError>
    where
        F: FnOnce(&mut dyn Node, &mut Context<'_>) -> Result<(), ProtocolError>,
    {
        let local = self.clocks.local_time(pid, self.now);
        let node = self.nodes.get_mut(&pid).ok_or(SimError::UnknownProcess(pid))?;
        let mut ctx = Context::new(pid, local, self.servers, &self.trace, &mut self.scratch);
        handler(node.as_mut(), &mut ctx)?;
        let effects = ctx.into_effects();
        self.apply(pid, effects)
    }

    fn apply(&mut self, pid: ProcessId, effects: Vec<Effect>) -> Result<(), SimError> {
        for effect in effects {
            match effect {
                Effect::Send { to, msg } => {
                    if !self.nodes.contains_key(&to) {
                        return Err(SimError::UnknownProcess(to));
                    }
                    if !route_is_valid(pid, to, &msg) {
                        return Err(SimError::Malformed { src: pid, dst: to, msg });
                    }
                    self.record(pid, EventDetail::Send { to, msg: msg.clone() });
                    let at = self.network.schedule(pid, to, self.now);
                    self.push(at, Action::Deliver { from: pid, to, msg });
                }
                Effect::Timer { at_local, token } => {
                    let at = self.clocks.global_time(pid, at_local).max(self.now);
                    self.push(at, Action::Timer { to: pid, token });
                }
                Effect::Record(detail) => self.record(pid, detail),
                Effect::DepPropose { instance, value } => {
                    self.record(
                        pid,
                        EventDetail::DepPropose {
                            instance: instance.clone(),
                            value,
                        },
                    );
                    for ind in self.oracle.propose(self.now, &instance, pid, value)? {
                        self.push(
                            ind.at,
                            Action::DepDecide {
                                to: ind.server,
                                instance: instance.clone(),
                                value: ind.value,
                            },
                        );
                    }
                }
            }
        }
        Ok(())
    }

    fn start(&mut self) -> Result<(), SimError> {
        self.started = true;
        let ids: Vec<ProcessId> = self.nodes.keys().copied().collect();
        for pid in ids {
            self.dispatch(pid, |node, ctx| node.on_start(ctx))?;
        }
        Ok(())
    }

    /// Processes events until `stop`, or until `budget` events have been
    /// handled in total, which is an error.
    pub fn run(&mut self, stop: StopAt, budget: u64) -> Result<RunOutcome, SimError> {
        if !self.started {
            self.start()?;
        }
        loop {
            let Some(Reverse(next)) = self.queue.pop() else {
                return Ok(RunOutcome {
                    quiescent: true,
                    end_time: self.now,
                    steps: self.steps,
                });
            };
            if let StopAt::Until(limit) = stop {
                if next.time > limit {
                    self.queue.push(Reverse(next));
                    return Ok(RunOutcome {
                        quiescent: false,
                        end_time: self.now,
                        steps: self.steps,
                    });
                }
            }
            if self.steps >= budget {
                self.queue.push(Reverse(next));
                return Err(SimError::BudgetExceeded(budget));
            }
            self.steps += 1;
            debug_assert!(next.time >= self.now);
            self.now = next.time;
            self.step(next.action)?;
        }
    }

    fn step(&mut self, action: Action) -> Result<(), SimError> {
        match action {
            Action::Input { to, input } => self.dispatch(to, |node, ctx| node.on_input(input, ctx)),
            Action::Deliver { from, to, msg } => {
                self.record(to, EventDetail::Deliver { from, msg: msg.clone() });
                self.dispatch(to, |node, ctx| node.on_message(from, msg, ctx))
            }
            Action::Timer { to, token } => {
                self.record(to, EventDetail::TimerFire(token.clone()));
                self.dispatch(to, |node, ctx| node.on_timer(token, ctx))
            }
            Action::DepDecide { to, instance, value } => {
                self.record(
                    to,
                    EventDetail::DepDecide {
                        instance: instance.clone(),
                        value,
                    },
                );
                self.dispatch(to, |node, ctx| node.on_dep_decide(instance, value, ctx))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::trace::EventKind;
    use crate::weakcon::DepPolicy;

    /// Echoes every `Time(t)` back as `Time(t + 1)` until `t` hits 3, and
    /// arms one timer per input.
    struct Pinger;

    impl Node for Pinger {
        fn on_input(&mut self, input: Input, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
            match input {
                Input::Propose { .. } => ctx.send(ProcessId::server(1), WireMessage::Time(SimTime(0))),
                _ => ctx.schedule_timer(SimTime(11), TimerToken::Beat),
            }
            Ok(())
        }

        fn on_message(
            &mut self,
            from: ProcessId,
            msg: WireMessage,
            ctx: &mut Context<'_>,
        ) -> Result<(), ProtocolError> {
            if let WireMessage::Time(t) = msg {
                if t.0 < 3 {
                    ctx.send(from, WireMessage::Time(SimTime(t.0 + 1)));
                }
            }
            Ok(())
        }

        fn on_timer(&mut self, _token: TimerToken, _ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
            Ok(())
        }
    }

    fn sim(mode: NetworkMode, offsets: BTreeMap<ProcessId, i64>) -> Simulation {
        let clocks = ClockModel::new(2, offsets).unwrap();
        let oracle = DepOracle::new(DepPolicy::FirstProposal, 30, BTreeSet::new()).unwrap();
        let mut sim = Simulation::new(2, Network::new(mode, 10).unwrap(), clocks, oracle);
        sim.add_node(ProcessId::server(0), Box::new(Pinger));
        sim.add_node(ProcessId::server(1), Box::new(Pinger));
        sim
    }

    fn kick(sim: &mut Simulation) {
        let input = Input::Propose {
            instance: InstanceId::Named(0),
            value: Value::True,
        };
        sim.schedule_input(SimTime(0), ProcessId::server(0), input).unwrap();
    }

    #[test]
    fn empty_scenario_is_immediately_quiescent() {
        let mut sim = sim(NetworkMode::ExactDelta, BTreeMap::new());
        let out = sim.run(StopAt::Quiescence, 10).unwrap();
        assert!(out.quiescent);
        assert!(sim.trace().is_empty());
    }

    #[test]
    fn exact_delta_delivers_after_delta() {
        let mut sim = sim(NetworkMode::ExactDelta, BTreeMap::new());
        kick(&mut sim);
        sim.run(StopAt::Quiescence, 100).unwrap();
        let delivers: Vec<i64> = sim.trace().of_kind(EventKind::Deliver).map(|e| e.time.0).collect();
        assert_eq!(delivers, vec![10, 20, 30, 40]);
    }

    #[test]
    fn until_truncates_and_keeps_pending() {
        let mut sim = sim(NetworkMode::ExactDelta, BTreeMap::new());
        kick(&mut sim);
        let out = sim.run(StopAt::Until(SimTime(5)), 100).unwrap();
        assert!(!out.quiescent);
        assert_eq!(sim.trace().len(), 1);
        let pending = sim.pending();
        assert_eq!(pending.len(), 1);
        assert_eq!(pending[0].time, SimTime(10));
        // resuming picks up where it stopped
        assert!(sim.run(StopAt::Quiescence, 100).unwrap().quiescent);
    }

    #[test]
    fn budget_exhaustion_is_an_error() {
        let mut sim = sim(NetworkMode::ExactDelta, BTreeMap::new());
        kick(&mut sim);
        assert!(matches!(
            sim.run(StopAt::Quiescence, 2),
            Err(SimError::BudgetExceeded(2))
        ));
    }

    #[test]
    fn timers_follow_the_local_clock() {
        // offset 0 -> global 11; offset +2 -> global 9
        for (offset, expect) in [(0, 11), (2, 9)] {
            let mut sim = sim(
                NetworkMode::ExactDelta,
                BTreeMap::from([(ProcessId::server(0), offset)]),
            );
            sim.schedule_input(SimTime(0), ProcessId::server(0), Input::Crash)
                .unwrap();
            sim.run(StopAt::Quiescence, 10).unwrap();
            let fire = sim.trace().of_kind(EventKind::TimerFire).next().unwrap().time;
            assert_eq!(fire, SimTime(expect));
        }
    }

    #[test]
    fn past_timers_fire_in_the_current_step() {
        let mut sim = sim(NetworkMode::ExactDelta, BTreeMap::new());
        sim.schedule_input(SimTime(20), ProcessId::server(0), Input::Crash)
            .unwrap();
        sim.run(StopAt::Quiescence, 10).unwrap();
        let fire = sim.trace().of_kind(EventKind::TimerFire).next().unwrap().time;
        assert_eq!(fire, SimTime(20));
    }

    #[test]
    fn unknown_destination_is_a_config_error() {
        struct Stray;
        impl Node for Stray {
            fn on_input(&mut self, _: Input, ctx: &mut Context<'_>) -> Result<(), ProtocolError> {
                ctx.send(ProcessId::server(7), WireMessage::Time(SimTime(0)));
                Ok(())
            }
            fn on_message(&mut self, _: ProcessId, _: WireMessage, _: &mut Context<'_>) -> Result<(), ProtocolError> {
                Ok(())
            }
            fn on_timer(&mut self, _: TimerToken, _: &mut Context<'_>) -> Result<(), ProtocolError> {
                Ok(())
            }
        }
        let mut sim = sim(NetworkMode::ExactDelta, BTreeMap::new());
        sim.add_node(ProcessId::server(0), Box::new(Stray));
        sim.schedule_input(SimTime(0), ProcessId::server(0), Input::Crash)
            .unwrap();
        assert!(matches!(
            sim.run(StopAt::Quiescence, 10),
            Err(SimError::UnknownProcess(p)) if p == ProcessId::server(7)
        ));
    }

    #[test]
    fn routing_rules() {
        let c = ProcessId::client(0);
        let s = ProcessId::server(0);
        let m = WireMessage::Message {
            message: "x".into(),
            bet: SimTime(1),
        };
        assert!(route_is_valid(c, s, &m));
        assert!(!route_is_valid(s, s, &m));
        assert!(!route_is_valid(c, s, &WireMessage::Time(SimTime(0))));
    }
}
