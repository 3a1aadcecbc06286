//! Timestamped run record and its JSONL encoding.
//!
//! One line per event, keys in fixed order:
//!
//! ```text
//! {"time":10,"process":"s0","kind":"Deliver","payload":"from=c0 Message(0x6d, 11)"}
//! ```
//!
//! | kind         | payload                                   |
//! |--------------|-------------------------------------------|
//! | `Send`       | `to=<pid> <wire message>`                 |
//! | `Deliver`    | `from=<pid> <wire message>`               |
//! | `Propose`    | `<instance> <value>`                      |
//! | `Decide`     | `<instance> <value> fast\|slow`           |
//! | `AppDeliver` | `<client>/<message>/<bet>`                |
//! | `Broadcast`  | `<message>`                               |
//! | `TimerFire`  | `beat`, `periodic`, `expiry <tuple>`, `adversary <k>` |
//! | `DepPropose` | `<instance> <value>`                      |
//! | `DepDecide`  | `<instance> <value>`                      |
//!
//! Instances render as `#<k>` (free-standing) or as the tuple they decide on.
//! Messages render as `0x`-prefixed lowercase hex.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BroadcastTuple, InstanceId, ParseError, Payload, ProcessId, SimTime, Value, WireMessage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Send,
    Deliver,
    Propose,
    Decide,
    AppDeliver,
    Broadcast,
    TimerFire,
    DepPropose,
    DepDecide,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for EventKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Send" => EventKind::Send,
            "Deliver" => EventKind::Deliver,
            "Propose" => EventKind::Propose,
            "Decide" => EventKind::Decide,
            "AppDeliver" => EventKind::AppDeliver,
            "Broadcast" => EventKind::Broadcast,
            "TimerFire" => EventKind::TimerFire,
            "DepPropose" => EventKind::DepPropose,
            "DepDecide" => EventKind::DepDecide,
            _ => return Err(ParseError::new("event kind", s)),
        })
    }
}

/// Which Blink route produced a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecidePath {
    Fast,
    Slow,
}

impl fmt::Display for DecidePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecidePath::Fast => "fast",
            DecidePath::Slow => "slow",
        })
    }
}

impl FromStr for DecidePath {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast" => Ok(DecidePath::Fast),
            "slow" => Ok(DecidePath::Slow),
            _ => Err(ParseError::new("decide path", s)),
        }
    }
}

/// Local timers a process can arm.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TimerToken {
    Beat,
    Expiry(BroadcastTuple),
    Periodic,
    Adversary(u64),
}

impl fmt::Display for TimerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimerToken::Beat => f.write_str("beat"),
            TimerToken::Expiry(t) => write!(f, "expiry {t}"),
            TimerToken::Periodic => f.write_str("periodic"),
            TimerToken::Adversary(k) => write!(f, "adversary {k}"),
        }
    }
}

impl FromStr for TimerToken {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(' ') {
            None if s == "beat" => Ok(TimerToken::Beat),
            None if s == "periodic" => Ok(TimerToken::Periodic),
            Some(("expiry", t)) => Ok(TimerToken::Expiry(t.parse()?)),
            Some(("adversary", k)) => k
                .parse()
                .map(TimerToken::Adversary)
                .map_err(|_| ParseError::new("timer token", s)),
            _ => Err(ParseError::new("timer token", s)),
        }
    }
}

/// What happened, with every field the checkers need.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EventDetail {
    Send {
        to: ProcessId,
        msg: WireMessage,
    },
    Deliver {
        from: ProcessId,
        msg: WireMessage,
    },
    Propose {
        instance: InstanceId,
        value: Value,
    },
    Decide {
        instance: InstanceId,
        value: Value,
        path: DecidePath,
    },
    AppDeliver(BroadcastTuple),
    Broadcast(Payload),
    TimerFire(TimerToken),
    DepPropose {
        instance: InstanceId,
        value: Value,
    },
    DepDecide {
        instance: InstanceId,
        value: Value,
    },
}

impl EventDetail {
    pub fn kind(&self) -> EventKind {
        match self {
            EventDetail::Send { .. } => EventKind::Send,
            EventDetail::Deliver { .. } => EventKind::Deliver,
            EventDetail::Propose { .. } => EventKind::Propose,
            EventDetail::Decide { .. } => EventKind::Decide,
            EventDetail::AppDeliver(_) => EventKind::AppDeliver,
            EventDetail::Broadcast(_) => EventKind::Broadcast,
            EventDetail::TimerFire(_) => EventKind::TimerFire,
            EventDetail::DepPropose { .. } => EventKind::DepPropose,
            EventDetail::DepDecide { .. } => EventKind::DepDecide,
        }
    }

    /// The consensus instance this event belongs to, if any.
    pub fn instance(&self) -> Option<&InstanceId> {
        match self {
            EventDetail::Propose { instance, .. }
            | EventDetail::Decide { instance, .. }
            | EventDetail::DepPropose { instance, .. }
            | EventDetail::DepDecide { instance, .. } => Some(instance),
            EventDetail::Send {
                msg: WireMessage::Suggest { instance, .. },
                ..
            }
            | EventDetail::Deliver {
                msg: WireMessage::Suggest { instance, .. },
                ..
            } => Some(instance),
            _ => None,
        }
    }

    /// Renders the payload column.
    pub fn render(&self) -> String {
        match self {
            EventDetail::Send { to, msg } => format!("to={to} {msg}"),
            EventDetail::Deliver { from, msg } => format!("from={from} {msg}"),
            EventDetail::Propose { instance, value }
            | EventDetail::DepPropose { instance, value }
            | EventDetail::DepDecide { instance, value } => format!("{instance} {value}"),
            EventDetail::Decide { instance, value, path } => format!("{instance} {value} {path}"),
            EventDetail::AppDeliver(t) => t.to_string(),
            EventDetail::Broadcast(m) => m.to_string(),
            EventDetail::TimerFire(token) => token.to_string(),
        }
    }

    /// Inverse of [`EventDetail::render`].
    pub fn parse(kind: EventKind, payload: &str) -> Result<Self, ParseError> {
        let err = || ParseError::new("event payload", payload);
        let peer_and_msg = |prefix: &str| -> Result<(ProcessId, WireMessage), ParseError> {
            let rest = payload.strip_prefix(prefix).ok_or_else(err)?;
            let (pid, msg) = rest.split_once(' ').ok_or_else(err)?;
            Ok((pid.parse()?, msg.parse()?))
        };
        let words: Vec<&str> = payload.split(' ').collect();
        let inst_value = || -> Result<(InstanceId, Value), ParseError> {
            match words.as_slice() {
                [i, v] => Ok((i.parse()?, v.parse()?)),
                _ => Err(err()),
            }
        };
        Ok(match kind {
            EventKind::Send => {
                let (to, msg) = peer_and_msg("to=")?;
                EventDetail::Send { to, msg }
            }
            EventKind::Deliver => {
                let (from, msg) = peer_and_msg("from=")?;
                EventDetail::Deliver { from, msg }
            }
            EventKind::Propose => {
                let (instance, value) = inst_value()?;
                EventDetail::Propose { instance, value }
            }
            EventKind::DepPropose => {
                let (instance, value) = inst_value()?;
                EventDetail::DepPropose { instance, value }
            }
            EventKind::DepDecide => {
                let (instance, value) = inst_value()?;
                EventDetail::DepDecide { instance, value }
            }
            EventKind::Decide => match words.as_slice() {
                [i, v, p] => EventDetail::Decide {
                    instance: i.parse()?,
                    value: v.parse()?,
                    path: p.parse()?,
                },
                _ => return Err(err()),
            },
            EventKind::AppDeliver => EventDetail::AppDeliver(payload.parse()?),
            EventKind::Broadcast => EventDetail::Broadcast(payload.parse()?),
            EventKind::TimerFire => EventDetail::TimerFire(payload.parse()?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub time: SimTime,
    pub process: ProcessId,
    pub detail: EventDetail,
}

impl TraceEvent {
    pub fn new(time: SimTime, process: ProcessId, detail: EventDetail) -> Self {
        TraceEvent { time, process, detail }
    }

    pub fn kind(&self) -> EventKind {
        self.detail.kind()
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} {} {} {}",
            self.time,
            self.process,
            self.kind(),
            self.detail.render()
        )
    }
}

/// JSONL line layout; field order here is the key order on disk.
#[derive(Serialize, Deserialize)]
struct TraceRecord {
    time: i64,
    process: String,
    kind: String,
    payload: String,
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
}

/// Events in `(time, global sequence)` order; the position in the vector is
/// the sequence number.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(events: Vec<TraceEvent>) -> Self {
        Trace { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceEvent> {
        self.events.iter()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind() == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            let rec = TraceRecord {
                time: e.time.0,
                process: e.process.to_string(),
                kind: e.kind().to_string(),
                payload: e.detail.render(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trace, TraceIoError> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let rec: TraceRecord =
                serde_json::from_str(&line).map_err(|source| TraceIoError::Json { line: lineno, source })?;
            let at_line = |source| TraceIoError::Parse { line: lineno, source };
            let kind: EventKind = rec.kind.parse().map_err(at_line)?;
            events.push(TraceEvent {
                time: SimTime(rec.time),
                process: rec.process.parse().map_err(at_line)?,
                detail: EventDetail::parse(kind, &rec.payload).map_err(at_line)?,
            });
        }
        Ok(Trace { events })
    }
}

impl FromIterator<TraceEvent> for Trace {
    fn from_iter<I: IntoIterator<Item = TraceEvent>>(iter: I) -> Self {
        Trace {
            events: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a Trace {
    type Item = &'a TraceEvent;
    type IntoIter = std::slice::Iter<'a, TraceEvent>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}
