//! Identifiers, time, binary values and the wire vocabulary shared by every
//! state machine, together with their canonical text rendering.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer-tick time, used both for global simulation time and for the
/// drifted local clocks of processes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub i64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// Stand-in for the unset remote time of a server that never announced one.
    pub const NEG_INF: SimTime = SimTime(i64::MIN);

    pub fn ticks(self) -> i64 {
        self.0
    }

    pub fn is_neg_inf(self) -> bool {
        self == Self::NEG_INF
    }

    pub fn saturating_add(self, ticks: i64) -> SimTime {
        if self.is_neg_inf() {
            return self;
        }
        SimTime(self.0.saturating_add(ticks))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_neg_inf() {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for SimTime {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-inf" {
            return Ok(SimTime::NEG_INF);
        }
        s.parse::<i64>().map(SimTime).map_err(|_| ParseError::new("time", s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcessKind {
    Server,
    Client,
}

/// A server `s<i>` or a client `c<i>`.
///
/// Clients are totally ordered by the bytes of their name, which is what the
/// broadcast-tuple order uses. The derived `Ord` (kind, then index) is only
/// used for map keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId {
    pub kind: ProcessKind,
    pub index: u32,
}

impl ProcessId {
    pub fn server(index: u32) -> Self {
        ProcessId {
            kind: ProcessKind::Server,
            index,
        }
    }

    pub fn client(index: u32) -> Self {
        ProcessId {
            kind: ProcessKind::Client,
            index,
        }
    }

    pub fn is_server(self) -> bool {
        self.kind == ProcessKind::Server
    }

    pub fn is_client(self) -> bool {
        self.kind == ProcessKind::Client
    }

    /// Opaque byte name used for ordering.
    pub fn name_bytes(self) -> Vec<u8> {
        self.to_string().into_bytes()
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ProcessKind::Server => write!(f, "s{}", self.index),
            ProcessKind::Client => write!(f, "c{}", self.index),
        }
    }
}

impl FromStr for ProcessId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("process id", s);
        let (kind, rest) = match s.as_bytes().first() {
            Some(b's') => (ProcessKind::Server, &s[1..]),
            Some(b'c') => (ProcessKind::Client, &s[1..]),
            _ => return Err(err()),
        };
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let index = rest.parse().map_err(|_| err())?;
        Ok(ProcessId { kind, index })
    }
}

impl Serialize for ProcessId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Binary consensus value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    False,
    True,
}

impl Value {
    pub const ALL: [Value; 2] = [Value::False, Value::True];

    pub fn negate(self) -> Value {
        match self {
            Value::True => Value::False,
            Value::False => Value::True,
        }
    }

    pub fn as_bool(self) -> bool {
        self == Value::True
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        if b {
            Value::True
        } else {
            Value::False
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Value::True => "true",
            Value::False => "false",
        })
    }
}

impl FromStr for Value {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "true" => Ok(Value::True),
            "false" => Ok(Value::False),
            _ => Err(ParseError::new("value", s)),
        }
    }
}

/// Opaque application payload. Equality is byte equality.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Payload(pub Vec<u8>);

impl Payload {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&str> for Payload {
    fn from(s: &str) -> Self {
        Payload(s.as_bytes().to_vec())
    }
}

impl From<Vec<u8>> for Payload {
    fn from(v: Vec<u8>) -> Self {
        Payload(v)
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => write!(f, "{s:?}"),
            Err(_) => write!(f, "{self}"),
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(&self.0))
    }
}

impl FromStr for Payload {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("0x").ok_or_else(|| ParseError::new("payload", s))?;
        hex::decode(digits)
            .map(Payload)
            .map_err(|_| ParseError::new("payload", s))
    }
}

/// A `(client, message, bet)` triple: the unit Flutter orders.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BroadcastTuple {
    pub client: ProcessId,
    pub message: Payload,
    pub bet: SimTime,
}

impl BroadcastTuple {
    pub fn new(client: ProcessId, message: impl Into<Payload>, bet: SimTime) -> Self {
        BroadcastTuple {
            client,
            message: message.into(),
            bet,
        }
    }
}

/// Bet first, then client byte-name, then message bytes.
pub fn compare_tuples(a: &BroadcastTuple, b: &BroadcastTuple) -> Ordering {
    a.bet
        .cmp(&b.bet)
        .then_with(|| a.client.name_bytes().cmp(&b.client.name_bytes()))
        .then_with(|| a.message.cmp(&b.message))
}

impl Ord for BroadcastTuple {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_tuples(self, other)
    }
}

impl PartialOrd for BroadcastTuple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BroadcastTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.client, self.message, self.bet)
    }
}

impl FromStr for BroadcastTuple {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, '/');
        let (Some(c), Some(m), Some(b)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(ParseError::new("tuple", s));
        };
        Ok(BroadcastTuple {
            client: c.parse()?,
            message: m.parse()?,
            bet: b.parse()?,
        })
    }
}

/// Identifies one binary-consensus instance: either a free-standing numbered
/// instance, or the per-tuple instance Flutter runs.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstanceId {
    Named(u64),
    Tuple(BroadcastTuple),
}

impl InstanceId {
    pub fn tuple(&self) -> Option<&BroadcastTuple> {
        match self {
            InstanceId::Tuple(t) => Some(t),
            InstanceId::Named(_) => None,
        }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceId::Named(k) => write!(f, "#{k}"),
            InstanceId::Tuple(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for InstanceId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix('#') {
            Some(k) => k
                .parse()
                .map(InstanceId::Named)
                .map_err(|_| ParseError::new("instance", s)),
            None => s.parse().map(InstanceId::Tuple),
        }
    }
}

/// Everything processes send to each other over authenticated FIFO links.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum WireMessage {
    Suggest {
        instance: InstanceId,
        value: Value,
    },
    Time(SimTime),
    Observe(BroadcastTuple),
    Message {
        message: Payload,
        bet: SimTime,
    },
    Decision {
        message: Payload,
        bet: SimTime,
        value: Value,
    },
}

/// Tag of a [`WireMessage`] variant, for counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Suggest,
    Time,
    Observe,
    Message,
    Decision,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::Message,
        MessageKind::Observe,
        MessageKind::Time,
        MessageKind::Suggest,
        MessageKind::Decision,
    ];
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Bits per fixed-size field (time, process id, value, instance tag) in the
/// complexity accounting.
pub const WORD_BITS: u64 = 64;

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            WireMessage::Suggest { .. } => MessageKind::Suggest,
            WireMessage::Time(_) => MessageKind::Time,
            WireMessage::Observe(_) => MessageKind::Observe,
            WireMessage::Message { .. } => MessageKind::Message,
            WireMessage::Decision { .. } => MessageKind::Decision,
        }
    }

    /// Accounting size: payload-carrying messages cost the payload plus a
    /// constant, `Time` and `Suggest` cost a constant.
    pub fn size_bits(&self) -> u64 {
        let payload = |p: &Payload| 8 * p.len() as u64;
        match self {
            WireMessage::Suggest { .. } => 2 * WORD_BITS,
            WireMessage::Time(_) => WORD_BITS,
            WireMessage::Observe(t) => payload(&t.message) + 2 * WORD_BITS,
            WireMessage::Message { message, .. } => payload(message) + WORD_BITS,
            WireMessage::Decision { message, .. } => payload(message) + 2 * WORD_BITS,
        }
    }
}

impl fmt::Display for WireMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireMessage::Suggest { instance, value } => write!(f, "Suggest[{instance}]({value})"),
            WireMessage::Time(t) => write!(f, "Time({t})"),
            WireMessage::Observe(t) => {
                write!(f, "Observe({}, {}, {})", t.client, t.message, t.bet)
            }
            WireMessage::Message { message, bet } => write!(f, "Message({message}, {bet})"),
            WireMessage::Decision { message, bet, value } => write!(f, "Decision({message}, {bet}, {value})"),
        }
    }
}

/// Splits `Name(a, b, c)` into `("Name", ["a", "b", "c"])`.
fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let open = s.find('(')?;
    let body = s[open + 1..].strip_suffix(')')?;
    let args = if body.is_empty() {
        Vec::new()
    } else {
        body.split(", ").collect()
    };
    Some((&s[..open], args))
}

impl FromStr for WireMessage {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("wire message", s);
        if let Some(rest) = s.strip_prefix("Suggest[") {
            let close = rest.find(']').ok_or_else(err)?;
            let instance = rest[..close].parse()?;
            let value = rest[close + 1..]
                .strip_prefix('(')
                .and_then(|v| v.strip_suffix(')'))
                .ok_or_else(err)?
                .parse()?;
            return Ok(WireMessage::Suggest { instance, value });
        }
        let (name, args) = split_call(s).ok_or_else(err)?;
        match (name, args.as_slice()) {
            ("Time", [t]) => Ok(WireMessage::Time(t.parse()?)),
            ("Observe", [c, m, b]) => Ok(WireMessage::Observe(BroadcastTuple {
                client: c.parse()?,
                message: m.parse()?,
                bet: b.parse()?,
            })),
            ("Message", [m, b]) => Ok(WireMessage::Message {
                message: m.parse()?,
                bet: b.parse()?,
            }),
            ("Decision", [m, b, v]) => Ok(WireMessage::Decision {
                message: m.parse()?,
                bet: b.parse()?,
                value: v.parse()?,
            }),
            _ => Err(err()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse {what} from {input:?}")]
pub struct ParseError {
    pub what: &'static str,
    pub input: String,
}

impl ParseError {
    pub fn new(what: &'static str, input: &str) -> Self {
        ParseError {
            what,
            input: input.to_string(),
        }
    }
}

/// Quorum sizes for `n` servers tolerating `f` Byzantine ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quorums {
    pub n: usize,
    pub f: usize,
}

impl Quorums {
    pub fn new(n: usize, f: usize) -> Self {
        debug_assert!(n > 5 * f);
        Quorums { n, f }
    }

    /// The smallest system, `n = 5f+1`.
    pub fn minimal(f: usize) -> Self {
        Quorums::new(5 * f + 1, f)
    }

    /// Smallest admissible system size.
    pub fn min_servers(self) -> usize {
        5 * self.f + 1
    }

    /// n-f, which is 4f+1 when n = 5f+1: fast-path decision, dep proposal
    /// trigger and lock time. Keeping it at n-f rather than 4f+1 for larger
    /// n preserves the intersections the fast path relies on.
    pub fn large(self) -> usize {
        self.n - self.f
    }

    /// 2f+1: always held by one value inside a large binary quorum.
    pub fn majority(self) -> usize {
        2 * self.f + 1
    }

    /// f+1: guarantees at least one correct member.
    pub fn one_correct(self) -> usize {
        self.f + 1
    }
}
