//! Blink representative binary consensus and Flutter leaderless total-order
//! broadcast, as deterministic state machines run inside a seeded
//! discrete-event simulator with Byzantine adversaries, plus trace checkers
//! for their safety, liveness and latency guarantees.

pub mod adversary;
pub mod blink;
pub mod campaign;
pub mod checkers;
pub mod error;
pub mod flutter;
pub mod runner;
pub mod scenario;
pub mod simnet;
pub mod trace;
pub mod types;
pub mod weakcon;

pub use error::ProtocolError;
pub use types::{compare_tuples, BroadcastTuple, InstanceId, Payload, ProcessId, Quorums, SimTime, Value, WireMessage};
