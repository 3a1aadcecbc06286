//! Flutter: leaderless total-order broadcast where clients bet on delivery
//! times and servers agree, per bet, on whether to honor it.

mod client;
mod server;

pub use client::{bet_for, ClientConfig, FlutterClient, Submission};
pub use server::{FlutterServer, PeriodicBeat, ServerConfig};
