//! Scenario files: the JSON description of one simulated run.
//!
//! ```json
//! {
//!   "name": "goodcase",
//!   "n": 6, "f": 1, "delta": 10, "drift": 0, "epsilon": 1,
//!   "network": {"mode": "exact_delta"},
//!   "clock_offsets": {"s2": 1},
//!   "byzantine": {"s5": {"behavior": "equivocator", "pattern": "all_false"}},
//!   "clients": [
//!     {"delay_estimate": 10, "broadcasts": [{"at": 0, "message": "m"}],
//!      "crash_at": null, "behavior": null}
//!   ],
//!   "blink": [{"instance": 0, "proposals": [{"server": "s0", "at": 0, "value": true}]}],
//!   "dep_policy": {"mode": "first_proposal"},
//!   "dep_latency": 30,
//!   "step_budget": 1000000,
//!   "until": null,
//!   "periodic_beat": null
//! }
//! ```
//!
//! Everything except `name`, `n`, `f` and `delta` is optional. Client `i` of
//! the `clients` list is process `c<i>`; servers are `s0..s<n-1>`. Inputs are
//! scheduled in file order, so of two inputs at the same instant the one
//! listed first runs first.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{ByzantineServer, ClientBehavior, PartialDisseminator, ServerBehavior};
use crate::checkers::{CheckConfig, ClientProfile};
use crate::flutter::{ClientConfig, FlutterClient, FlutterServer, PeriodicBeat, ServerConfig};
use crate::simnet::{ClockModel, Input, Network, NetworkMode, SimError, Simulation, StopAt};
use crate::types::{InstanceId, Payload, ProcessId, Quorums, SimTime};
use crate::weakcon::{DepOracle, DepPolicy};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

fn default_epsilon() -> i64 {
    1
}

fn default_network() -> NetworkMode {
    NetworkMode::ExactDelta
}

fn default_dep_policy() -> DepPolicy {
    DepPolicy::FirstProposal
}

fn default_step_budget() -> u64 {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedBroadcast {
    pub at: i64,
    /// Sent as its UTF-8 bytes.
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientScript {
    /// δ̃; defaults to the real δ.
    #[serde(default)]
    pub delay_estimate: Option<i64>,
    /// ε for this client; defaults to the scenario's.
    #[serde(default)]
    pub epsilon: Option<i64>,
    #[serde(default)]
    pub broadcasts: Vec<ScriptedBroadcast>,
    #[serde(default)]
    pub crash_at: Option<i64>,
    #[serde(default)]
    pub behavior: Option<ClientBehavior>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedProposal {
    pub server: ProcessId,
    pub at: i64,
    pub value: bool,
}

/// A free-standing Blink instance `#<instance>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlinkScript {
    pub instance: u64,
    pub proposals: Vec<ScriptedProposal>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: u32,
    pub f: usize,
    /// δ: the bound on every message delay.
    pub delta: i64,
    /// Δ: the bound on every clock offset.
    #[serde(default)]
    pub drift: i64,
    /// Default bet margin ε.
    #[serde(default = "default_epsilon")]
    pub epsilon: i64,
    #[serde(default = "default_network")]
    pub network: NetworkMode,
    #[serde(default)]
    pub clock_offsets: BTreeMap<ProcessId, i64>,
    #[serde(default)]
    pub byzantine: BTreeMap<ProcessId, ServerBehavior>,
    #[serde(default)]
    pub clients: Vec<ClientScript>,
    #[serde(default)]
    pub blink: Vec<BlinkScript>,
    #[serde(default = "default_dep_policy")]
    pub dep_policy: DepPolicy,
    /// Longest wait for a dep decision after the last correct proposal;
    /// defaults to 3δ.
    #[serde(default)]
    pub dep_latency: Option<i64>,
    #[serde(default = "default_step_budget")]
    pub step_budget: u64,
    /// Cut the run off after this time instead of running to quiescence.
    #[serde(default)]
    pub until: Option<i64>,
    #[serde(default)]
    pub periodic_beat: Option<PeriodicBeat>,
}

impl Scenario {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let q = Quorums::minimal(self.f);
        if (self.n as usize) < q.min_servers() {
            return Err(invalid(format!(
                "n = {} is below 5f+1 = {} for f = {}",
                self.n,
                q.min_servers(),
                self.f
            )));
        }
        if self.delta < 1 {
            return Err(invalid("delta must be at least 1"));
        }
        if self.drift < 0 {
            return Err(invalid("drift must be non-negative"));
        }
        if self.epsilon < 1 {
            return Err(invalid("epsilon must be at least 1"));
        }
        if self.byzantine.len() > self.f {
            return Err(invalid(format!(
                "{} Byzantine servers exceed f = {}",
                self.byzantine.len(),
                self.f
            )));
        }
        for p in self.byzantine.keys() {
            if !self.is_server(*p) {
                return Err(invalid(format!("Byzantine process {p} is not a server")));
            }
        }
        for (p, off) in &self.clock_offsets {
            if !self.is_server(*p) && !self.is_client(*p) {
                return Err(invalid(format!("clock offset for unknown process {p}")));
            }
            if off.abs() > self.drift {
                return Err(invalid(format!("offset {off} of {p} exceeds drift {}", self.drift)));
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.delay_estimate.is_some_and(|d| d < 0) {
                return Err(invalid(format!("client c{i} has a negative delay estimate")));
            }
            if c.epsilon.is_some_and(|e| e < 1) {
                return Err(invalid(format!("client c{i} has epsilon below 1")));
            }
            let mut seen = BTreeSet::new();
            for b in &c.broadcasts {
                if c.behavior.is_none() && !seen.insert(&b.message) {
                    return Err(invalid(format!("client c{i} broadcasts {:?} twice", b.message)));
                }
            }
        }
        let mut named = BTreeSet::new();
        for b in &self.blink {
            if !named.insert(b.instance) {
                return Err(invalid(format!("Blink instance #{} listed twice", b.instance)));
            }
            let mut proposers = BTreeSet::new();
            for p in &b.proposals {
                if !self.is_server(p.server) {
                    return Err(invalid(format!("Blink proposal from unknown server {}", p.server)));
                }
                if !proposers.insert(p.server) {
                    return Err(invalid(format!("{} proposes twice in #{}", p.server, b.instance)));
                }
            }
        }
        if self.dep_latency.is_some_and(|d| d < 0) {
            return Err(invalid("dep_latency must be non-negative"));
        }
        if self.periodic_beat.is_some_and(|p| p.every < 1) {
            return Err(invalid("periodic beat interval must be at least 1"));
        }
        Ok(())
    }

    fn is_server(&self, p: ProcessId) -> bool {
        p.is_server() && p.index < self.n
    }

    fn is_client(&self, p: ProcessId) -> bool {
        p.is_client() && (p.index as usize) < self.clients.len()
    }

    pub fn servers(&self) -> impl Iterator<Item = ProcessId> {
        (0..self.n).map(ProcessId::server)
    }

    pub fn correct_servers(&self) -> BTreeSet<ProcessId> {
        self.servers().filter(|s| !self.byzantine.contains_key(s)).collect()
    }

    pub fn client_delay_estimate(&self, c: &ClientScript) -> i64 {
        c.delay_estimate.unwrap_or(self.delta)
    }

    pub fn client_epsilon(&self, c: &ClientScript) -> i64 {
        c.epsilon.unwrap_or(self.epsilon)
    }

    pub fn dep_budget(&self) -> i64 {
        self.dep_latency.unwrap_or(3 * self.delta)
    }

    /// Exact delays, no drift, every process correct and never crashing.
    pub fn is_good_case(&self) -> bool {
        matches!(self.network, NetworkMode::ExactDelta)
            && self.drift == 0
            && self.clock_offsets.values().all(|&o| o == 0)
            && self.byzantine.is_empty()
            && self
                .clients
                .iter()
                .all(|c| c.behavior.is_none() && c.crash_at.is_none())
    }

    pub fn check_config(&self, quiescent: bool) -> CheckConfig {
        let honest_clients = self
            .clients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.behavior.is_none())
            .map(|(i, c)| {
                (
                    ProcessId::client(i as u32),
                    ClientProfile {
                        delay_estimate: self.client_delay_estimate(c),
                        bet_margin: self.client_epsilon(c),
                        crashes: c.crash_at.is_some(),
                    },
                )
            })
            .collect();
        CheckConfig {
            n: self.n,
            f: self.f,
            delta: self.delta,
            drift: self.drift,
            offsets: self.clock_offsets.clone(),
            correct_servers: self.correct_servers(),
            honest_clients,
            exact_delta: matches!(self.network, NetworkMode::ExactDelta),
            good_case: self.is_good_case(),
            quiescent,
        }
    }

    pub fn stop_at(&self) -> StopAt {
        match self.until {
            Some(t) => StopAt::Until(SimTime(t)),
            None => StopAt::Quiescence,
        }
    }

    /// A ready-to-run simulation with every input scheduled.
    pub fn build(&self) -> Result<Simulation, ScenarioError> {
        self.validate()?;
        let network = Network::new(self.network.clone(), self.delta)?;
        let clocks = ClockModel::new(self.drift, self.clock_offsets.clone())?;
        let oracle = DepOracle::new(self.dep_policy.clone(), self.dep_budget(), self.correct_servers())
            .map_err(SimError::from)?;
        let mut sim = Simulation::new(self.n, network, clocks, oracle);

        for id in self.servers() {
            let core = FlutterServer::new(ServerConfig {
                id,
                servers: self.n,
                f: self.f,
                periodic_beat: self.periodic_beat,
            });
            match self.byzantine.get(&id) {
                Some(b) => sim.add_node(id, Box::new(ByzantineServer::new(core, b.clone()))),
                None => sim.add_node(id, Box::new(core)),
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            let id = ProcessId::client(i as u32);
            let (delay_estimate, bet_margin) = (self.client_delay_estimate(c), self.client_epsilon(c));
            match &c.behavior {
                None => sim.add_node(
                    id,
                    Box::new(FlutterClient::new(ClientConfig {
                        id,
                        f: self.f,
                        delay_estimate,
                        bet_margin,
                    })),
                ),
                Some(ClientBehavior::PartialDisseminator { reach }) => sim.add_node(
                    id,
                    Box::new(PartialDisseminator::new(id, *reach, delay_estimate, bet_margin)),
                ),
            }
        }

        for (i, c) in self.clients.iter().enumerate() {
            let id = ProcessId::client(i as u32);
            for b in &c.broadcasts {
                let m = Payload(b.message.as_bytes().to_vec());
                sim.schedule_input(SimTime(b.at), id, Input::Broadcast(m))?;
            }
            if let Some(t) = c.crash_at {
                sim.schedule_input(SimTime(t), id, Input::Crash)?;
            }
        }
        for b in &self.blink {
            for p in &b.proposals {
                let input = Input::Propose {
                    instance: InstanceId::Named(b.instance),
                    value: p.value.into(),
                };
                sim.schedule_input(SimTime(p.at), p.server, input)?;
            }
        }
        Ok(sim)
    }
}
