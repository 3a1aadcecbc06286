use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::simnet::SimError;
use crate::types::{ProcessId, SimTime};

/// One scripted delay: the `index`-th message (0-based) sent on `src -> dst`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedDelay {
    pub src: ProcessId,
    pub dst: ProcessId,
    pub index: u64,
    pub delay: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NetworkMode {
    /// Every message takes exactly `delta`.
    ExactDelta,
    /// Uniform in `[1, delta]`, drawn from a ChaCha8 stream.
    SeededRandom { seed: u64 },
    /// Table lookup; messages missing from the table take `delta`.
    Scripted {
        #[serde(default)]
        delays: Vec<ScriptedDelay>,
    },
}

/// Per-link bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkState {
    pub sent: u64,
    pub last_delivery_time: SimTime,
}

/// Assigns a delivery time to every send, keeping links FIFO.
#[derive(Clone, Debug)]
pub struct Network {
    delta: i64,
    mode: NetworkMode,
    script: BTreeMap<(ProcessId, ProcessId, u64), i64>,
    rng: ChaCha8Rng,
    links: BTreeMap<(ProcessId, ProcessId), LinkState>,
}

impl Network {
    pub fn new(mode: NetworkMode, delta: i64) -> Result<Self, SimError> {
        if delta < 1 {
            return Err(SimError::Config(format!("delta must be >= 1, got {delta}")));
        }
        let mut script = BTreeMap::new();
        let mut seed = 0;
        match &mode {
            NetworkMode::ExactDelta => {}
            NetworkMode::SeededRandom { seed: s } => seed = *s,
            NetworkMode::Scripted { delays } => {
                for d in delays {
                    if !(1..=delta).contains(&d.delay) {
                        return Err(SimError::Config(format!(
                            "scripted delay {} on {}->{} outside [1, {delta}]",
                            d.delay, d.src, d.dst
                        )));
                    }
                    script.insert((d.src, d.dst, d.index), d.delay);
                }
            }
        }
        Ok(Network {
            delta,
            mode,
            script,
            rng: ChaCha8Rng::seed_from_u64(seed),
            links: BTreeMap::new(),
        })
    }

    pub fn delta(&self) -> i64 {
        self.delta
    }

    pub fn mode(&self) -> &NetworkMode {
        &self.mode
    }

    pub fn link(&self, src: ProcessId, dst: ProcessId) -> Option<&LinkState> {
        self.links.get(&(src, dst))
    }

    /// Raw delay for the next message on `src -> dst`, in `[1, delta]`.
    fn draw_delay(&mut self, src: ProcessId, dst: ProcessId, index: u64) -> i64 {
        match self.mode {
            NetworkMode::ExactDelta => self.delta,
            NetworkMode::SeededRandom { .. } => self.rng.gen_range(1..=self.delta),
            NetworkMode::Scripted { .. } => self.script.get(&(src, dst, index)).copied().unwrap_or(self.delta),
        }
    }

    /// Delivery time for a message sent now; never earlier than the previous
    /// delivery on the same link.
    pub fn schedule(&mut self, src: ProcessId, dst: ProcessId, now: SimTime) -> SimTime {
        let index = self.links.get(&(src, dst)).map_or(0, |l| l.sent);
        let delay = self.draw_delay(src, dst, index);
        let link = self.links.entry((src, dst)).or_default();
        let at = SimTime(now.0 + delay).max(link.last_delivery_time);
        link.sent += 1;
        link.last_delivery_time = at;
        at
    }
}
