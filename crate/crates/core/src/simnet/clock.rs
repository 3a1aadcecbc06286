use std::collections::BTreeMap;

use crate::simnet::SimError;
use crate::types::{ProcessId, SimTime};

/// Static per-process clock offsets bounded by the drift `Δ`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClockModel {
    drift: i64,
    offsets: BTreeMap<ProcessId, i64>,
}

impl ClockModel {
    pub fn new(drift: i64, offsets: BTreeMap<ProcessId, i64>) -> Result<Self, SimError> {
        if drift < 0 {
            return Err(SimError::Config(format!("drift must be >= 0, got {drift}")));
        }
        if let Some((p, o)) = offsets.iter().find(|(_, o)| o.abs() > drift) {
            return Err(SimError::Config(format!(
                "clock offset {o} of {p} exceeds drift bound {drift}"
            )));
        }
        Ok(ClockModel { drift, offsets })
    }

    /// Perfectly synchronized clocks.
    pub fn synchronized() -> Self {
        ClockModel::default()
    }

    pub fn drift(&self) -> i64 {
        self.drift
    }

    pub fn offset(&self, p: ProcessId) -> i64 {
        self.offsets.get(&p).copied().unwrap_or(0)
    }

    pub fn is_synchronized(&self) -> bool {
        self.offsets.values().all(|&o| o == 0)
    }

    pub fn local_time(&self, p: ProcessId, global: SimTime) -> SimTime {
        SimTime(global.0 + self.offset(p))
    }

    /// Global time at which `p`'s clock reads `local`.
    pub fn global_time(&self, p: ProcessId, local: SimTime) -> SimTime {
        SimTime(local.0 - self.offset(p))
    }
}
