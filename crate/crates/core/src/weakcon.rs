//! The underlying weak binary consensus used by Blink's slow path.
//!
//! It is not a protocol but an oracle owned by the simulator: it sees every
//! correct server's proposal and, once all of them are in, picks an allowed
//! value and a delivery time per server according to a [`DepPolicy`]. Every
//! behavior it can produce satisfies weak validity, agreement, integrity and
//! termination, so tests that quantify over policies quantify over "any"
//! weak consensus.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{InstanceId, ProcessId, SimTime, Value};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DepPolicy {
    /// Decide the first correct proposal; everyone hears it after the full
    /// latency budget.
    FirstProposal,
    /// Decide the value backed by the fewest correct servers (ties go to
    /// `False`); everyone hears it after the full latency budget.
    AdversarialValue,
    /// As `AdversarialValue`, with a per-server delivery delay after the
    /// decision point. Servers missing from the table wait the full budget.
    AdversarialTiming {
        #[serde(default)]
        delays: BTreeMap<ProcessId, i64>,
    },
    /// Insist on one value. Fails with [`DepError::OracleViolation`] when no
    /// correct server proposed it; only meant for harness tests.
    Fixed { value: Value },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DepError {
    #[error("correct server {server} proposed twice to dep instance {instance}")]
    DoublePropose { server: ProcessId, instance: InstanceId },
    #[error("policy picked {value} for {instance}, which no correct server proposed")]
    OracleViolation { instance: InstanceId, value: Value },
    #[error("dep policy {0}")]
    InvalidPolicy(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DepInstanceState {
    /// Correct proposals in arrival order.
    pub proposals: Vec<(ProcessId, Value)>,
    pub decided: Option<Value>,
    pub decision_point: Option<SimTime>,
    pub deliveries: BTreeMap<ProcessId, SimTime>,
}

impl DepInstanceState {
    fn count(&self, v: Value) -> usize {
        self.proposals.iter().filter(|(_, p)| *p == v).count()
    }

    /// Values some correct server proposed.
    pub fn allowed(&self) -> BTreeSet<Value> {
        self.proposals.iter().map(|(_, v)| *v).collect()
    }
}

/// A decide indication the simulator must deliver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepIndication {
    pub server: ProcessId,
    pub at: SimTime,
    pub value: Value,
}

#[derive(Clone, Debug)]
pub struct DepOracle {
    policy: DepPolicy,
    budget: i64,
    correct: BTreeSet<ProcessId>,
    instances: BTreeMap<InstanceId, DepInstanceState>,
}

impl DepOracle {
    /// `budget` bounds how long after the last correct proposal any server may
    /// wait for its decide indication.
    pub fn new(policy: DepPolicy, budget: i64, correct: BTreeSet<ProcessId>) -> Result<Self, DepError> {
        let mut oracle = DepOracle {
            policy: DepPolicy::FirstProposal,
            budget,
            correct,
            instances: BTreeMap::new(),
        };
        if budget < 0 {
            return Err(DepError::InvalidPolicy(format!("budget {budget} is negative")));
        }
        oracle.set_policy(policy)?;
        Ok(oracle)
    }

    /// Only allowed before the first proposal.
    pub fn set_policy(&mut self, policy: DepPolicy) -> Result<(), DepError> {
        if !self.instances.is_empty() {
            return Err(DepError::InvalidPolicy("changed after the run started".into()));
        }
        if let DepPolicy::AdversarialTiming { delays } = &policy {
            if let Some((s, d)) = delays.iter().find(|(_, d)| !(0..=self.budget).contains(*d)) {
                return Err(DepError::InvalidPolicy(format!(
                    "delay {d} for {s} outside [0, {}]",
                    self.budget
                )));
            }
        }
        self.policy = policy;
        Ok(())
    }

    pub fn policy(&self) -> &DepPolicy {
        &self.policy
    }

    pub fn budget(&self) -> i64 {
        self.budget
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&DepInstanceState> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> impl Iterator<Item = (&InstanceId, &DepInstanceState)> {
        self.instances.iter()
    }

    pub fn is_correct(&self, p: ProcessId) -> bool {
        self.correct.contains(&p)
    }

    /// Records a proposal. Proposals from non-correct servers are ignored.
    /// Returns the decide indications to schedule once the last correct
    /// server has proposed.
    pub fn propose(
        &mut self,
        now: SimTime,
        instance: &InstanceId,
        server: ProcessId,
        value: Value,
    ) -> Result<Vec<DepIndication>, DepError> {
        if !self.correct.contains(&server) {
            return Ok(Vec::new());
        }
        let state = self.instances.entry(instance.clone()).or_default();
        if state.proposals.iter().any(|(s, _)| *s == server) {
            return Err(DepError::DoublePropose {
                server,
                instance: instance.clone(),
            });
        }
        state.proposals.push((server, value));
        if state.proposals.len() < self.correct.len() || state.decided.is_some() {
            return Ok(Vec::new());
        }

        let decided = match &self.policy {
            DepPolicy::FirstProposal => state.proposals[0].1,
            DepPolicy::AdversarialValue | DepPolicy::AdversarialTiming { .. } => {
                let (f, t) = (state.count(Value::False), state.count(Value::True));
                match (f, t) {
                    (0, _) => Value::True,
                    (_, 0) => Value::False,
                    (f, t) if t < f => Value::True,
                    _ => Value::False,
                }
            }
            DepPolicy::Fixed { value } => *value,
        };
        if !state.allowed().contains(&decided) {
            return Err(DepError::OracleViolation {
                instance: instance.clone(),
                value: decided,
            });
        }
        state.decided = Some(decided);
        state.decision_point = Some(now);

        let mut out = Vec::with_capacity(self.correct.len());
        for &s in &self.correct {
            let delay = match &self.policy {
                DepPolicy::AdversarialTiming { delays } => delays.get(&s).copied().unwrap_or(self.budget),
                _ => self.budget,
            };
            let at = SimTime(now.0 + delay);
            state.deliveries.insert(s, at);
            out.push(DepIndication {
                server: s,
                at,
                value: decided,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn servers(n: u32) -> BTreeSet<ProcessId> {
        (0..n).map(ProcessId::server).collect()
    }

    fn feed(oracle: &mut DepOracle, values: &[bool]) -> Result<Vec<DepIndication>, DepError> {
        let inst = InstanceId::Named(0);
        let mut last = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            last = oracle.propose(SimTime(i as i64), &inst, ProcessId::server(i as u32), v.into())?;
        }
        Ok(last)
    }

    #[test]
    fn unanimous_proposals_force_the_value() {
        for policy in [DepPolicy::FirstProposal, DepPolicy::AdversarialValue] {
            let mut oracle = DepOracle::new(policy, 30, servers(6)).unwrap();
            let out = feed(&mut oracle, &[true; 6]).unwrap();
            assert_eq!(out.len(), 6);
            assert!(out.iter().all(|d| d.value == Value::True && d.at == SimTime(5 + 30)));
        }
    }

    #[test]
    fn adversarial_value_picks_the_minority() {
        // 5 correct servers (s5 Byzantine): T,T,T,F,F -> both allowed, minority is False.
        let mut oracle = DepOracle::new(DepPolicy::AdversarialValue, 30, servers(5)).unwrap();
        let out = feed(&mut oracle, &[true, true, true, false, false]).unwrap();
        assert!(out.iter().all(|d| d.value == Value::False));
        let state = oracle.instance(&InstanceId::Named(0)).unwrap();
        assert_eq!(state.allowed(), BTreeSet::from([Value::False, Value::True]));
    }

    #[test]
    fn first_proposal_policy() {
        let mut oracle = DepOracle::new(DepPolicy::FirstProposal, 30, servers(3)).unwrap();
        let out = feed(&mut oracle, &[false, true, true]).unwrap();
        assert!(out.iter().all(|d| d.value == Value::False));
    }

    #[test]
    fn no_proposals_means_no_decision() {
        let mut oracle = DepOracle::new(DepPolicy::FirstProposal, 30, servers(6)).unwrap();
        assert!(feed(&mut oracle, &[true; 5]).unwrap().is_empty());
        assert!(oracle.instance(&InstanceId::Named(0)).unwrap().decided.is_none());
        assert!(oracle.instance(&InstanceId::Named(1)).is_none());
    }

    #[test]
    fn byzantine_proposals_are_ignored() {
        let mut oracle = DepOracle::new(DepPolicy::FirstProposal, 30, servers(2)).unwrap();
        let inst = InstanceId::Named(0);
        let out = oracle
            .propose(SimTime(0), &inst, ProcessId::server(9), Value::False)
            .unwrap();
        assert!(out.is_empty());
        assert!(oracle.instance(&inst).is_none());
    }

    #[test]
    fn double_proposal_is_a_bug() {
        let mut oracle = DepOracle::new(DepPolicy::FirstProposal, 30, servers(6)).unwrap();
        let inst = InstanceId::Named(0);
        oracle
            .propose(SimTime(0), &inst, ProcessId::server(0), Value::True)
            .unwrap();
        assert!(matches!(
            oracle.propose(SimTime(1), &inst, ProcessId::server(0), Value::True),
            Err(DepError::DoublePropose { .. })
        ));
    }

    #[test]
    fn fixed_policy_outside_allowed_set_is_an_oracle_violation() {
        let mut oracle = DepOracle::new(DepPolicy::Fixed { value: Value::False }, 30, servers(3)).unwrap();
        assert!(matches!(
            feed(&mut oracle, &[true; 3]),
            Err(DepError::OracleViolation { .. })
        ));
    }

    #[test]
    fn adversarial_timing_staggers_deliveries() {
        let delays = BTreeMap::from([(ProcessId::server(0), 50), (ProcessId::server(1), 0)]);
        let mut oracle = DepOracle::new(DepPolicy::AdversarialTiming { delays }, 60, servers(3)).unwrap();
        let out = feed(&mut oracle, &[true, true, false]).unwrap();
        let at: BTreeMap<_, _> = out.iter().map(|d| (d.server, d.at)).collect();
        assert_eq!(at[&ProcessId::server(0)], SimTime(52));
        assert_eq!(at[&ProcessId::server(1)], SimTime(2));
        assert_eq!(at[&ProcessId::server(2)], SimTime(62));
    }

    #[test]
    fn timing_table_beyond_budget_is_rejected() {
        let delays = BTreeMap::from([(ProcessId::server(0), 31)]);
        assert!(DepOracle::new(DepPolicy::AdversarialTiming { delays }, 30, servers(3)).is_err());
    }

    #[test]
    fn policy_is_frozen_once_running() {
        let mut oracle = DepOracle::new(DepPolicy::FirstProposal, 30, servers(3)).unwrap();
        oracle
            .propose(SimTime(0), &InstanceId::Named(0), ProcessId::server(0), Value::True)
            .unwrap();
        assert!(oracle.set_policy(DepPolicy::AdversarialValue).is_err());
    }
}
