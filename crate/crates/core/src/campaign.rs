//! Seeded property campaigns: one base scenario, many seeds, one Byzantine
//! behavior at a time.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adversary::{Behavior, ClientBehavior, Equivocation, ServerBehavior};
use crate::checkers::Verdict;
use crate::runner::run_scenario;
use crate::scenario::{ClientScript, Scenario, ScriptedBroadcast};
use crate::simnet::NetworkMode;
use crate::types::ProcessId;
use crate::weakcon::DepPolicy;

/// The scenario actually run for `(behavior, seed)`.
///
/// Everything random is drawn from a ChaCha8 stream seeded with `seed`:
/// link delays, clock offsets within Δ, which `f` servers are Byzantine,
/// broadcast and proposal times, proposal values and dep timing. Even seeds
/// use the adversarial-value dep policy, odd seeds adversarial timing.
pub fn variant(base: &Scenario, behavior: &Behavior, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = base.clone();
    s.name = format!("{}/{}/{seed}", base.name, behavior.name());
    s.network = NetworkMode::SeededRandom { seed };
    s.until = None;

    s.clock_offsets.clear();
    if s.drift > 0 {
        for p in s.servers().collect::<Vec<_>>() {
            s.clock_offsets.insert(p, rng.gen_range(-s.drift..=s.drift));
        }
        for i in 0..s.clients.len() {
            s.clock_offsets
                .insert(ProcessId::client(i as u32), rng.gen_range(-s.drift..=s.drift));
        }
    }

    for c in &mut s.clients {
        for b in &mut c.broadcasts {
            b.at += rng.gen_range(0..=s.delta);
        }
    }
    for inst in &mut s.blink {
        for p in &mut inst.proposals {
            p.at = rng.gen_range(0..=2 * s.delta);
            p.value = rng.gen_bool(0.5);
        }
    }

    s.byzantine.clear();
    match behavior {
        Behavior::Server(b) => {
            let mut servers: Vec<ProcessId> = s.servers().collect();
            servers.shuffle(&mut rng);
            let b = match b {
                ServerBehavior::Equivocator { .. } => ServerBehavior::Equivocator {
                    pattern: [
                        Equivocation::Split,
                        Equivocation::Adaptive,
                        Equivocation::AllFalse,
                        Equivocation::AllTrue,
                    ][rng.gen_range(0..4)],
                },
                other => other.clone(),
            };
            for &p in servers.iter().take(s.f) {
                s.byzantine.insert(p, b.clone());
            }
        }
        Behavior::Client(ClientBehavior::PartialDisseminator { .. }) => {
            let id = s.clients.len();
            s.clients.push(ClientScript {
                delay_estimate: Some(rng.gen_range(1..=4 * s.delta)),
                epsilon: None,
                broadcasts: vec![ScriptedBroadcast {
                    at: rng.gen_range(0..=2 * s.delta),
                    message: format!("partial{id}"),
                }],
                crash_at: None,
                behavior: Some(ClientBehavior::PartialDisseminator {
                    reach: rng.gen_range(0..=s.n),
                }),
            });
            if s.drift > 0 {
                s.clock_offsets
                    .insert(ProcessId::client(id as u32), rng.gen_range(-s.drift..=s.drift));
            }
        }
    }

    let budget = s.dep_budget();
    s.dep_policy = if seed.is_multiple_of(2) {
        DepPolicy::AdversarialValue
    } else {
        DepPolicy::AdversarialTiming {
            delays: s
                .correct_servers()
                .into_iter()
                .map(|p| (p, rng.gen_range(0..=budget)))
                .collect(),
        }
    };
    s
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerdictCounts {
    pub pass: u64,
    pub fail: u64,
    pub not_applicable: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BehaviorSummary {
    pub runs: u64,
    pub quiescent: u64,
    pub errors: u64,
    pub properties: BTreeMap<String, VerdictCounts>,
    pub max_suggests_per_instance: u64,
    /// n², the bound on `Suggest` sends per instance.
    pub suggest_bound: u64,
    pub max_steps: u64,
}

/// One failing check or one run that could not complete.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub behavior: String,
    pub seed: u64,
    pub property: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CampaignSummary {
    pub base: String,
    pub seeds: (u64, u64),
    pub runs: u64,
    pub behaviors: BTreeMap<String, BehaviorSummary>,
    pub failures: Vec<Failure>,
}

impl CampaignSummary {
    /// No check failed, no run errored, and `Suggest` volume stayed within n².
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
            && self
                .behaviors
                .values()
                .all(|b| b.errors == 0 && b.max_suggests_per_instance <= b.suggest_bound)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

struct Outcome {
    behavior: String,
    seed: u64,
    result: Result<RunDigest, String>,
}

struct RunDigest {
    quiescent: bool,
    steps: u64,
    max_suggests: u64,
    verdicts: Vec<(&'static str, Verdict)>,
}

fn run_one(base: &Scenario, behavior: &Behavior, seed: u64) -> Outcome {
    let scenario = variant(base, behavior, seed);
    let result = run_scenario(&scenario)
        .map(|r| RunDigest {
            quiescent: r.outcome.quiescent,
            steps: r.outcome.steps,
            max_suggests: r.metrics.max_suggests_per_instance,
            verdicts: r.checks.into_iter().map(|c| (c.property, c.verdict)).collect(),
        })
        .map_err(|e| e.to_string());
    Outcome {
        behavior: behavior.name().to_string(),
        seed,
        result,
    }
}

/// Runs every `(behavior, seed)` pair. With `threads` set, runs on a pool of
/// that size; otherwise on rayon's global pool. The summary does not depend
/// on the number of threads.
pub fn run_campaign(
    base: &Scenario,
    seeds: Range<u64>,
    behaviors: &[Behavior],
    threads: Option<usize>,
) -> CampaignSummary {
    let jobs: Vec<(&Behavior, u64)> = behaviors
        .iter()
        .flat_map(|b| seeds.clone().map(move |s| (b, s)))
        .collect();
    let work = || -> Vec<Outcome> { jobs.par_iter().map(|(b, s)| run_one(base, b, *s)).collect() };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("thread pool")
            .install(work),
        None => work(),
    };

    let n = base.n as u64;
    let mut summary = CampaignSummary {
        base: base.name.clone(),
        seeds: (seeds.start, seeds.end),
        ..Default::default()
    };
    for o in outcomes {
        summary.runs += 1;
        let entry = summary
            .behaviors
            .entry(o.behavior.clone())
            .or_insert_with(|| BehaviorSummary {
                suggest_bound: n * n,
                ..Default::default()
            });
        entry.runs += 1;
        let digest = match o.result {
            Ok(d) => d,
            Err(reason) => {
                entry.errors += 1;
                summary.failures.push(Failure {
                    behavior: o.behavior,
                    seed: o.seed,
                    property: "run".into(),
                    reason,
                });
                continue;
            }
        };
        entry.quiescent += digest.quiescent as u64;
        entry.max_steps = entry.max_steps.max(digest.steps);
        entry.max_suggests_per_instance = entry.max_suggests_per_instance.max(digest.max_suggests);
        for (property, verdict) in digest.verdicts {
            let counts = entry.properties.entry(property.to_string()).or_default();
            match verdict {
                Verdict::Pass => counts.pass += 1,
                Verdict::NotApplicable(_) => counts.not_applicable += 1,
                Verdict::Fail { reason, .. } => {
                    counts.fail += 1;
                    summary.failures.push(Failure {
                        behavior: o.behavior.clone(),
                        seed: o.seed,
                        property: property.to_string(),
                        reason,
                    });
                }
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::builtin_behaviors;

    fn base() -> Scenario {
        Scenario::from_json(include_str!("../scenarios/campaign_base.json")).unwrap()
    }

    #[test]
    fn variants_are_valid_and_reproducible() {
        let base = base();
        for b in builtin_behaviors() {
            for seed in 0..20 {
                let v = variant(&base, &b, seed);
                v.validate().unwrap();
                assert_eq!(v, variant(&base, &b, seed));
                match &b {
                    Behavior::Server(_) => assert_eq!(v.byzantine.len(), base.f),
                    Behavior::Client(_) => assert_eq!(v.clients.len(), base.clients.len() + 1),
                }
            }
        }
    }

    #[test]
    fn dep_policy_alternates_with_seed_parity() {
        let base = base();
        let b = &builtin_behaviors()[0];
        assert_eq!(variant(&base, b, 4).dep_policy, DepPolicy::AdversarialValue);
        assert!(matches!(
            variant(&base, b, 5).dep_policy,
            DepPolicy::AdversarialTiming { .. }
        ));
    }

    #[test]
    fn summary_is_independent_of_thread_count() {
        let base = base();
        let behaviors = builtin_behaviors();
        let one = run_campaign(&base, 0..6, &behaviors, Some(1));
        let many = run_campaign(&base, 0..6, &behaviors, Some(4));
        assert_eq!(one, many);
        assert!(one.passed(), "{}", one.to_json());
    }
}
