use std::io::Cursor;

use flutter_core::adversary::builtin_behaviors;
use flutter_core::campaign::run_campaign;
use flutter_core::checkers::{check_all, Verdict};
use flutter_core::runner::run_scenario;
use flutter_core::scenario::{Scenario, ScenarioError, ScriptedProposal};
use flutter_core::trace::Trace;
use flutter_core::ProcessId;

const BUNDLED: [&str; 6] = [
    "goodcase",
    "blink_fast",
    "bosco",
    "partial_dissemination",
    "retry",
    "campaign_base",
];

fn load(name: &str) -> Scenario {
    Scenario::load(format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn bundled_traces_survive_jsonl_round_trip() {
    for name in BUNDLED {
        let r = run_scenario(&load(name)).unwrap();
        let text = r.trace.to_jsonl();
        let back = Trace::read_jsonl(Cursor::new(text.as_bytes())).unwrap();
        assert_eq!(back, r.trace, "{name}");
        assert_eq!(check_all(&back.events, &r.config), r.checks, "{name}");
    }
}

#[test]
fn bundled_scenarios_pass_every_check() {
    for name in BUNDLED {
        let r = run_scenario(&load(name)).unwrap();
        assert!(r.outcome.quiescent, "{name}");
        assert!(r.passed(), "{name}: {}", r.report_json());
    }
}

#[test]
fn scenario_json_round_trips() {
    for name in BUNDLED {
        let s = load(name);
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}

#[test]
fn cutoff_run_defers_liveness_verdicts() {
    let mut s = load("goodcase");
    s.until = Some(15);
    let r = run_scenario(&s).unwrap();
    assert!(!r.outcome.quiescent);
    assert!(r.passed(), "{}", r.report_json());
    assert!(r.trace.iter().all(|e| e.time.0 <= 15));
    for p in ["tob.validity", "consensus.termination"] {
        assert!(matches!(r.check(p).unwrap().verdict, Verdict::NotApplicable(_)), "{p}");
    }
}

#[test]
fn too_few_servers_is_rejected() {
    let text = r#"{"name": "small", "n": 5, "f": 1, "delta": 10}"#;
    match Scenario::from_json(text) {
        Err(ScenarioError::Invalid(msg)) => assert!(msg.contains("5f+1"), "{msg}"),
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let text = r#"{"name": "x", "n": 6, "f": 1, "delta": 10, "deltaa": 3}"#;
    assert!(matches!(Scenario::from_json(text), Err(ScenarioError::Json(_))));
}

/// The campaign base widened to `n` servers, every extra server proposing
/// like s0.
fn widened(n: u32, f: usize) -> Scenario {
    let mut s = load("campaign_base");
    s.name = format!("campaign_n{n}_f{f}");
    s.n = n;
    s.f = f;
    for inst in &mut s.blink {
        let value = inst.proposals[0].value;
        for i in 6..n {
            inst.proposals.push(ScriptedProposal {
                server: ProcessId::server(i),
                at: 0,
                value,
            });
        }
    }
    s.validate().unwrap();
    s
}

#[test]
fn campaigns_beyond_the_minimal_system_pass() {
    for (n, f) in [(7, 1), (8, 1), (11, 2)] {
        let summary = run_campaign(&widened(n, f), 0..40, &builtin_behaviors(), None);
        assert!(summary.passed(), "n={n} f={f}: {:#?}", summary.failures);
    }
}
