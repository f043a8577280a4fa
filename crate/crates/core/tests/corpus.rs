use std::collections::BTreeSet;
use std::path::PathBuf;

use union_core::harness::{checker, run_scenario, RunReport, Scenario, Strategy};
use union_core::ids::FunctionaryId;
use union_core::protocol::log::{Body, EventLog};
use union_core::txgraph::TemplateKind;

fn corpus() -> Vec<(String, Scenario)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let s = Scenario::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p.file_stem().unwrap().to_string_lossy().into_owned(), s)
        })
        .collect()
}

fn run(name: &str) -> (RunReport, EventLog) {
    let (_, s) = corpus()
        .into_iter()
        .find(|(n, _)| n == name)
        .expect("scenario exists");
    run_scenario(&s).unwrap()
}

fn templates(log: &EventLog) -> BTreeSet<TemplateKind> {
    log.events()
        .iter()
        .filter_map(|e| match &e.body {
            Body::Transaction { template, .. } => Some(*template),
            _ => None,
        })
        .collect()
}

fn rejections(log: &EventLog) -> Vec<(String, String)> {
    log.events()
        .iter()
        .filter_map(|e| match &e.body {
            Body::Rejected { action, reason, .. } => Some((action.clone(), reason.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn every_scenario_parses_and_round_trips() {
    let c = corpus();
    assert!(c.len() >= 12);
    for (name, s) in c {
        assert_eq!(s.name, name, "file name matches scenario name");
        assert_eq!(Scenario::parse(&s.to_string()).unwrap(), s);
    }
}

#[test]
fn corpus_covers_every_template_and_strategy() {
    let mut kinds = BTreeSet::new();
    let mut strategies = BTreeSet::new();
    for (_, s) in corpus() {
        strategies.extend(s.functionary_ids().map(|f| s.strategy(f)));
        kinds.extend(templates(&run_scenario(&s).unwrap().1));
    }
    for k in TemplateKind::ALL {
        assert!(kinds.contains(&k), "no scenario produces {k:?}");
    }
    for st in Strategy::ALL {
        assert!(strategies.contains(&st), "no scenario uses {}", st.name());
    }
}

#[test]
fn only_the_negative_control_breaks_an_invariant() {
    for (name, s) in corpus() {
        let (rep, _) = run_scenario(&s).unwrap();
        let failed: Vec<&str> = rep.failed().iter().map(|v| v.name.as_str()).collect();
        if name == "all-leaked" {
            assert_eq!(failed, [checker::SAFETY], "{name}");
        } else {
            assert!(failed.is_empty(), "{name}: {failed:?}\n{}", rep.render());
        }
    }
}

#[test]
fn adversaries_are_slashed_and_honest_parties_are_not() {
    for name in [
        "silent-prover",
        "fake-proof-prover",
        "fork-prover",
        "griefing-verifier",
        "double-operator",
        "censorship",
    ] {
        let (_, s) = corpus().into_iter().find(|(n, _)| n == name).unwrap();
        let (rep, _) = run_scenario(&s).unwrap();
        let bad: Vec<FunctionaryId> = s.strategies.keys().copied().collect();
        assert_eq!(rep.slashed, bad, "{name}");
    }
}

#[test]
fn key_leaker_alone_cannot_steal() {
    let (rep, log) = run("key-leaker");
    assert!(rep.slashed.is_empty());
    assert!(!templates(&log).contains(&TemplateKind::Theft));
    assert!(rejections(&log)
        .iter()
        .any(|(a, r)| a == "theft" && r.contains("missing signatures")));
}

#[test]
fn all_leaked_keys_let_a_theft_through() {
    let (_, log) = run("all-leaked");
    assert!(templates(&log).contains(&TemplateKind::Theft));
}

#[test]
fn slashed_operator_loses_its_in_flight_pegout() {
    let (rep, _) = run("slashed-invalidated");
    assert!(rep
        .pegs
        .iter()
        .any(|p| p.kind == "pegout" && p.outcome.ends_with("invalidated")));
}

#[test]
fn pool_exhaustion_rejects_the_extra_pegin() {
    let (rep, log) = run("pool-exhaustion");
    assert_eq!(rep.pegs.iter().filter(|p| p.outcome == "minted").count(), 2);
    assert!(rejections(&log)
        .iter()
        .any(|(a, r)| a == "pegin" && r.contains("no VMXO")));
}

#[test]
fn pegin_after_withdrawal_finds_a_functionary_offline() {
    let (rep, log) = run("withdraw-then-pegin");
    assert_eq!(rep.pegs.iter().filter(|p| p.kind == "pegin").count(), 1);
    assert!(rejections(&log)
        .iter()
        .any(|(a, r)| a == "pegin" && r.contains("cannot sign")));
}

#[test]
fn parallel_mode_serves_concurrent_pegouts() {
    let (rep, _) = run("parallel");
    let done = rep
        .pegs
        .iter()
        .filter(|p| p.kind == "pegout" && p.outcome.ends_with("recovered"))
        .count();
    assert_eq!(done, 2);
}

#[test]
fn book_scenario_example_parses() {
    let book = include_str!("../../../book/src/harness.md");
    let block: String = book
        .split("```text")
        .nth(1)
        .and_then(|b| b.split("```").next())
        .expect("scenario block in the harness chapter")
        .to_string();
    let s = Scenario::parse(&block).unwrap();
    assert_eq!(s.strategy(FunctionaryId(2)), Strategy::ForkProver);
    assert!(run_scenario(&s).unwrap().0.passed());
}
