mod common;

use std::collections::BTreeSet;
use std::io::BufReader;

use rand::Rng;

use atomfix::corpus;
use atomfix::lang::{instrument_weak, GuardId};
use atomfix::pipeline::prepare;
use atomfix::verifier::{
    cs_of, read_events, verify, wcs_of, wcs_restricted, Budget, Constraint, ReplayError, Trace,
    VerifError, VerifResult, Verifier,
};

use common::{fuzz_seed, naive_has_bug, random_subset, rng, GenProgram};

fn bug(v: VerifResult) -> Trace {
    match v {
        VerifResult::Bug(t) => t,
        VerifResult::Correct => panic!("expected a bug"),
    }
}

fn guards(ids: &[u32]) -> BTreeSet<GuardId> {
    ids.iter().map(|&i| GuardId(i)).collect()
}

#[test]
fn verdicts_match_naive_enumeration_on_random_programs() {
    let seed = fuzz_seed(0x5eed);
    let mut r = rng(seed);
    for i in 0..40 {
        let g = GenProgram::random(&mut r);
        assert!(g.yields() <= 8 && g.threads.len() <= 3 && g.statements() <= 20);
        let (src, _) = g.render();
        let p = prepare(&src).unwrap_or_else(|e| panic!("seed {seed} #{i}: {e}\n{src}"));
        let gs = g.guards(&p);
        let v = Verifier::new(&p, Budget::default());
        for disabled in [BTreeSet::new(), random_subset(&mut r, &gs)] {
            let got = matches!(
                v.verify(&Constraint::disable(&disabled)).unwrap(),
                VerifResult::Bug(_)
            );
            let want = naive_has_bug(&g, &gs, &disabled);
            assert_eq!(got, want, "seed {seed} #{i}, disabled {disabled:?}\n{src}");
        }
    }
}

#[test]
fn verification_is_deterministic() {
    let p = prepare(corpus::BANKING).unwrap();
    let a = verify(&p, &Constraint::truth(), Budget::default()).unwrap();
    let b = verify(&p, &Constraint::truth(), Budget::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn banking_bug_switches_after_the_balance_check() {
    let p = prepare(corpus::BANKING).unwrap();
    let t = bug(verify(&p, &Constraint::truth(), Budget::default()).unwrap());
    assert_eq!(t.failure.loc.proc, "main");
    assert!(!cs_of(&t).is_empty());
    // Some switch happens inside transfer after the check has run.
    let switched_in_transfer = t
        .events
        .iter()
        .any(|e| e.took_switch_at().is_some() && e.loc.proc == "transfer" && e.loc.line > 22);
    assert!(switched_in_transfer, "{}", t.to_jsonl());
}

#[test]
fn code1_style_program_is_fixed_by_disabling_the_check_yield() {
    let p = prepare(&corpus::redundant_writes(4)).unwrap();
    let v = Verifier::new(&p, Budget::default());
    let check: GuardId = p
        .yield_points()
        .into_iter()
        .find(|y| y.loc.proc == "first" && y.loc.line == 6)
        .and_then(|y| y.id)
        .unwrap();
    let t = bug(v.verify(&Constraint::truth()).unwrap());
    assert!(cs_of(&t).contains(&check), "{}", t.to_jsonl());
    let fixed = BTreeSet::from([check]);
    assert_eq!(
        v.verify(&Constraint::disable(&fixed)).unwrap(),
        VerifResult::Correct
    );
}

#[test]
fn disabling_every_guard_leaves_only_serial_runs() {
    for b in corpus::all() {
        let p = prepare(&b.source).unwrap();
        let all: BTreeSet<GuardId> = p.eligible_guards();
        let r = verify(&p, &Constraint::disable(&all), Budget::default()).unwrap();
        assert_eq!(r, VerifResult::Correct, "{}", b.name);
    }
}

#[test]
fn returned_traces_respect_the_constraint() {
    let p = prepare(corpus::BANKING).unwrap();
    let v = Verifier::new(&p, Budget::default());
    let mut r = rng(fuzz_seed(7));
    let eligible: Vec<GuardId> = p.eligible_guards().into_iter().collect();
    for _ in 0..40 {
        let mut phi = Constraint::truth();
        for _ in 0..r.random_range(0..4) {
            let clause: BTreeSet<GuardId> = eligible
                .iter()
                .copied()
                .filter(|_| r.random_bool(0.3))
                .collect();
            if !clause.is_empty() {
                phi.add_clause(clause).unwrap();
            }
        }
        if let VerifResult::Bug(t) = v.verify(&phi).unwrap() {
            assert!(phi.admits(&cs_of(&t)), "{phi}: {:?}", cs_of(&t));
        }
    }
}

#[test]
fn stronger_constraints_keep_correct_programs_correct() {
    let p = prepare(corpus::BANKING).unwrap();
    let v = Verifier::new(&p, Budget::default());
    let mut r = rng(fuzz_seed(11));
    let eligible: Vec<GuardId> = p.eligible_guards().into_iter().collect();
    for _ in 0..30 {
        let base: BTreeSet<GuardId> = eligible
            .iter()
            .copied()
            .filter(|_| r.random_bool(0.5))
            .collect();
        let more: BTreeSet<GuardId> = base
            .iter()
            .copied()
            .chain(eligible.iter().copied().filter(|_| r.random_bool(0.3)))
            .collect();
        let weak = Constraint::disable(&base);
        let strong = Constraint::disable(&more);
        assert!(strong.implies(&weak));
        if v.verify(&weak).unwrap() == VerifResult::Correct {
            assert_eq!(
                v.verify(&strong).unwrap(),
                VerifResult::Correct,
                "{base:?} ⊆ {more:?}"
            );
        }
    }
}

#[test]
fn traces_replay_to_the_same_failure() {
    for b in corpus::all() {
        let p = prepare(&b.source).unwrap();
        let v = Verifier::new(&p, Budget::default());
        let t = bug(v.verify(&Constraint::truth()).unwrap());
        let text = t.to_jsonl();
        let events = read_events(BufReader::new(text.as_bytes())).unwrap();
        assert_eq!(events, t.events);
        let again = v.replay(&Constraint::truth(), &events).unwrap();
        assert_eq!(again.failure, t.failure, "{}", b.name);
        assert_eq!(again.events, t.events, "{}", b.name);
    }
}

#[test]
fn replay_rejects_schedules_the_constraint_forbids() {
    let p = prepare(corpus::BANKING).unwrap();
    let v = Verifier::new(&p, Budget::default());
    let t = bug(v.verify(&Constraint::truth()).unwrap());
    let cs = cs_of(&t);
    match v.replay(&Constraint::disable(&cs), &t.events) {
        Err(ReplayError::Diverged { .. }) | Err(ReplayError::NoFailure) => {}
        other => panic!("expected a divergence, got {other:?}"),
    }
}

#[test]
fn malformed_trace_lines_are_reported_with_their_number() {
    let text = "{\"thread\":0,\"proc\":\"main\",\"index\":0,\"line\":1,\"yield\":false,\"guard\":null,\"switch_to\":null}\nnot json\n";
    match read_events(BufReader::new(text.as_bytes())) {
        Err(ReplayError::Format(line, _)) => assert_eq!(line, 2),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn step_cap_is_reported_as_budget_exceeded() {
    let p = prepare(corpus::BANKING).unwrap();
    let budget = Budget {
        step_cap: 10,
        cs_bound: None,
    };
    assert!(matches!(
        verify(&p, &Constraint::truth(), budget),
        Err(VerifError::BudgetExceeded(_))
    ));
}

#[test]
fn context_switch_bound_limits_exploration() {
    let p = prepare(corpus::BANKING).unwrap();
    let zero = Budget {
        step_cap: Budget::default().step_cap,
        cs_bound: Some(0),
    };
    assert_eq!(
        verify(&p, &Constraint::truth(), zero).unwrap(),
        VerifResult::Correct
    );
    let one = Budget {
        cs_bound: Some(1),
        ..zero
    };
    let (_, s1) = Verifier::new(&p, one)
        .verify_with_stats(&Constraint::disable(&p.eligible_guards()))
        .unwrap();
    assert!(s1.steps > 0);
}

#[test]
fn banking_weak_trace_conflicts_with_seize() {
    let p = prepare(corpus::BANKING).unwrap();
    let seize: GuardId = p
        .yield_points()
        .into_iter()
        .find(|y| y.loc.proc == "seize")
        .and_then(|y| y.id)
        .unwrap();
    let s = guards(&[2, 5]);
    let w = instrument_weak(&p);
    let t = bug(verify(&w, &Constraint::disable(&s), Budget::default()).unwrap());
    assert!(!wcs_of(&t).is_empty());
    assert!(wcs_restricted(&t, &s).contains(&seize), "{}", t.to_jsonl());
    let mut with_seize = s.clone();
    with_seize.insert(seize);
    assert_eq!(
        verify(&w, &Constraint::disable(&with_seize), Budget::default()).unwrap(),
        VerifResult::Correct
    );
}
