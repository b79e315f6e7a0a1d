//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use atomfix::cfg::build_cfg;
use atomfix::corpus;
use atomfix::inference::{
    certify_minimality, fix_strong, fix_strong_baseline, RepairRun, ScriptedOracle,
};
use atomfix::lang::{instrument_weak, AtomicKind, GuardId, Program, Region};
use atomfix::mhs::{brute_force_mhs, solve_mhs, HittingInstance};
use atomfix::par::Exec;
use atomfix::pipeline::{prepare, run_fix, Outcome, RunConfig, StrongAlgorithm};
use atomfix::verifier::{Budget, Constraint, Trace, VerifResult, Verifier};

use common::{naive_has_bug, random_subset, rng, GenProgram};

/// Trace sequences observed by the strong loops of earlier criteria, replayed
/// later to compare the constraints both loops build.
#[derive(Default)]
struct Ctx {
    recorded: Vec<(String, Vec<Trace>)>,
}

type Check = fn(&mut Ctx) -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn prepared(src: &str) -> Program {
    prepare(src).expect("bundled program is valid")
}

fn strong_runs(ctx: &mut Ctx, name: &str, p: &Program) -> Result<(RepairRun, RepairRun), String> {
    let v = Verifier::new(p, Budget::default());
    let base = fix_strong_baseline(&mut &v, &mut ()).map_err(|e| format!("{name}: {e}"))?;
    let opt = fix_strong(&mut &v, &mut ()).map_err(|e| format!("{name}: {e}"))?;
    ctx.recorded
        .push((format!("{name} baseline"), base.traces.clone()));
    ctx.recorded
        .push((format!("{name} optimized"), opt.traces.clone()));
    Ok((base, opt))
}

fn fix(src: &str, mode: AtomicKind, algorithm: StrongAlgorithm) -> Outcome {
    let config = RunConfig {
        mode,
        algorithm,
        ..RunConfig::default()
    };
    run_fix(src, &config, &mut ())
}

fn guard_at(p: &Program, proc: &str, line: Option<usize>) -> Option<GuardId> {
    p.yield_points()
        .into_iter()
        .find(|y| y.loc.proc == proc && line.is_none_or(|l| y.loc.line == l))
        .and_then(|y| y.id)
}

fn show(s: &BTreeSet<GuardId>) -> String {
    let items: Vec<String> = s.iter().map(ToString::to_string).collect();
    format!("{{{}}}", items.join(", "))
}

fn lines(r: &Region) -> BTreeSet<usize> {
    r.locations.iter().map(|l| l.line).collect()
}

fn banking_strong(ctx: &mut Ctx) -> Result<String, String> {
    let start = Instant::now();
    let p = prepared(corpus::BANKING);
    let (_, run) = strong_runs(ctx, "banking", &p)?;
    let regions = build_cfg(&p).regions_for(&run.chosen);
    ensure(regions.len() == 2, || format!("{} regions", regions.len()))?;
    ensure(regions.iter().all(|r| r.proc == "transfer"), || {
        "region outside transfer".into()
    })?;
    let (debit, credit) = (lines(&regions[0]), lines(&regions[1]));
    ensure(debit.contains(&23) && credit.contains(&28), || {
        format!("regions {debit:?} / {credit:?} miss the debit read or credit write")
    })?;
    let (gap_lo, gap_hi) = (*debit.last().unwrap(), *credit.first().unwrap());
    let permitted = p.yield_points().into_iter().any(|y| {
        y.loc.proc == "transfer"
            && y.id.is_some_and(|g| !run.chosen.contains(&g))
            && y.loc.line > gap_lo
            && y.loc.line <= gap_hi
    });
    ensure(permitted, || {
        "no permitted switch between the regions".into()
    })?;
    let v = Verifier::new(&p, Budget::default());
    let cert = certify_minimality(
        &v,
        AtomicKind::Strong,
        &run.chosen,
        &p.eligible_guards(),
        Exec::Parallel,
    )
    .map_err(|e| e.to_string())?;
    ensure(cert.holds() && cert.exhaustive, || format!("{cert:?}"))?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "regions {debit:?} and {credit:?}, minimality checked over {} sets, {took:.1?}",
        cert.checked
    ))
}

fn banking_weak(_: &mut Ctx) -> Result<String, String> {
    let o = fix(
        corpus::BANKING,
        AtomicKind::Weak,
        StrongAlgorithm::Optimized,
    );
    let p = o.instrumented.as_ref().ok_or("no instrumented program")?;
    let weak = o.weak.as_ref().ok_or("no weak run")?;
    let seize = guard_at(p, "seize", Some(6)).ok_or("no seize guard")?;
    let extra: BTreeSet<GuardId> = weak.chosen.difference(&weak.strong_core).copied().collect();
    ensure(extra == BTreeSet::from([seize]), || {
        format!("weak adds {}, expected {{{seize}}}", show(&extra))
    })?;
    let mut without = weak.chosen.clone();
    without.remove(&seize);
    let w = instrument_weak(p);
    let r = Verifier::new(&w, Budget::default())
        .verify(&Constraint::disable(&without))
        .map_err(|e| e.to_string())?;
    ensure(matches!(r, VerifResult::Bug(_)), || {
        "dropping the seize section leaves no bug".into()
    })?;
    Ok(format!(
        "strong {} plus {seize}; dropping it re-exposes a bug",
        show(&weak.strong_core)
    ))
}

fn banking_corpus_strong(ctx: &mut Ctx) -> Result<String, String> {
    let p = prepared(corpus::BANKING_CORPUS);
    let (_, run) = strong_runs(ctx, "banking_corpus", &p)?;
    let regions = build_cfg(&p).regions_for(&run.chosen);
    ensure(regions.len() == 1, || format!("{} regions", regions.len()))?;
    let r = &regions[0];
    let ls = lines(r);
    ensure(
        r.proc == "transfer" && ls.contains(&30) && ls.contains(&33),
        || format!("region {}:{ls:?}", r.proc),
    )?;
    let (lo, hi) = (*ls.first().unwrap(), *ls.last().unwrap());
    let interior_switch = p.yield_points().into_iter().find(|y| {
        y.loc.proc == "transfer"
            && y.loc.line > lo
            && y.loc.line <= hi
            && y.id.is_some_and(|g| !run.chosen.contains(&g))
    });
    ensure(interior_switch.is_none(), || {
        format!("switch permitted inside the region at {interior_switch:?}")
    })?;
    Ok(format!("one region transfer:{lo}..{hi}"))
}

fn parameterized_sizes(ctx: &mut Ctx) -> Result<String, String> {
    let mut n = 0;
    for p1 in [0, 2, 4] {
        for p2 in [1, 4] {
            for p3 in [0, 10] {
                let o = fix(
                    &corpus::parameterized(p1, p2, p3),
                    AtomicKind::Weak,
                    StrongAlgorithm::Optimized,
                );
                let name = corpus::parameterized_name(p1, p2, p3);
                let strong = o
                    .strong
                    .as_ref()
                    .ok_or_else(|| format!("{name}: no strong run"))?;
                ctx.recorded
                    .push((format!("{name} optimized"), strong.traces.clone()));
                let w = o
                    .weak
                    .as_ref()
                    .ok_or_else(|| format!("({p1},{p2},{p3}): {:?}", o.report.error))?;
                let (s, k) = (w.strong_core.len(), w.chosen.len());
                ensure(s == p1 + 1 && k == p1 + p2 + 1, || {
                    format!("({p1},{p2},{p3}): strong {s}, weak {k}")
                })?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} parameter combinations"))
}

fn program_size_sweep(ctx: &mut Ctx) -> Result<String, String> {
    let mut base = Vec::new();
    let mut opt = Vec::new();
    for p3 in [0, 10, 20, 30, 40] {
        let p = prepared(&corpus::parameterized(0, 1, p3));
        let (b, o) = strong_runs(ctx, &corpus::parameterized_name(0, 1, p3), &p)?;
        base.push(b.queries);
        opt.push(o.queries);
    }
    ensure(opt.windows(2).all(|w| w[0] == w[1]), || {
        format!("optimized queries vary: {opt:?}")
    })?;
    ensure(
        base.windows(2)
            .all(|w| w[1] > w[0] && (w[1] - w[0]) * 2 >= 10),
        || format!("baseline queries {base:?} grow too slowly"),
    )?;
    Ok(format!("baseline {base:?}, optimized {opt:?}"))
}

fn linear(xs: &[usize]) -> bool {
    let d: Vec<i64> = xs.windows(2).map(|w| w[1] as i64 - w[0] as i64).collect();
    d.iter().all(|&x| x > 0) && d.windows(2).all(|w| (w[1] - w[0]).abs() <= 1)
}

fn solution_size_sweep(_: &mut Ctx) -> Result<String, String> {
    let mut weak = Vec::new();
    for p2 in 1..=5 {
        let o = fix(
            &corpus::parameterized(0, p2, 0),
            AtomicKind::Weak,
            StrongAlgorithm::Optimized,
        );
        weak.push(
            o.weak
                .ok_or_else(|| format!("p2={p2}: no weak run"))?
                .queries,
        );
    }
    let mut strong = Vec::new();
    for p1 in 0..=4 {
        let o = fix(
            &corpus::parameterized(p1, 1, 0),
            AtomicKind::Strong,
            StrongAlgorithm::Optimized,
        );
        strong.push(
            o.strong
                .ok_or_else(|| format!("p1={p1}: no strong run"))?
                .queries,
        );
    }
    ensure(linear(&weak), || {
        format!("weak queries {weak:?} not linear")
    })?;
    ensure(linear(&strong), || {
        format!("strong queries {strong:?} not linear")
    })?;
    Ok(format!("weak {weak:?}, strong {strong:?}"))
}

fn hitting_set_oracle(_: &mut Ctx) -> Result<String, String> {
    let start = Instant::now();
    let mut r = rng(0x4d48_5301);
    for i in 0..1000 {
        let universe = r.random_range(1..=12u32);
        let sets = (0..r.random_range(0..=8))
            .map(|_| {
                let mut s: BTreeSet<GuardId> = (0..universe)
                    .filter(|_| r.random_bool(0.3))
                    .map(GuardId)
                    .collect();
                if s.is_empty() {
                    s.insert(GuardId(r.random_range(0..universe)));
                }
                s
            })
            .collect();
        let inst = HittingInstance::from_sets(sets);
        let fast = solve_mhs(&inst).map_err(|e| e.to_string())?;
        let slow = brute_force_mhs(&inst).map_err(|e| e.to_string())?;
        ensure(fast == slow, || {
            format!("instance {i}: {fast:?} vs {slow:?}\n{inst}")
        })?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("1000 instances in {took:.1?}"))
}

fn verifier_oracle(_: &mut Ctx) -> Result<String, String> {
    let start = Instant::now();
    let mut r = rng(0x0ac1e);
    let mut bugs = 0;
    for i in 0..50 {
        let g = GenProgram::random(&mut r);
        ensure(
            g.threads.len() <= 3 && g.yields() <= 8 && g.statements() <= 20,
            || format!("program {i} exceeds the size bounds"),
        )?;
        let (src, _) = g.render();
        let p = prepare(&src).map_err(|e| format!("program {i}: {e}"))?;
        let gs = g.guards(&p);
        let v = Verifier::new(&p, Budget::default());
        for disabled in [BTreeSet::new(), random_subset(&mut r, &gs)] {
            let got = matches!(
                v.verify(&Constraint::disable(&disabled))
                    .map_err(|e| e.to_string())?,
                VerifResult::Bug(_)
            );
            let want = naive_has_bug(&g, &gs, &disabled);
            ensure(got == want, || {
                format!("program {i}, disabled {disabled:?}: {got} vs {want}\n{src}")
            })?;
            bugs += usize::from(got);
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(120), || format!("took {took:?}"))?;
    Ok(format!("100 verdicts agree ({bugs} buggy) in {took:.1?}"))
}

fn constraint_strength(ctx: &mut Ctx) -> Result<String, String> {
    ensure(!ctx.recorded.is_empty(), || "no recorded traces".into())?;
    let mut steps = 0;
    for (name, traces) in &ctx.recorded {
        let mut o1 = ScriptedOracle::new(traces.clone());
        let mut o2 = ScriptedOracle::new(traces.clone());
        let a = fix_strong_baseline(&mut o1, &mut ()).map_err(|e| format!("{name}: {e}"))?;
        let b = fix_strong(&mut o2, &mut ()).map_err(|e| format!("{name}: {e}"))?;
        ensure(
            a.phis.len() == traces.len() && b.phis.len() == traces.len(),
            || format!("{name}: loops consumed different trace counts"),
        )?;
        for (i, (p1, p2)) in a.phis.iter().zip(&b.phis).enumerate() {
            ensure(p2.implies(p1), || {
                format!("{name} step {i}: {p2} does not imply {p1}")
            })?;
        }
        steps += traces.len();
    }
    Ok(format!("{} sequences, {steps} steps", ctx.recorded.len()))
}

fn algorithm_agreement(_: &mut Ctx) -> Result<String, String> {
    let mut sizes = Vec::new();
    for b in corpus::all() {
        let p = prepared(&b.source);
        let v = Verifier::new(&p, Budget::default());
        let base = fix_strong_baseline(&mut &v, &mut ()).map_err(|e| format!("{}: {e}", b.name))?;
        let opt = fix_strong(&mut &v, &mut ()).map_err(|e| format!("{}: {e}", b.name))?;
        ensure(base.chosen.len() == opt.chosen.len(), || {
            format!("{}: {} vs {}", b.name, base.chosen.len(), opt.chosen.len())
        })?;
        sizes.push(opt.chosen.len());
    }
    Ok(format!("sizes {sizes:?}"))
}

fn minimality(_: &mut Ctx) -> Result<String, String> {
    let mut checked = 0;
    for b in corpus::all() {
        let o = fix(&b.source, AtomicKind::Weak, StrongAlgorithm::Optimized);
        let p = o.instrumented.as_ref().ok_or("no instrumented program")?;
        let w = o
            .weak
            .as_ref()
            .ok_or_else(|| format!("{}: no weak run", b.name))?;
        let eligible = p.eligible_guards();
        let v = Verifier::new(p, Budget::default());
        let strong = certify_minimality(
            &v,
            AtomicKind::Strong,
            &w.strong_core,
            &eligible,
            Exec::Parallel,
        )
        .map_err(|e| format!("{}: {e}", b.name))?;
        ensure(strong.holds() && strong.exhaustive, || {
            format!("{}: strong {strong:?}", b.name)
        })?;
        let wv = Verifier::new(&instrument_weak(p), Budget::default());
        let weak = certify_minimality(&wv, AtomicKind::Weak, &w.chosen, &eligible, Exec::Parallel)
            .map_err(|e| format!("{}: {e}", b.name))?;
        ensure(weak.holds(), || format!("{}: weak {weak:?}", b.name))?;
        checked += strong.checked + weak.checked;
    }
    Ok(format!("{checked} verifier calls over the corpus"))
}

fn determinism(_: &mut Ctx) -> Result<String, String> {
    let run = || {
        let mut out = Vec::new();
        for b in corpus::all() {
            for (mode, alg) in [
                (AtomicKind::Strong, StrongAlgorithm::Baseline),
                (AtomicKind::Strong, StrongAlgorithm::Optimized),
                (AtomicKind::Weak, StrongAlgorithm::Optimized),
            ] {
                let o = fix(&b.source, mode, alg);
                let report =
                    serde_json::to_string(&o.report.without_timing()).expect("reports serialize");
                out.push((b.name.clone(), report, o.rendered));
            }
        }
        out
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        ensure(x == y, || format!("{} differs between runs", x.0))?;
    }
    ensure(a.len() == b.len(), || "run lengths differ".into())?;
    Ok(format!("{} reports identical", a.len()))
}

fn main() {
    let criteria: [(&str, Check); 12] = [
        ("banking strong fix", banking_strong),
        ("banking weak fix", banking_weak),
        ("banking corpus variant strong fix", banking_corpus_strong),
        ("parameterized fix sizes", parameterized_sizes),
        ("program-size sweep", program_size_sweep),
        ("solution-size sweep", solution_size_sweep),
        ("hitting-set solver vs brute force", hitting_set_oracle),
        ("verifier vs naive enumeration", verifier_oracle),
        ("constraint strength", constraint_strength),
        ("algorithm agreement", algorithm_agreement),
        ("minimality", minimality),
        ("determinism", determinism),
    ];
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
