//! The repair loops: baseline and optimized strong-atomicity inference, the
//! weak-atomicity extension, and brute-force minimality certification.

use std::collections::BTreeSet;
use std::time::Instant;

use itertools::Itertools;
use serde::Serialize;
use thiserror::Error;

use crate::lang::{AtomicKind, GuardId};
use crate::mhs::{solve_mhs, HittingInstance, MhsError};
use crate::par::Exec;
use crate::verifier::{
    cs_of, wcs_of, wcs_restricted, Constraint, Trace, VerifError, VerifResult, Verifier,
};

/// Answers verification queries; the real one explores the program, test
/// doubles replay recorded traces.
pub trait Oracle {
    fn query(&mut self, phi: &Constraint) -> Result<VerifResult, VerifError>;
}

impl Oracle for &Verifier {
    fn query(&mut self, phi: &Constraint) -> Result<VerifResult, VerifError> {
        self.verify(phi)
    }
}

impl Oracle for Verifier {
    fn query(&mut self, phi: &Constraint) -> Result<VerifResult, VerifError> {
        self.verify(phi)
    }
}

/// Returns the scripted traces in order, then `Correct`. Every constraint it
/// is asked about is recorded.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    traces: Vec<Trace>,
    next: usize,
    pub asked: Vec<Constraint>,
}

impl ScriptedOracle {
    pub fn new(traces: Vec<Trace>) -> Self {
        ScriptedOracle {
            traces,
            next: 0,
            asked: Vec::new(),
        }
    }
}

impl Oracle for ScriptedOracle {
    fn query(&mut self, phi: &Constraint) -> Result<VerifResult, VerifError> {
        self.asked.push(phi.clone());
        let r = match self.traces.get(self.next) {
            Some(t) => VerifResult::Bug(t.clone()),
            None => VerifResult::Correct,
        };
        self.next += 1;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Baseline,
    Optimized,
    Weak,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Optimized => "optimized",
            Algorithm::Weak => "weak",
        }
    }
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("the program fails without any context switch (sequential bug): {}", .0.failure)]
    SequentialBug(Box<Trace>),
    #[error("no weak atomic section can exclude the failing trace: {}", .0.failure)]
    Unrepairable(Box<Trace>),
    #[error(transparent)]
    Budget(#[from] VerifError),
    #[error(transparent)]
    Mhs(#[from] MhsError),
}

impl InferenceError {
    pub fn trace(&self) -> Option<&Trace> {
        match self {
            InferenceError::SequentialBug(t) | InferenceError::Unrepairable(t) => Some(t),
            _ => None,
        }
    }
}

/// Everything one repair loop saw and produced.
#[derive(Debug, Clone)]
pub struct RepairRun {
    pub algorithm: Algorithm,
    pub traces: Vec<Trace>,
    pub collection: HittingInstance,
    pub queries: usize,
    /// The constraint after each processed trace.
    pub phis: Vec<Constraint>,
    /// Guards already fixed before the loop started (the strong fix, for the
    /// weak extension).
    pub strong_core: BTreeSet<GuardId>,
    pub chosen: BTreeSet<GuardId>,
    pub elapsed_ms: u64,
}

impl RepairRun {
    fn new(algorithm: Algorithm, strong_core: BTreeSet<GuardId>) -> Self {
        RepairRun {
            algorithm,
            traces: Vec::new(),
            collection: HittingInstance::default(),
            queries: 0,
            phis: Vec::new(),
            chosen: strong_core.clone(),
            strong_core,
            elapsed_ms: 0,
        }
    }

    pub fn kind(&self) -> AtomicKind {
        match self.algorithm {
            Algorithm::Weak => AtomicKind::Weak,
            _ => AtomicKind::Strong,
        }
    }
}

/// Observes each trace as a loop processes it (progress reporting, dumps).
pub trait TraceSink {
    fn trace(&mut self, run: &RepairRun, t: &Trace);
}

impl TraceSink for () {
    fn trace(&mut self, _: &RepairRun, _: &Trace) {}
}

fn switch_set(t: Trace) -> Result<(BTreeSet<GuardId>, Trace), InferenceError> {
    let cs = cs_of(&t);
    if cs.is_empty() {
        return Err(InferenceError::SequentialBug(Box::new(t)));
    }
    Ok((cs, t))
}

/// Each trace adds the clause "one of its switches is disabled".
pub fn fix_strong_baseline(
    oracle: &mut impl Oracle,
    sink: &mut impl TraceSink,
) -> Result<RepairRun, InferenceError> {
    let start = Instant::now();
    let mut run = RepairRun::new(Algorithm::Baseline, BTreeSet::new());
    let mut phi = Constraint::truth();
    loop {
        run.queries += 1;
        match oracle.query(&phi)? {
            VerifResult::Correct => break,
            VerifResult::Bug(t) => {
                let (cs, t) = switch_set(t)?;
                phi.add_clause(cs.clone()).expect("switch set is non-empty");
                run.collection.push(cs);
                run.phis.push(phi.clone());
                sink.trace(&run, &t);
                run.traces.push(t);
            }
        }
    }
    run.chosen = solve_mhs(&run.collection)?;
    run.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok(run)
}

/// Each trace's switch set joins the collection; the next query disables a
/// minimum hitting set of everything seen.
pub fn fix_strong(
    oracle: &mut impl Oracle,
    sink: &mut impl TraceSink,
) -> Result<RepairRun, InferenceError> {
    let start = Instant::now();
    let mut run = RepairRun::new(Algorithm::Optimized, BTreeSet::new());
    let mut phi = Constraint::truth();
    loop {
        run.queries += 1;
        match oracle.query(&phi)? {
            VerifResult::Correct => break,
            VerifResult::Bug(t) => {
                let (cs, t) = switch_set(t)?;
                run.collection.push(cs);
                run.chosen = solve_mhs(&run.collection)?;
                phi = Constraint::disable(&run.chosen);
                run.phis.push(phi.clone());
                sink.trace(&run, &t);
                run.traces.push(t);
            }
        }
    }
    run.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok(run)
}

/// Extend the strong fix `s` so that it also holds when the sections only
/// exclude each other. `oracle` must answer for the weak-instrumented
/// program.
pub fn fix_weak(
    oracle: &mut impl Oracle,
    s: &BTreeSet<GuardId>,
    sink: &mut impl TraceSink,
) -> Result<RepairRun, InferenceError> {
    let start = Instant::now();
    let mut run = RepairRun::new(Algorithm::Weak, s.clone());
    let mut phi = Constraint::disable(s);
    loop {
        run.queries += 1;
        match oracle.query(&phi)? {
            VerifResult::Correct => break,
            VerifResult::Bug(t) => {
                if wcs_of(&t).is_empty() {
                    return Err(InferenceError::SequentialBug(Box::new(t)));
                }
                let w = wcs_restricted(&t, s);
                // Nothing new to disable means the loop could not progress.
                if w.is_subset(&run.chosen) {
                    return Err(InferenceError::Unrepairable(Box::new(t)));
                }
                run.collection.push(w);
                let extra = solve_mhs(&run.collection)?;
                run.chosen = s.union(&extra).copied().collect();
                phi = Constraint::disable(&run.chosen);
                run.phis.push(phi.clone());
                sink.trace(&run, &t);
                run.traces.push(t);
            }
        }
    }
    run.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok(run)
}

/// Result of a minimality check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Certificate {
    pub kind: AtomicKind,
    /// Verifier calls made.
    pub checked: usize,
    /// Whether the exhaustive smaller-size sweep ran (strong mode); false
    /// when it fell back to removal checks.
    pub exhaustive: bool,
    /// A strictly smaller (strong) or reduced (weak) set that still works.
    pub counterexample: Option<BTreeSet<GuardId>>,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("{candidates} candidate sets exceed the enumeration limit; removal checks only: {partial:?}")]
    EnumerationTooLarge {
        candidates: u128,
        partial: Certificate,
    },
    #[error(transparent)]
    Budget(#[from] VerifError),
}

pub const ENUMERATION_LIMIT: u128 = 100_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Check that `chosen` cannot be improved. Strong: no set of `|chosen| - 1`
/// eligible guards (hence, by monotonicity, no smaller set) fixes the
/// program. Weak: dropping any single element of `chosen` lets a bug back
/// in. `verifier` must match the mode's instrumentation. Candidate checks
/// are independent and may run in parallel; the reported counterexample is
/// always the first one in enumeration order.
pub fn certify_minimality(
    verifier: &Verifier,
    kind: AtomicKind,
    chosen: &BTreeSet<GuardId>,
    eligible: &BTreeSet<GuardId>,
    exec: Exec,
) -> Result<Certificate, CertifyError> {
    let mut cert = Certificate {
        kind,
        checked: 0,
        exhaustive: true,
        counterexample: None,
    };
    if chosen.is_empty() {
        return Ok(cert);
    }
    let removals: Vec<BTreeSet<GuardId>> = chosen
        .iter()
        .map(|q| {
            let mut rest = chosen.clone();
            rest.remove(q);
            rest
        })
        .collect();
    let candidates = match kind {
        AtomicKind::Weak => removals,
        AtomicKind::Strong => {
            let k = chosen.len() - 1;
            let count = binomial(eligible.len(), k);
            if count > ENUMERATION_LIMIT {
                cert.exhaustive = false;
                search(verifier, &removals, &mut cert, exec)?;
                return Err(CertifyError::EnumerationTooLarge {
                    candidates: count,
                    partial: cert,
                });
            }
            eligible
                .iter()
                .copied()
                .combinations(k)
                .map(|c| c.into_iter().collect())
                .collect()
        }
    };
    search(verifier, &candidates, &mut cert, exec)?;
    Ok(cert)
}

/// Record the first candidate whose disabling makes the program correct.
fn search(
    verifier: &Verifier,
    candidates: &[BTreeSet<GuardId>],
    cert: &mut Certificate,
    exec: Exec,
) -> Result<(), VerifError> {
    let verdicts = exec.map(candidates, |set| verifier.verify(&Constraint::disable(set)));
    cert.checked += candidates.len();
    for (set, verdict) in candidates.iter().zip(verdicts) {
        if verdict? == VerifResult::Correct {
            cert.counterexample = Some(set.clone());
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Location;
    use crate::verifier::{Event, Failure};

    fn g(ids: &[u32]) -> BTreeSet<GuardId> {
        ids.iter().map(|&i| GuardId(i)).collect()
    }

    /// A two-thread trace switching at each guard in `switches` in turn.
    fn trace_switching(switches: &[u32]) -> Trace {
        let loc = |i: usize| Location {
            proc: "p".into(),
            index: i,
            line: i + 1,
        };
        let mut events = Vec::new();
        for (i, &s) in switches.iter().enumerate() {
            events.push(Event {
                thread: i % 2,
                loc: loc(i),
                is_yield: true,
                guard: Some(GuardId(s)),
                switch_to: Some((i + 1) % 2),
            });
        }
        let n = switches.len();
        events.push(Event {
            thread: n % 2,
            loc: loc(n),
            is_yield: false,
            guard: None,
            switch_to: None,
        });
        Trace {
            events,
            failure: Failure {
                thread: n % 2,
                loc: loc(n),
                message: "assertion failed".into(),
            },
        }
    }

    #[test]
    fn correct_program_needs_one_query() {
        for f in [fix_strong_baseline, fix_strong] {
            let run = f(&mut ScriptedOracle::new(vec![]), &mut ()).unwrap();
            assert_eq!(run.queries, 1);
            assert!(run.chosen.is_empty());
        }
    }

    #[test]
    fn optimized_converges_on_common_guard() {
        let traces = vec![trace_switching(&[0, 4]), trace_switching(&[0, 7])];
        let mut o = ScriptedOracle::new(traces.clone());
        let run = fix_strong(&mut o, &mut ()).unwrap();
        assert_eq!(run.chosen, g(&[0]));
        assert_eq!(run.queries, 3);
        assert_eq!(o.asked[1], Constraint::disable(&g(&[0])));
        let base = fix_strong_baseline(&mut ScriptedOracle::new(traces), &mut ()).unwrap();
        assert_eq!(base.chosen, g(&[0]));
        for (a2, a1) in run.phis.iter().zip(&base.phis) {
            assert!(a2.implies(a1));
        }
    }

    #[test]
    fn serial_failure_is_a_sequential_bug() {
        let err = fix_strong(
            &mut ScriptedOracle::new(vec![trace_switching(&[])]),
            &mut (),
        )
        .unwrap_err();
        assert!(matches!(err, InferenceError::SequentialBug(_)));
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(30, 0), 1);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(40, 20), 137_846_528_820);
    }
}
