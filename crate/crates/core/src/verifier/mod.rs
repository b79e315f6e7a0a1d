//! Exhaustive bounded exploration of cooperative interleavings under a
//! constraint on which guarded yields may switch, plus trace analyses.

mod analysis;
mod exec;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{GuardId, Location, Program};
pub use analysis::{cs_of, lifespan, lifespan_range, wcs_of, wcs_restricted};
use exec::{Compiled, State, Step};

/// Conjunction of clauses over guards; each clause says "at least one of
/// these guards is false".
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    clauses: Vec<BTreeSet<GuardId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("constraint clauses must be non-empty")]
pub struct EmptyClause;

impl Constraint {
    /// The trivially true constraint.
    pub fn truth() -> Self {
        Self::default()
    }

    /// One unit clause per guard.
    pub fn disable<'a>(guards: impl IntoIterator<Item = &'a GuardId>) -> Self {
        let set: BTreeSet<GuardId> = guards.into_iter().copied().collect();
        Constraint {
            clauses: set.into_iter().map(|g| BTreeSet::from([g])).collect(),
        }
    }

    pub fn add_clause(&mut self, clause: BTreeSet<GuardId>) -> Result<(), EmptyClause> {
        if clause.is_empty() {
            return Err(EmptyClause);
        }
        if !self.clauses.contains(&clause) {
            self.clauses.push(clause);
        }
        Ok(())
    }

    pub fn clauses(&self) -> &[BTreeSet<GuardId>] {
        &self.clauses
    }

    /// Guards forced false by unit clauses.
    pub fn units(&self) -> BTreeSet<GuardId> {
        self.clauses
            .iter()
            .filter(|c| c.len() == 1)
            .flat_map(|c| c.iter().copied())
            .collect()
    }

    /// Whether switching at exactly the guards of `switched` is admissible.
    pub fn admits(&self, switched: &BTreeSet<GuardId>) -> bool {
        self.clauses.iter().all(|c| !c.is_subset(switched))
    }

    /// Logical implication between all-negative CNFs: every clause of
    /// `other` must contain some clause of `self`.
    pub fn implies(&self, other: &Constraint) -> bool {
        other
            .clauses
            .iter()
            .all(|c2| self.clauses.iter().any(|c1| c1.is_subset(c2)))
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clauses.is_empty() {
            return write!(f, "true");
        }
        let parts: Vec<String> = self
            .clauses
            .iter()
            .map(|c| {
                let lits: Vec<String> = c.iter().map(|g| format!("!{g}")).collect();
                if lits.len() == 1 {
                    lits[0].clone()
                } else {
                    format!("({})", lits.join(" || "))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" && "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// Total instructions executed across the whole exploration.
    pub step_cap: u64,
    /// Maximum number of context switches taken at yields on one path.
    pub cs_bound: Option<u32>,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            step_cap: 1_000_000,
            cs_bound: None,
        }
    }
}

/// One executed statement of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub thread: usize,
    #[serde(flatten)]
    pub loc: Location,
    #[serde(rename = "yield")]
    pub is_yield: bool,
    /// Guard of the yield, when the event is a guarded yield.
    pub guard: Option<GuardId>,
    /// Thread scheduled right after this yield, when it switched away.
    pub switch_to: Option<usize>,
}

impl Event {
    /// The guard at which this event took a context switch.
    pub fn took_switch_at(&self) -> Option<GuardId> {
        match (self.is_yield, self.switch_to) {
            (true, Some(_)) => self.guard,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub thread: usize,
    pub loc: Location,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {} (thread {})",
            self.message, self.loc, self.thread
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<Event>,
    pub failure: Failure,
}

impl Trace {
    /// JSON lines, one event per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

/// Read events in the dump format.
pub fn read_events(r: impl BufRead) -> Result<Vec<Event>, ReplayError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| ReplayError::Format(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| ReplayError::Format(i + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifResult {
    Correct,
    Bug(Trace),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifError {
    #[error("exploration budget of {0} steps exceeded; the program is correct only up to the explored bound")]
    BudgetExceeded(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("trace line {0}: {1}")]
    Format(usize, String),
    #[error("event {index}: expected thread {thread} at {expected}, execution reached {actual}")]
    Diverged {
        index: usize,
        thread: usize,
        expected: Location,
        actual: String,
    },
    #[error("trace ends without reaching a failure")]
    NoFailure,
}

/// Statistics of one exploration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExploreStats {
    pub steps: u64,
    pub states: usize,
}

/// A verifier bound to one (instrumented) program.
pub struct Verifier {
    code: Compiled,
    budget: Budget,
}

impl Verifier {
    pub fn new(p: &Program, budget: Budget) -> Self {
        Verifier {
            code: exec::compile(p),
            budget,
        }
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn verify(&self, phi: &Constraint) -> Result<VerifResult, VerifError> {
        self.verify_with_stats(phi).map(|(r, _)| r)
    }

    pub fn verify_with_stats(
        &self,
        phi: &Constraint,
    ) -> Result<(VerifResult, ExploreStats), VerifError> {
        let units = phi.units();
        let relevant: BTreeSet<GuardId> = phi
            .clauses()
            .iter()
            .filter(|c| c.len() > 1)
            .flat_map(|c| c.iter().copied())
            .collect();
        let mut ex = Explorer {
            code: &self.code,
            budget: self.budget,
            units,
            relevant,
            clauses: phi
                .clauses()
                .iter()
                .filter(|c| c.len() > 1)
                .cloned()
                .collect(),
            visited: HashSet::new(),
            events: Vec::new(),
            steps: 0,
        };
        let st = self.code.initial_state();
        let res = ex.run(st, 0, &mut BTreeSet::new(), 0)?;
        let stats = ExploreStats {
            steps: ex.steps,
            states: ex.visited.len(),
        };
        Ok((
            match res {
                Some(failure) => VerifResult::Bug(Trace {
                    events: ex.events,
                    failure,
                }),
                None => VerifResult::Correct,
            },
            stats,
        ))
    }

    /// Re-execute the schedule given by `events`. Threads change either at
    /// a yield that switched (its `switch_to`) or because the running thread
    /// finished or blocked without further visible events; a yield followed
    /// by another thread's event and lacking `switch_to` is read as a
    /// switch when the thread could not have finished silently. Guard values
    /// (for weak instrumentation) come from `phi`'s unit clauses.
    pub fn replay(&self, phi: &Constraint, events: &[Event]) -> Result<Trace, ReplayError> {
        let disabled = phi.units();
        let mut st = self.code.initial_state();
        let mut steps = 0u64;
        let mut out: Vec<Event> = Vec::new();
        // Whether the last yield executed may switch under `phi`.
        let mut may_switch = false;
        for (i, ev) in events.iter().enumerate() {
            let diverged = |actual: String| ReplayError::Diverged {
                index: i,
                thread: ev.thread,
                expected: ev.loc.clone(),
                actual,
            };
            if let (Some(prev), Some(given)) =
                (out.last_mut(), i.checked_sub(1).map(|j| &events[j]))
            {
                if prev.thread != ev.thread {
                    let target = match (prev.is_yield, given.switch_to) {
                        (true, Some(u)) => Some(u),
                        (true, None) => {
                            let mut probe = st.clone();
                            let mut n = 0;
                            match self.drain(&mut probe, prev.thread, &disabled, &mut n) {
                                Ok(()) => {
                                    st = probe;
                                    steps += n;
                                    None
                                }
                                Err(_) => Some(ev.thread),
                            }
                        }
                        (false, _) => {
                            self.drain(&mut st, prev.thread, &disabled, &mut steps)
                                .map_err(&diverged)?;
                            None
                        }
                    };
                    if let Some(u) = target {
                        if !may_switch {
                            return Err(diverged(format!(
                                "a switch the constraint forbids at {}",
                                prev.loc
                            )));
                        }
                        if u >= st.threads.len() {
                            return Err(diverged(format!("switch to missing thread {u}")));
                        }
                        prev.switch_to = Some(u);
                        if u != ev.thread {
                            // The switched-to thread blocked or ended at once.
                            self.drain(&mut st, u, &disabled, &mut steps)
                                .map_err(&diverged)?;
                        }
                    }
                }
            }
            if ev.thread >= st.threads.len() {
                return Err(diverged("a thread that does not exist".into()));
            }
            let step = self.code.step(&mut st, ev.thread, &disabled, &mut steps);
            let (loc, is_yield, guard) = match step {
                Step::Event(loc) => (loc, false, None),
                Step::Yield {
                    loc,
                    guard,
                    conditional,
                } => {
                    let disabled_here = conditional && guard.is_some_and(|g| disabled.contains(&g));
                    may_switch = !disabled_here && !st.threads[ev.thread].in_satomic();
                    (loc, true, guard)
                }
                Step::Failed { loc, message } => {
                    if loc != ev.loc {
                        return Err(diverged(loc.to_string()));
                    }
                    out.push(Event {
                        thread: ev.thread,
                        loc: loc.clone(),
                        is_yield: false,
                        guard: None,
                        switch_to: None,
                    });
                    return Ok(Trace {
                        events: out,
                        failure: Failure {
                            thread: ev.thread,
                            loc,
                            message,
                        },
                    });
                }
                other => return Err(diverged(format!("{other:?}"))),
            };
            if loc != ev.loc {
                return Err(diverged(loc.to_string()));
            }
            out.push(Event {
                thread: ev.thread,
                loc,
                is_yield,
                guard,
                switch_to: None,
            });
        }
        Err(ReplayError::NoFailure)
    }

    /// Run thread `t` through instructions that produce no event until it
    /// finishes or blocks. Describes the visible outcome otherwise.
    fn drain(
        &self,
        st: &mut State,
        t: usize,
        disabled: &BTreeSet<GuardId>,
        steps: &mut u64,
    ) -> Result<(), String> {
        match self.code.step(st, t, disabled, steps) {
            Step::Done | Step::Blocked => Ok(()),
            Step::Event(loc) | Step::Yield { loc, .. } | Step::Failed { loc, .. } => {
                Err(format!("thread {t} continuing at {loc}"))
            }
            Step::Pruned => Err(format!("thread {t} exceeding a loop bound")),
        }
    }
}

/// Convenience: compile and verify in one call.
pub fn verify(p: &Program, phi: &Constraint, budget: Budget) -> Result<VerifResult, VerifError> {
    Verifier::new(p, budget).verify(phi)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Point {
    Yield(Option<GuardId>),
    Pick,
}

struct Explorer<'a> {
    code: &'a Compiled,
    budget: Budget,
    units: BTreeSet<GuardId>,
    /// Guards occurring in non-unit clauses: the part of the switch set the
    /// future depends on.
    relevant: BTreeSet<GuardId>,
    clauses: Vec<BTreeSet<GuardId>>,
    visited: HashSet<(State, usize, Point, Vec<GuardId>, u32)>,
    events: Vec<Event>,
    steps: u64,
}

impl Explorer<'_> {
    fn key(
        &self,
        st: &State,
        cur: usize,
        point: Point,
        switched: &BTreeSet<GuardId>,
        count: u32,
    ) -> (State, usize, Point, Vec<GuardId>, u32) {
        let rel: Vec<GuardId> = switched.intersection(&self.relevant).copied().collect();
        let count = if self.budget.cs_bound.is_some() {
            count
        } else {
            0
        };
        (st.clone(), cur, point, rel, count)
    }

    fn runnable(&self, st: &State, except: Option<usize>) -> Vec<usize> {
        (0..st.threads.len())
            .filter(|&u| Some(u) != except && self.code.runnable(st, u))
            .collect()
    }

    /// Depth-first search from `st` with thread `cur` scheduled. Returns the
    /// first failure in canonical order; `self.events` then holds its trace.
    fn run(
        &mut self,
        mut st: State,
        mut cur: usize,
        switched: &mut BTreeSet<GuardId>,
        count: u32,
    ) -> Result<Option<Failure>, VerifError> {
        loop {
            if self.steps > self.budget.step_cap {
                return Err(VerifError::BudgetExceeded(self.budget.step_cap));
            }
            match self.code.step(&mut st, cur, &self.units, &mut self.steps) {
                Step::Event(loc) => self.events.push(Event {
                    thread: cur,
                    loc,
                    is_yield: false,
                    guard: None,
                    switch_to: None,
                }),
                Step::Failed { loc, message } => {
                    self.events.push(Event {
                        thread: cur,
                        loc: loc.clone(),
                        is_yield: false,
                        guard: None,
                        switch_to: None,
                    });
                    return Ok(Some(Failure {
                        thread: cur,
                        loc,
                        message,
                    }));
                }
                Step::Pruned => return Ok(None),
                Step::Yield {
                    loc,
                    guard,
                    conditional,
                } => {
                    self.events.push(Event {
                        thread: cur,
                        loc,
                        is_yield: true,
                        guard,
                        switch_to: None,
                    });
                    let mark = self.events.len();
                    let in_atomic = st.threads[cur].in_satomic();
                    let mut may_switch = !in_atomic;
                    let mut records = None;
                    if let (Some(g), true) = (guard, conditional) {
                        if self.units.contains(&g) {
                            may_switch = false;
                        } else if !switched.contains(&g) {
                            records = Some(g);
                        }
                    }
                    if let Some(b) = self.budget.cs_bound {
                        if count >= b {
                            may_switch = false;
                        }
                    }
                    let targets = if may_switch {
                        self.runnable(&st, Some(cur))
                    } else {
                        Vec::new()
                    };
                    if targets.is_empty() {
                        continue;
                    }
                    if records.is_some_and(|g| {
                        switched.insert(g);
                        let bad = self.clauses.iter().any(|c| c.is_subset(switched));
                        switched.remove(&g);
                        bad
                    }) {
                        // Switching here would falsify a clause.
                        continue;
                    }
                    let key = self.key(&st, cur, Point::Yield(guard), switched, count);
                    if !self.visited.insert(key) {
                        return Ok(None);
                    }
                    for u in targets {
                        self.events[mark - 1].switch_to = Some(u);
                        if let Some(g) = records {
                            switched.insert(g);
                        }
                        let res = self.run(st.clone(), u, switched, count + 1);
                        if let Some(g) = records {
                            switched.remove(&g);
                        }
                        if res.as_ref().map_or(true, Option::is_some) {
                            return res;
                        }
                        self.events.truncate(mark);
                    }
                    self.events[mark - 1].switch_to = None;
                    // Fall through: continue without switching.
                }
                Step::Blocked | Step::Done => {
                    let targets = self.runnable(&st, None);
                    match targets.len() {
                        // Every thread finished, or the rest are stuck.
                        0 => return Ok(None),
                        1 => cur = targets[0],
                        _ => {
                            let key = self.key(&st, cur, Point::Pick, switched, count);
                            if !self.visited.insert(key) {
                                return Ok(None);
                            }
                            let mark = self.events.len();
                            for u in targets {
                                let res = self.run(st.clone(), u, switched, count);
                                if res.as_ref().map_or(true, Option::is_some) {
                                    return res;
                                }
                                self.events.truncate(mark);
                            }
                            return Ok(None);
                        }
                    }
                }
            }
        }
    }
}
