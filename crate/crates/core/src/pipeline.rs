//! The end-to-end repair pipeline and its JSON report: parse, instrument,
//! infer, rebuild regions, render.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use crate::cfg::{build_cfg, lexicalize_all};
use crate::inference::{
    fix_strong, fix_strong_baseline, fix_weak, InferenceError, RepairRun, TraceSink,
};
use crate::lang::{
    guard_yields, insert_yields, instrument_weak, parse, render_fix, AtomicKind, Fix, FixStats,
    LangError, Location, Program, YieldPoint,
};
use crate::verifier::{Budget, Trace, VerifError, Verifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrongAlgorithm {
    Baseline,
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub mode: AtomicKind,
    /// Loop used for the strong pass. Weak mode always starts from the
    /// optimized strong pass.
    pub algorithm: StrongAlgorithm,
    pub lexical: bool,
    pub budget: Budget,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: AtomicKind::Strong,
            algorithm: StrongAlgorithm::Optimized,
            lexical: false,
            budget: Budget::default(),
        }
    }
}

impl RunConfig {
    /// The loop that actually runs for the strong pass.
    pub fn effective_algorithm(&self) -> StrongAlgorithm {
        match self.mode {
            AtomicKind::Weak => StrongAlgorithm::Optimized,
            AtomicKind::Strong => self.algorithm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Fixed,
    AlreadyCorrect,
    SequentialBug,
    BudgetExceeded,
    Unrepairable,
    Error,
}

impl Status {
    /// Process exit code for this outcome.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Fixed | Status::AlreadyCorrect => 0,
            Status::SequentialBug => 2,
            Status::BudgetExceeded => 3,
            Status::Unrepairable | Status::Error => 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub queries: usize,
    pub traces: usize,
    pub fix_size: usize,
    /// Queries of the strong pass and of the weak extension.
    pub strong_queries: usize,
    pub weak_queries: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
    /// The failing assertion, when there is one.
    pub loc: Option<Location>,
}

/// The machine-readable result of one run. Always serializable, whatever
/// happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub mode: AtomicKind,
    pub algorithm: StrongAlgorithm,
    pub status: Status,
    pub guards: Vec<YieldPoint>,
    pub fix: Option<Fix>,
    pub stats: Stats,
    pub error: Option<ErrorInfo>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// The report with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Report {
        let mut r = self.clone();
        r.stats.elapsed_ms = 0;
        r
    }
}

/// Everything a run produced, for callers that need more than the report.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    /// The source with its atomic sections, when a fix was found.
    pub rendered: Option<String>,
    /// The guard-instrumented program (when parsing succeeded).
    pub instrumented: Option<Program>,
    pub strong: Option<RepairRun>,
    pub weak: Option<RepairRun>,
    /// The trace behind a failure (sequential bug, unrepairable).
    pub failure_trace: Option<Trace>,
}

/// Parse and instrument a source for strong-mode analysis.
pub fn prepare(source: &str) -> Result<Program, LangError> {
    Ok(guard_yields(&insert_yields(&parse(source)?)).0)
}

enum Failure {
    Lang(LangError),
    Inference(InferenceError),
}

impl From<LangError> for Failure {
    fn from(e: LangError) -> Self {
        Failure::Lang(e)
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        Failure::Inference(e)
    }
}

impl From<VerifError> for Failure {
    fn from(e: VerifError) -> Self {
        Failure::Inference(e.into())
    }
}

/// Run the whole pipeline on `source`.
pub fn run_fix(source: &str, config: &RunConfig, sink: &mut impl TraceSink) -> Outcome {
    let start = Instant::now();
    let mut out = Outcome {
        report: Report {
            mode: config.mode,
            algorithm: config.effective_algorithm(),
            status: Status::Error,
            guards: Vec::new(),
            fix: None,
            stats: Stats::default(),
            error: None,
        },
        rendered: None,
        instrumented: None,
        strong: None,
        weak: None,
        failure_trace: None,
    };
    let mut counting = Counting {
        inner: sink,
        traces: 0,
    };
    let result = run_inner(source, config, &mut counting, &mut out);
    let seen = counting.traces;
    if let Err(f) = result {
        let (status, kind, message, trace) = match f {
            Failure::Lang(e) => (Status::Error, "language", e.to_string(), None),
            Failure::Inference(e) => {
                let trace = e.trace().cloned();
                let (status, kind) = match &e {
                    InferenceError::SequentialBug(_) => (Status::SequentialBug, "sequential_bug"),
                    InferenceError::Unrepairable(_) => (Status::Unrepairable, "unrepairable"),
                    InferenceError::Budget(_) => (Status::BudgetExceeded, "budget_exceeded"),
                    InferenceError::Mhs(_) => (Status::Error, "hitting_set"),
                };
                (status, kind, e.to_string(), trace)
            }
        };
        out.report.status = status;
        out.report.fix = None;
        out.report.error = Some(ErrorInfo {
            kind,
            message,
            loc: trace.as_ref().map(|t| t.failure.loc.clone()),
        });
        out.failure_trace = trace;
    }
    let stats = &mut out.report.stats;
    stats.strong_queries = out.strong.as_ref().map_or(0, |r| r.queries);
    stats.weak_queries = out.weak.as_ref().map_or(0, |r| r.queries);
    stats.queries = stats.strong_queries + stats.weak_queries;
    stats.traces = seen;
    if out.report.error.is_some() && out.instrumented.is_some() {
        // The aborted loop's processed traces plus the query that failed.
        let finished = out.strong.as_ref().map_or(0, |r| r.traces.len());
        let aborted = seen - finished;
        match out.strong {
            None => stats.strong_queries = aborted + 1,
            Some(_) if config.mode == AtomicKind::Weak && out.weak.is_none() => {
                stats.weak_queries = aborted + 1
            }
            Some(_) => {}
        }
        stats.queries = stats.strong_queries + stats.weak_queries;
    }
    stats.fix_size = out.report.fix.as_ref().map_or(0, |f| f.chosen.len());
    stats.elapsed_ms = start.elapsed().as_millis() as u64;
    if let Some(fix) = &mut out.report.fix {
        fix.stats = FixStats {
            queries: stats.queries,
            traces: stats.traces,
            elapsed_ms: stats.elapsed_ms,
        };
    }
    out
}

/// Counts traces on their way to the caller's sink, so that aborted runs
/// still report how far they got.
struct Counting<'a, S> {
    inner: &'a mut S,
    traces: usize,
}

impl<S: TraceSink> TraceSink for Counting<'_, S> {
    fn trace(&mut self, run: &RepairRun, t: &Trace) {
        self.traces += 1;
        self.inner.trace(run, t);
    }
}

/// Stores partial results in `out` as it goes so that failures still report
/// what was learned.
fn run_inner(
    source: &str,
    config: &RunConfig,
    sink: &mut impl TraceSink,
    out: &mut Outcome,
) -> Result<(), Failure> {
    let original = parse(source)?;
    let strong_prog = guard_yields(&insert_yields(&original)).0;
    out.report.guards = strong_prog.yield_points();
    out.instrumented = Some(strong_prog.clone());

    let verifier = Verifier::new(&strong_prog, config.budget);
    let strong = match config.effective_algorithm() {
        StrongAlgorithm::Baseline => fix_strong_baseline(&mut &verifier, sink),
        StrongAlgorithm::Optimized => fix_strong(&mut &verifier, sink),
    };
    let strong = strong?;
    let s = strong.chosen.clone();
    out.strong = Some(strong);

    let (kind, chosen) = match config.mode {
        AtomicKind::Strong => (AtomicKind::Strong, s.clone()),
        AtomicKind::Weak => {
            let weak_verifier = Verifier::new(&instrument_weak(&strong_prog), config.budget);
            let weak = fix_weak(&mut &weak_verifier, &s, sink)?;
            let chosen = weak.chosen.clone();
            out.weak = Some(weak);
            (AtomicKind::Weak, chosen)
        }
    };

    let cfg = build_cfg(&strong_prog);
    let mut regions = cfg.regions_for(&chosen);
    if config.lexical {
        regions = lexicalize_all(&cfg, &regions)?;
    }
    let fix = Fix {
        kind,
        strong_core: match kind {
            AtomicKind::Strong => BTreeSet::new(),
            AtomicKind::Weak => s,
        },
        chosen,
        regions,
        stats: FixStats::default(),
    };
    out.rendered = Some(render_fix(&original, &strong_prog, &fix)?);
    out.report.status = if fix.chosen.is_empty() {
        Status::AlreadyCorrect
    } else {
        Status::Fixed
    };
    out.report.fix = Some(fix);
    Ok(())
}
