//! Benchmark suites: run every pipeline per program, compare with the
//! expected-fix sidecars and print a comparison table.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::corpus::Benchmark;
use crate::inference::fix_strong_baseline;
use crate::lang::{AtomicKind, Region};
use crate::par::Exec;
use crate::pipeline::{prepare, run_fix, Outcome, RunConfig, Status};
use crate::verifier::{Budget, Verifier};

/// Expected fix of one mode. Regions are sets of `proc:line` strings so that
/// sidecars do not depend on guard numbering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedFix {
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<BTreeSet<String>>>,
}

/// Contents of a `<name>.expected.json` sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expected {
    pub strong: ExpectedFix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak: Option<ExpectedFix>,
}

pub fn region_lines(regions: &[Region]) -> Vec<BTreeSet<String>> {
    let mut out: Vec<BTreeSet<String>> = regions
        .iter()
        .map(|r| {
            r.locations
                .iter()
                .map(|l| format!("{}:{}", l.proc, l.line))
                .collect()
        })
        .collect();
    out.sort();
    out
}

/// A benchmark with its optional sidecar.
#[derive(Debug, Clone)]
pub struct Case {
    pub bench: Benchmark,
    pub expected: Option<Expected>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Row {
    pub name: String,
    /// Guarded yields in the instrumented program.
    pub yields: usize,
    pub strong_size: Option<usize>,
    pub weak_size: Option<usize>,
    pub queries_baseline: Option<usize>,
    pub queries_optimized: Option<usize>,
    pub queries_weak: Option<usize>,
    pub elapsed_ms: u64,
    /// Sidecar mismatches; empty when all checks pass.
    pub mismatches: Vec<String>,
    pub has_sidecar: bool,
    pub errors: Vec<String>,
}

impl Row {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty() && self.errors.is_empty()
    }
}

fn fix_of(o: &Outcome) -> Result<(usize, Vec<BTreeSet<String>>), String> {
    match (&o.report.status, &o.report.fix) {
        (Status::Fixed | Status::AlreadyCorrect, Some(f)) => {
            Ok((f.chosen.len(), region_lines(&f.regions)))
        }
        _ => Err(o
            .report
            .error
            .as_ref()
            .map_or_else(|| "no fix".to_string(), |e| e.message.clone())),
    }
}

fn compare(
    mode: &str,
    got: &(usize, Vec<BTreeSet<String>>),
    want: &ExpectedFix,
    out: &mut Vec<String>,
) {
    if got.0 != want.size {
        out.push(format!("{mode} size {} (expected {})", got.0, want.size));
    }
    if let Some(regions) = &want.regions {
        let mut want = regions.clone();
        want.sort();
        if got.1 != want {
            out.push(format!("{mode} regions {:?} (expected {want:?})", got.1));
        }
    }
}

/// Run the baseline, optimized, weak and lexical pipelines on one program.
pub fn run_case(case: &Case, budget: Budget) -> Row {
    let start = std::time::Instant::now();
    let b = &case.bench;
    let mut row = Row {
        name: b.name.clone(),
        yields: 0,
        strong_size: None,
        weak_size: None,
        queries_baseline: None,
        queries_optimized: None,
        queries_weak: None,
        elapsed_ms: 0,
        mismatches: Vec::new(),
        has_sidecar: case.expected.is_some(),
        errors: Vec::new(),
    };
    let strong_cfg = RunConfig {
        budget,
        ..RunConfig::default()
    };
    let strong = run_fix(&b.source, &strong_cfg, &mut ());
    row.yields = strong
        .report
        .guards
        .iter()
        .filter(|y| y.id.is_some())
        .count();
    row.queries_optimized = Some(strong.report.stats.strong_queries);
    let strong_fix = fix_of(&strong);
    match &strong_fix {
        Ok((n, _)) => row.strong_size = Some(*n),
        Err(e) => row.errors.push(format!("strong: {e}")),
    }

    match prepare(&b.source) {
        Ok(p) => match fix_strong_baseline(&mut &Verifier::new(&p, budget), &mut ()) {
            Ok(run) => {
                row.queries_baseline = Some(run.queries);
                if Some(run.chosen.len()) != row.strong_size {
                    row.mismatches.push(format!(
                        "baseline size {} differs from optimized {:?}",
                        run.chosen.len(),
                        row.strong_size
                    ));
                }
            }
            Err(e) => row.errors.push(format!("baseline: {e}")),
        },
        Err(e) => row.errors.push(format!("baseline: {e}")),
    }

    let weak = run_fix(
        &b.source,
        &RunConfig {
            mode: AtomicKind::Weak,
            ..strong_cfg
        },
        &mut (),
    );
    row.queries_weak = Some(weak.report.stats.weak_queries);
    let weak_fix = fix_of(&weak);
    match &weak_fix {
        Ok((n, _)) => row.weak_size = Some(*n),
        Err(e) => row.errors.push(format!("weak: {e}")),
    }

    let lexical = run_fix(
        &b.source,
        &RunConfig {
            lexical: true,
            ..strong_cfg
        },
        &mut (),
    );
    if let Err(e) = fix_of(&lexical) {
        row.errors.push(format!("lexical: {e}"));
    }

    if let Some(exp) = &case.expected {
        if let Ok(got) = &strong_fix {
            compare("strong", got, &exp.strong, &mut row.mismatches);
        }
        if let (Ok(got), Some(want)) = (&weak_fix, &exp.weak) {
            compare("weak", got, want, &mut row.mismatches);
        }
    }
    row.elapsed_ms = start.elapsed().as_millis() as u64;
    row
}

pub fn run_suite(cases: &[Case], budget: Budget, exec: Exec) -> Vec<Row> {
    exec.map(cases, |c| run_case(c, budget))
}

/// Every `*.mc` file of a directory, sorted by name, with its sidecar.
pub fn load_dir(dir: &Path) -> Result<Vec<Case>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading suite directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mc"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let source = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let sidecar = path.with_extension("expected.json");
            let expected = if sidecar.exists() {
                let text = std::fs::read_to_string(&sidecar)?;
                Some(
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", sidecar.display()))?,
                )
            } else {
                None
            };
            Ok(Case {
                bench: Benchmark { name, source },
                expected,
            })
        })
        .collect()
}

fn cell(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |n| n.to_string())
}

/// Fixed-width comparison table: solution sizes, query counts per loop,
/// time and sidecar verdict.
pub fn format_table(rows: &[Row]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:>6} {:>5} {:>5} {:>7} {:>7} {:>6} {:>9}  check",
        "benchmark", "#CS", "S", "W", "#Q(S1)", "#Q(S2)", "#Q(W)", "time(ms)"
    );
    for r in rows {
        let check = if !r.errors.is_empty() {
            format!("ERROR {}", r.errors.join("; "))
        } else if !r.mismatches.is_empty() {
            format!("MISMATCH {}", r.mismatches.join("; "))
        } else if r.has_sidecar {
            "ok".to_string()
        } else {
            "no sidecar".to_string()
        };
        let _ = writeln!(
            s,
            "{:<24} {:>6} {:>5} {:>5} {:>7} {:>7} {:>6} {:>9}  {}",
            r.name,
            r.yields,
            cell(r.strong_size),
            cell(r.weak_size),
            cell(r.queries_baseline),
            cell(r.queries_optimized),
            cell(r.queries_weak),
            r.elapsed_ms,
            check
        );
    }
    s
}
