use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use atomfix::bench::{format_table, load_dir, run_suite, Case};
use atomfix::cfg::build_cfg;
use atomfix::corpus;
use atomfix::inference::{RepairRun, TraceSink};
use atomfix::lang::{instrument_weak, AtomicKind, GuardId};
use atomfix::mhs::{brute_force_mhs, solve_mhs, HittingInstance};
use atomfix::par::Exec;
use atomfix::pipeline::{prepare, run_fix, RunConfig, Status, StrongAlgorithm};
use atomfix::verifier::{read_events, Budget, Constraint, Trace, Verifier};

#[derive(Parser)]
#[command(
    name = "atomfix",
    version,
    about = "Repair cooperative concurrent programs with minimal atomic sections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strong,
    Weak,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    Baseline,
    Optimized,
}

#[derive(clap::Args)]
struct BudgetArgs {
    /// Total instructions the verifier may execute per query.
    #[arg(long, default_value_t = Budget::default().step_cap)]
    step_cap: u64,
    /// Maximum context switches per explored schedule (default: unbounded).
    #[arg(long)]
    cs_bound: Option<u32>,
}

impl BudgetArgs {
    fn budget(&self) -> Budget {
        Budget {
            step_cap: self.step_cap,
            cs_bound: self.cs_bound,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Infer atomic sections that make every assertion hold.
    Fix {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "strong")]
        mode: Mode,
        /// Loop for the strong pass (weak mode always uses the optimized one).
        #[arg(long, value_enum, default_value = "optimized")]
        algorithm: Algorithm,
        /// Grow regions to single-entry single-exit blocks.
        #[arg(long)]
        lexical: bool,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Write every counterexample trace as JSON lines into this directory.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
        /// Write the JSON report here (`-` for standard output).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the repaired source here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Print each counterexample as it is processed.
        #[arg(long, short)]
        verbose: bool,
        /// Debugging: write the control-flow graphs in Graphviz format.
        #[arg(long, hide = true)]
        debug_cfg_dot: Option<PathBuf>,
    },
    /// Run a benchmark suite: a directory of `.mc` files with
    /// `.expected.json` sidecars, or a built-in suite name.
    Bench {
        suite: String,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Run benchmarks one after another.
        #[arg(long)]
        sequential: bool,
        /// Also write the rows as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Minimum hitting set utilities.
    Mhs {
        #[command(subcommand)]
        command: MhsCommand,
    },
    /// Re-execute a dumped trace and report the failure it reaches.
    Replay {
        file: PathBuf,
        trace: PathBuf,
        /// Replay against the weak-instrumented program.
        #[arg(long, value_enum, default_value = "strong")]
        mode: Mode,
        /// Guards (1-based, as in `cs3`) treated as disabled.
        #[arg(long, value_delimiter = ',')]
        disable: Vec<u32>,
        #[command(flatten)]
        budget: BudgetArgs,
    },
}

#[derive(Subcommand)]
enum MhsCommand {
    /// Solve an instance given as one set per line of space-separated ids.
    Solve {
        file: PathBuf,
        /// Use exhaustive search instead of branch and bound.
        #[arg(long)]
        brute_force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Fix {
            file,
            mode,
            algorithm,
            lexical,
            budget,
            dump_trace,
            report,
            output,
            verbose,
            debug_cfg_dot,
        } => cmd_fix(
            &file,
            RunConfig {
                mode: match mode {
                    Mode::Strong => AtomicKind::Strong,
                    Mode::Weak => AtomicKind::Weak,
                },
                algorithm: match algorithm {
                    Algorithm::Baseline => StrongAlgorithm::Baseline,
                    Algorithm::Optimized => StrongAlgorithm::Optimized,
                },
                lexical,
                budget: budget.budget(),
            },
            dump_trace.as_deref(),
            report.as_deref(),
            output.as_deref(),
            verbose,
            debug_cfg_dot.as_deref(),
        ),
        Command::Bench {
            suite,
            budget,
            sequential,
            json,
        } => cmd_bench(&suite, budget.budget(), sequential, json.as_deref()),
        Command::Mhs {
            command: MhsCommand::Solve { file, brute_force },
        } => {
            let text =
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let inst: HittingInstance = text.parse()?;
            let h = if brute_force {
                brute_force_mhs(&inst)?
            } else {
                solve_mhs(&inst)?
            };
            println!(
                "{}",
                h.iter()
                    .map(|g| g.0.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            Ok(0)
        }
        Command::Replay {
            file,
            trace,
            mode,
            disable,
            budget,
        } => cmd_replay(&file, &trace, mode, &disable, budget.budget()),
    }
}

/// Prints progress to standard error and optionally dumps each trace.
struct Progress<'a> {
    dump: Option<&'a Path>,
    verbose: bool,
    error: Option<std::io::Error>,
}

impl TraceSink for Progress<'_> {
    fn trace(&mut self, run: &RepairRun, t: &Trace) {
        if self.verbose {
            eprintln!(
                "[{}] query {}: {} -> disabling {{{}}}",
                run.algorithm.name(),
                run.queries,
                t.failure,
                run.chosen
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        if let Some(dir) = self.dump {
            let name = format!("{}-{:03}.jsonl", run.algorithm.name(), run.traces.len() + 1);
            if let Err(e) = fs::write(dir.join(name), t.to_jsonl()) {
                self.error.get_or_insert(e);
            }
        }
    }
}

fn cmd_fix(
    file: &Path,
    config: RunConfig,
    dump: Option<&Path>,
    report_path: Option<&Path>,
    output: Option<&Path>,
    verbose: bool,
    dot: Option<&Path>,
) -> Result<u8> {
    let source = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    if let Some(dir) = dump {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut progress = Progress {
        dump,
        verbose,
        error: None,
    };
    let outcome = run_fix(&source, &config, &mut progress);
    if let Some(e) = progress.error {
        eprintln!("warning: could not write trace dump: {e}");
    }
    if let (Some(dir), Some(t)) = (dump, &outcome.failure_trace) {
        fs::write(dir.join("failure.jsonl"), t.to_jsonl())?;
    }
    if let (Some(path), Some(p)) = (dot, &outcome.instrumented) {
        fs::write(path, build_cfg(p).to_dot())?;
    }
    let report = &outcome.report;
    match report_path {
        Some(p) if p == Path::new("-") => println!("{}", report.to_json()),
        Some(p) => fs::write(p, report.to_json() + "\n")
            .with_context(|| format!("writing {}", p.display()))?,
        None => {}
    }
    match (&outcome.rendered, report.status) {
        (Some(text), _) => {
            match output {
                Some(p) => fs::write(p, text)?,
                None if report_path != Some(Path::new("-")) => print!("{text}"),
                None => {}
            }
            let fix = report.fix.as_ref().expect("rendered runs have a fix");
            if fix.chosen.is_empty() {
                eprintln!("already correct: no atomic section needed");
            } else {
                eprintln!(
                    "fix: {} yield(s) {{{}}} in {} region(s) after {} queries",
                    fix.chosen.len(),
                    fix.chosen
                        .iter()
                        .map(GuardId::to_string)
                        .collect::<Vec<_>>()
                        .join(", "),
                    fix.regions.len(),
                    report.stats.queries
                );
            }
        }
        (None, status) => {
            let err = report
                .error
                .as_ref()
                .map_or("unknown failure".to_string(), |e| e.message.clone());
            let what = match status {
                Status::SequentialBug => "sequential bug",
                Status::BudgetExceeded => "budget exceeded",
                Status::Unrepairable => "unrepairable",
                _ => "error",
            };
            eprintln!("{what}: {err}");
        }
    }
    Ok(report.status.exit_code() as u8)
}

fn cmd_bench(suite: &str, budget: Budget, sequential: bool, json: Option<&Path>) -> Result<u8> {
    let dir = Path::new(suite);
    let cases: Vec<Case> = if dir.is_dir() {
        load_dir(dir)?
    } else if let Some(benches) = corpus::suite(suite) {
        benches
            .into_iter()
            .map(|bench| Case {
                bench,
                expected: None,
            })
            .collect()
    } else {
        bail!(
            "`{suite}` is neither a directory nor a built-in suite ({})",
            corpus::SUITES.join(", ")
        );
    };
    let exec = if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let rows = run_suite(&cases, budget, exec);
    print!("{}", format_table(&rows));
    if let Some(p) = json {
        fs::write(p, serde_json::to_string_pretty(&rows)? + "\n")?;
    }
    Ok(if rows.iter().all(|r| r.ok()) { 0 } else { 1 })
}

fn cmd_replay(
    file: &Path,
    trace: &Path,
    mode: Mode,
    disable: &[u32],
    budget: Budget,
) -> Result<u8> {
    let source = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let mut program = prepare(&source)?;
    if let Mode::Weak = mode {
        program = instrument_weak(&program);
    }
    let guards: BTreeSet<GuardId> = disable
        .iter()
        .map(|&n| match n.checked_sub(1) {
            Some(i) => Ok(GuardId(i)),
            None => bail!("guards are numbered from 1"),
        })
        .collect::<Result<_>>()?;
    let events = read_events(BufReader::new(
        fs::File::open(trace).with_context(|| format!("opening {}", trace.display()))?,
    ))?;
    let t = Verifier::new(&program, budget).replay(&Constraint::disable(&guards), &events)?;
    println!("{}", t.failure);
    Ok(0)
}
