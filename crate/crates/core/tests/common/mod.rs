//! Shared test support: a seeded generator of small concurrent programs and a
//! naive oracle that decides them by enumerating every interleaving.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use atomfix::lang::{GuardId, Program};

pub const GLOBALS: usize = 3;

/// Statements of a generated thread. Every one of them touches a global, so
/// each is preceded by exactly one yield (two for `If`: one before the
/// condition, one before the nested assignment).
#[derive(Debug, Clone)]
pub enum GStmt {
    /// `gX = c;`
    Set(usize, i64),
    /// `gX = gY + c;`
    Add(usize, usize, i64),
    /// `l = gX;`
    Load(usize),
    /// `gX = l + c;`
    Store(usize, i64),
    /// `assert(gX != c);`
    AssertNe(usize, i64),
    /// `assert(gX <= c);`
    AssertLe(usize, i64),
    /// `if (gX == c) { gY = d; }`
    If(usize, i64, usize, i64),
}

impl GStmt {
    fn yields(&self) -> usize {
        match self {
            GStmt::If(..) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenProgram {
    pub threads: Vec<Vec<GStmt>>,
}

impl GenProgram {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(2..=3);
        let mut budget = 8usize;
        let mut threads = Vec::new();
        for t in 0..n {
            let mut body = Vec::new();
            // Leave at least one yield for each later thread.
            let reserve = n - t - 1;
            let len = rng.random_range(1..=4);
            for _ in 0..len {
                let s = random_stmt(rng);
                if s.yields() + reserve > budget {
                    break;
                }
                budget -= s.yields();
                body.push(s);
            }
            if body.is_empty() {
                budget -= 1;
                body.push(GStmt::Set(rng.random_range(0..GLOBALS), 1));
            }
            threads.push(body);
        }
        GenProgram { threads }
    }

    pub fn yields(&self) -> usize {
        self.threads.iter().flatten().map(GStmt::yields).sum()
    }

    pub fn statements(&self) -> usize {
        let body: usize = self
            .threads
            .iter()
            .flatten()
            .map(|s| if let GStmt::If(..) = s { 2 } else { 1 })
            .sum();
        // Local declarations and the spawns in main.
        body + 2 * self.threads.len()
    }

    /// MiniConc source, plus the source line of every statement that gets a
    /// yield, per thread, in execution order.
    pub fn render(&self) -> (String, Vec<Vec<usize>>) {
        let mut s = String::new();
        let mut line = 0;
        let mut emit = |s: &mut String, text: String| {
            s.push_str(&text);
            s.push('\n');
            line += 1;
            line
        };
        for g in 0..GLOBALS {
            emit(&mut s, format!("int g{g};"));
        }
        let mut lines = Vec::new();
        for (t, body) in self.threads.iter().enumerate() {
            let mut ls = Vec::new();
            emit(&mut s, String::new());
            emit(&mut s, format!("void w{t}() {{"));
            emit(&mut s, "    int l = 0;".into());
            for st in body {
                let text = match *st {
                    GStmt::Set(x, c) => format!("    g{x} = {c};"),
                    GStmt::Add(x, y, c) => format!("    g{x} = g{y} + {c};"),
                    GStmt::Load(x) => format!("    l = g{x};"),
                    GStmt::Store(x, c) => format!("    g{x} = l + {c};"),
                    GStmt::AssertNe(x, c) => format!("    assert(g{x} != {c});"),
                    GStmt::AssertLe(x, c) => format!("    assert(g{x} <= {c});"),
                    GStmt::If(x, c, y, d) => {
                        ls.push(emit(&mut s, format!("    if (g{x} == {c}) {{")));
                        ls.push(emit(&mut s, format!("        g{y} = {d};")));
                        emit(&mut s, "    }".into());
                        continue;
                    }
                };
                ls.push(emit(&mut s, text));
            }
            emit(&mut s, "}".into());
            lines.push(ls);
        }
        emit(&mut s, String::new());
        emit(&mut s, "void main() {".into());
        for t in 0..self.threads.len() {
            emit(&mut s, format!("    h{t} = async w{t}();"));
        }
        emit(&mut s, "}".into());
        (s, lines)
    }

    /// The guard of each yield, per thread, in execution order, looked up by
    /// source line in the instrumented program.
    pub fn guards(&self, instrumented: &Program) -> Vec<Vec<GuardId>> {
        let (_, lines) = self.render();
        let by_line: HashMap<(String, usize), GuardId> = instrumented
            .yield_points()
            .into_iter()
            .filter_map(|y| y.id.map(|g| ((y.loc.proc, y.loc.line), g)))
            .collect();
        lines
            .iter()
            .enumerate()
            .map(|(t, ls)| {
                ls.iter()
                    .map(|&l| {
                        *by_line
                            .get(&(format!("w{t}"), l))
                            .unwrap_or_else(|| panic!("no guarded yield before w{t}:{l}"))
                    })
                    .collect()
            })
            .collect()
    }
}

fn random_stmt(rng: &mut impl Rng) -> GStmt {
    let g = |rng: &mut dyn rand::RngCore| rng.random_range(0..GLOBALS);
    let c = |rng: &mut dyn rand::RngCore| rng.random_range(0..3i64);
    match rng.random_range(0..7) {
        0 => GStmt::Set(g(rng), c(rng)),
        1 => GStmt::Add(g(rng), g(rng), c(rng)),
        2 => GStmt::Load(g(rng)),
        3 => GStmt::Store(g(rng), c(rng)),
        4 => GStmt::AssertNe(g(rng), c(rng)),
        5 => GStmt::AssertLe(g(rng), c(rng)),
        _ => GStmt::If(g(rng), c(rng), g(rng), c(rng)),
    }
}

/// One step of a flattened thread.
#[derive(Debug, Clone)]
enum Op {
    Yield(Option<GuardId>),
    Stmt(GStmt),
    /// Evaluate `gX == c`; skip the next `skip` ops when false.
    Test(usize, i64, usize),
}

#[derive(Clone)]
struct NState {
    globals: [i64; GLOBALS],
    pcs: Vec<usize>,
    locals: Vec<i64>,
}

/// Decide by brute force whether some schedule fails an assertion, with the
/// guards in `disabled` forbidding a switch at their yield. Threads start
/// once main has spawned them all; a thread switches only at its yields
/// (an unguarded one opens each thread) or when it finishes.
pub fn naive_has_bug(
    p: &GenProgram,
    guards: &[Vec<GuardId>],
    disabled: &BTreeSet<GuardId>,
) -> bool {
    let code: Vec<Vec<Op>> = p
        .threads
        .iter()
        .zip(guards)
        .map(|(body, gs)| {
            let mut gs = gs.iter().copied();
            let mut ops = vec![Op::Yield(None)];
            for s in body {
                ops.push(Op::Yield(gs.next()));
                if let GStmt::If(x, c, y, d) = *s {
                    ops.push(Op::Test(x, c, 2));
                    ops.push(Op::Yield(gs.next()));
                    ops.push(Op::Stmt(GStmt::Set(y, d)));
                } else {
                    ops.push(Op::Stmt(s.clone()));
                }
            }
            ops
        })
        .collect();
    let st = NState {
        globals: [0; GLOBALS],
        pcs: vec![0; code.len()],
        locals: vec![0; code.len()],
    };
    (0..code.len()).any(|t| run(&code, disabled, st.clone(), t))
}

/// Run thread `t` from `st` and explore every continuation.
fn run(code: &[Vec<Op>], disabled: &BTreeSet<GuardId>, mut st: NState, t: usize) -> bool {
    loop {
        let pc = st.pcs[t];
        let Some(op) = code[t].get(pc) else {
            // Finished: any unfinished thread may go next.
            let rest: Vec<usize> = (0..code.len())
                .filter(|&u| st.pcs[u] < code[u].len())
                .collect();
            return rest.into_iter().any(|u| run(code, disabled, st.clone(), u));
        };
        st.pcs[t] += 1;
        match op {
            Op::Yield(g) => {
                let may_switch = g.is_none_or(|g| !disabled.contains(&g));
                if may_switch {
                    for u in 0..code.len() {
                        if u != t && st.pcs[u] < code[u].len() && run(code, disabled, st.clone(), u)
                        {
                            return true;
                        }
                    }
                }
            }
            Op::Test(x, c, skip) => {
                if st.globals[*x] != *c {
                    st.pcs[t] += skip;
                }
            }
            Op::Stmt(s) => match *s {
                GStmt::Set(x, c) => st.globals[x] = c,
                GStmt::Add(x, y, c) => st.globals[x] = st.globals[y] + c,
                GStmt::Load(x) => st.locals[t] = st.globals[x],
                GStmt::Store(x, c) => st.globals[x] = st.locals[t] + c,
                GStmt::AssertNe(x, c) => {
                    if st.globals[x] == c {
                        return true;
                    }
                }
                GStmt::AssertLe(x, c) => {
                    if st.globals[x] > c {
                        return true;
                    }
                }
                GStmt::If(..) => unreachable!("flattened"),
            },
        }
    }
}

/// Seeded generator shared by the fuzz tests.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for fuzz tests: `ATOMFIX_SEED` when set, otherwise `default`.
pub fn fuzz_seed(default: u64) -> u64 {
    std::env::var("ATOMFIX_SEED")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(default)
}

/// Random subset of the guards of a program.
pub fn random_subset(rng: &mut impl Rng, guards: &[Vec<GuardId>]) -> BTreeSet<GuardId> {
    guards
        .iter()
        .flatten()
        .copied()
        .filter(|_| rng.random_bool(0.5))
        .collect()
}
