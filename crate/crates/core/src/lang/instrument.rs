use std::collections::BTreeSet;

use super::ast::*;

/// Name of the global that realizes weak atomic sections.
pub const LOCK_VAR: &str = "lock";

fn yield_stmt(loc: &Location, role: YieldRole, excluded: bool) -> Stmt {
    Stmt {
        loc: loc.clone(),
        kind: StmtKind::Yield(YieldStmt {
            role,
            excluded,
            guard: None,
            conditional: false,
        }),
        synthetic: true,
    }
}

fn synthetic(loc: &Location, kind: StmtKind) -> Stmt {
    Stmt {
        loc: loc.clone(),
        kind,
        synthetic: true,
    }
}

/// Names that are thread-local inside a procedure.
fn locals_of(proc: &Proc) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = proc.params.iter().map(|p| p.name.clone()).collect();
    walk(&proc.body, &mut |s| match &s.kind {
        StmtKind::Local { name, .. } => {
            out.insert(name.clone());
        }
        StmtKind::Async { handle, .. } => {
            out.insert(handle.clone());
        }
        _ => {}
    });
    out
}

struct SharedCheck<'a> {
    program: &'a Program,
    locals: BTreeSet<String>,
}

impl SharedCheck<'_> {
    fn var_is_shared(&self, name: &str) -> bool {
        !self.locals.contains(name) && self.program.global(name).is_some()
    }

    fn expr(&self, e: &Expr) -> bool {
        let mut hit = false;
        e.for_each_ref(&mut |r| match r {
            // Record bases are globals or by-reference parameters bound to one.
            Expr::Field(..) => hit = true,
            Expr::Var(v) => hit |= self.var_is_shared(v),
            _ => {}
        });
        hit
    }

    fn lvalue(&self, lv: &LValue) -> bool {
        match lv {
            LValue::Var(v) => self.var_is_shared(v),
            LValue::Field(..) => true,
        }
    }

    /// Scalar arguments are read; record arguments only pass a reference.
    fn args(&self, proc: &str, args: &[Expr]) -> bool {
        let params = self
            .program
            .proc(proc)
            .map(|p| p.params.as_slice())
            .unwrap_or(&[]);
        args.iter()
            .zip(params)
            .any(|(a, prm)| !matches!(prm.ty, Ty::Record(_)) && self.expr(a))
    }

    /// Whether executing the statement's own step touches shared state.
    fn header(&self, s: &Stmt) -> bool {
        match &s.kind {
            StmtKind::Local { init, .. } => init.as_ref().is_some_and(|e| self.expr(e)),
            StmtKind::Assign { target, value } => self.lvalue(target) || self.expr(value),
            StmtKind::Call { target, proc, args } => {
                target.as_ref().is_some_and(|t| self.lvalue(t)) || self.args(proc, args)
            }
            StmtKind::Async { proc, args, .. } => self.args(proc, args),
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => self.expr(cond),
            StmtKind::Assert(e) | StmtKind::Assume(e) => self.expr(e),
            StmtKind::Return(e) => e.as_ref().is_some_and(|e| self.expr(e)),
            StmtKind::Atomic {
                kind: AtomicKind::Strong,
                body,
            } => self.block_deep(body),
            StmtKind::Join { .. } | StmtKind::Yield(_) | StmtKind::Atomic { .. } => false,
        }
    }

    fn block_deep(&self, block: &[Stmt]) -> bool {
        let mut hit = false;
        walk(block, &mut |s| hit |= self.header(s));
        hit
    }
}

#[derive(Clone, Copy)]
enum Context {
    Plain,
    Strong,
    Weak,
}

/// Place a yield before every statement touching shared state and at the
/// start of every async-spawned thread body. Existing yields are kept, so
/// the pass is idempotent.
pub fn insert_yields(p: &Program) -> Program {
    let mut out = p.clone();
    let entries = p.thread_entries();
    let mut needs_lock = false;
    for proc in &mut out.procs {
        let check = SharedCheck {
            program: p,
            locals: locals_of(proc),
        };
        let body = std::mem::take(&mut proc.body);
        let mut body = transform_block(body, &check, Context::Plain, &mut needs_lock);
        if entries.contains(&proc.name) {
            let has_entry = matches!(
                body.first().and_then(Stmt::as_yield),
                Some(YieldStmt {
                    role: YieldRole::Entry,
                    ..
                })
            );
            if !has_entry {
                let loc = body.first().map(|s| s.loc.clone()).unwrap_or(Location {
                    proc: proc.name.clone(),
                    index: 0,
                    line: proc.line,
                });
                body.insert(0, yield_stmt(&loc, YieldRole::Entry, true));
            }
        }
        proc.body = body;
    }
    if needs_lock {
        ensure_lock(&mut out);
    }
    out.renumber();
    out
}

fn weak_locked_yield(loc: &Location) -> Vec<Stmt> {
    let lock = || LValue::Var(LOCK_VAR.into());
    vec![
        synthetic(
            loc,
            StmtKind::Assume(Expr::binary(
                BinOp::Eq,
                Expr::Var(LOCK_VAR.into()),
                Expr::Bool(false),
            )),
        ),
        synthetic(
            loc,
            StmtKind::Assign {
                target: lock(),
                value: Expr::Bool(true),
            },
        ),
        yield_stmt(loc, YieldRole::Access, true),
        synthetic(
            loc,
            StmtKind::Assign {
                target: lock(),
                value: Expr::Bool(false),
            },
        ),
    ]
}

fn transform_block(
    block: Vec<Stmt>,
    check: &SharedCheck,
    ctx: Context,
    needs_lock: &mut bool,
) -> Vec<Stmt> {
    let mut out: Vec<Stmt> = Vec::with_capacity(block.len() * 2);
    for mut s in block {
        if s.synthetic || s.as_yield().is_some() {
            out.push(s);
            continue;
        }
        let prev_is_yield = out
            .last()
            .is_some_and(|p| p.as_yield().is_some() || p.synthetic);
        let wants = check.header(&s) && !prev_is_yield;
        match ctx {
            Context::Strong => {}
            Context::Weak if wants => {
                *needs_lock = true;
                out.extend(weak_locked_yield(&s.loc));
            }
            Context::Plain if wants => out.push(yield_stmt(&s.loc, YieldRole::Access, false)),
            _ => {}
        }
        let loop_cond_shared = matches!(&s.kind, StmtKind::While { .. }) && check.header(&s);
        let loc = s.loc.clone();
        let inner = match &s.kind {
            StmtKind::Atomic {
                kind: AtomicKind::Strong,
                ..
            } => Context::Strong,
            StmtKind::Atomic {
                kind: AtomicKind::Weak,
                ..
            } => match ctx {
                Context::Strong => Context::Strong,
                _ => Context::Weak,
            },
            _ => ctx,
        };
        for child in s.children_mut() {
            let taken = std::mem::take(child);
            *child = transform_block(taken, check, inner, needs_lock);
        }
        // The loop condition is re-read every iteration.
        if loop_cond_shared {
            if let StmtKind::While { body, .. } = &mut s.kind {
                let ends_with_yield = body.last().is_some_and(|b| b.as_yield().is_some());
                if !ends_with_yield {
                    match ctx {
                        Context::Strong => {}
                        Context::Weak => body.extend(weak_locked_yield(&loc)),
                        Context::Plain => body.push(yield_stmt(&loc, YieldRole::Access, false)),
                    }
                }
            }
        }
        out.push(s);
    }
    out
}

fn ensure_lock(p: &mut Program) {
    if p.global(LOCK_VAR).is_none() {
        p.globals.push(Global {
            name: LOCK_VAR.into(),
            ty: Ty::Bool,
            init: Some(Expr::Bool(false)),
            line: 0,
        });
    }
}

/// Attach a fresh guard constant to every non-excluded yield. Guards are
/// numbered densely in procedure order, then pre-order.
pub fn guard_yields(p: &Program) -> (Program, usize) {
    let mut out = p.clone();
    let mut next = 0u32;
    for proc in &mut out.procs {
        guard_block(&mut proc.body, &mut next);
    }
    (out, next as usize)
}

fn guard_block(block: &mut [Stmt], next: &mut u32) {
    for s in block {
        if let StmtKind::Yield(y) = &mut s.kind {
            if y.excluded {
                y.guard = None;
                y.conditional = false;
            } else {
                y.guard = Some(GuardId(*next));
                y.conditional = true;
                *next += 1;
            }
        }
        for child in s.children_mut() {
            guard_block(child, next);
        }
    }
}

/// Rewrite each guarded yield into the global-lock form
/// `if (!cs) { assume(lock == false); lock = true; } yield; if (!cs) { lock = false; }`.
pub fn instrument_weak(p: &Program) -> Program {
    let mut out = p.clone();
    ensure_lock(&mut out);
    for proc in &mut out.procs {
        let body = std::mem::take(&mut proc.body);
        proc.body = weak_block(body);
    }
    out.renumber();
    out
}

fn weak_block(block: Vec<Stmt>) -> Vec<Stmt> {
    let mut out = Vec::with_capacity(block.len());
    for mut s in block {
        for child in s.children_mut() {
            let taken = std::mem::take(child);
            *child = weak_block(taken);
        }
        let guard = match &s.kind {
            StmtKind::Yield(YieldStmt {
                guard: Some(g),
                conditional: true,
                ..
            }) => *g,
            _ => {
                out.push(s);
                continue;
            }
        };
        let loc = s.loc.clone();
        let lock = || LValue::Var(LOCK_VAR.into());
        let off = || Expr::negate(Expr::Guard(guard));
        out.push(synthetic(
            &loc,
            StmtKind::If {
                cond: off(),
                then_body: vec![
                    synthetic(
                        &loc,
                        StmtKind::Assume(Expr::binary(
                            BinOp::Eq,
                            Expr::Var(LOCK_VAR.into()),
                            Expr::Bool(false),
                        )),
                    ),
                    synthetic(
                        &loc,
                        StmtKind::Assign {
                            target: lock(),
                            value: Expr::Bool(true),
                        },
                    ),
                ],
                else_body: Vec::new(),
            },
        ));
        if let StmtKind::Yield(y) = &mut s.kind {
            y.conditional = false;
        }
        out.push(s);
        out.push(synthetic(
            &loc,
            StmtKind::If {
                cond: off(),
                then_body: vec![synthetic(
                    &loc,
                    StmtKind::Assign {
                        target: lock(),
                        value: Expr::Bool(false),
                    },
                )],
                else_body: Vec::new(),
            },
        ));
    }
    out
}
