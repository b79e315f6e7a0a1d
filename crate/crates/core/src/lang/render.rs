//! Pretty printing of programs and of repaired programs with their atomic
//! sections.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::ast::*;
use super::LangError;

/// Print a program back as MiniConc source. Guarded yields print as
/// `if (csN) { yield; }`, which is for display only.
pub fn render_program(p: &Program) -> String {
    let mut pr = Printer::new(None);
    pr.program(p);
    pr.out
}

/// Render `original` with the regions of `fix` wrapped in `satomic` /
/// `watomic` blocks. `instrumented` is the guard-instrumented program the
/// fix was computed on; it supplies the yield points whose switches remain
/// permitted. Regions that do not line up with one run of sibling
/// statements are marked with comments instead.
pub fn render_fix(
    original: &Program,
    instrumented: &Program,
    fix: &Fix,
) -> Result<String, LangError> {
    let mut regions = Vec::new();
    for r in &fix.regions {
        let lines: BTreeSet<usize> = r.locations.iter().map(|l| l.line).collect();
        if lines.is_empty() {
            continue;
        }
        regions.push(PlanRegion {
            proc: r.proc.clone(),
            lines,
            lexical: r.lexical.is_some(),
        });
    }
    let region_procs: BTreeSet<&str> = regions.iter().map(|r| r.proc.as_str()).collect();
    let mut switches = BTreeSet::new();
    for y in instrumented.yield_points() {
        if let Some(g) = y.id {
            if !y.excluded && !fix.chosen.contains(&g) && region_procs.contains(y.loc.proc.as_str())
            {
                switches.insert((y.loc.proc.clone(), y.loc.line));
            }
        }
    }
    let plan = Plan {
        keyword: match fix.kind {
            AtomicKind::Strong => "satomic",
            AtomicKind::Weak => "watomic",
        },
        regions,
        switches,
    };
    let mut pr = Printer::new(Some(plan));
    pr.program(original);
    match pr.error.take() {
        Some(e) => Err(e),
        None => Ok(pr.out),
    }
}

struct PlanRegion {
    proc: String,
    lines: BTreeSet<usize>,
    lexical: bool,
}

struct Plan {
    keyword: &'static str,
    regions: Vec<PlanRegion>,
    switches: BTreeSet<(String, usize)>,
}

struct Printer {
    out: String,
    indent: usize,
    plan: Option<Plan>,
    proc: String,
    /// Regions opened with a comment marker, closed after their last line.
    open_comments: Vec<usize>,
    done: BTreeSet<usize>,
    /// Inside a real atomic wrapper: no further markers.
    wrapped: usize,
    /// Statements of the current procedure inside each region.
    totals: Vec<usize>,
    error: Option<LangError>,
}

impl Printer {
    fn new(plan: Option<Plan>) -> Self {
        Printer {
            out: String::new(),
            indent: 0,
            plan,
            proc: String::new(),
            open_comments: Vec::new(),
            done: BTreeSet::new(),
            wrapped: 0,
            totals: Vec::new(),
            error: None,
        }
    }

    fn line(&mut self, text: &str) {
        for _ in 0..self.indent {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn program(&mut self, p: &Program) {
        for s in &p.structs {
            let vars: Vec<&str> = p
                .globals
                .iter()
                .filter(|g| g.ty == Ty::Record(s.name.clone()))
                .map(|g| g.name.as_str())
                .collect();
            self.line(&format!("struct {} {{", s.name));
            self.indent += 1;
            for f in &s.fields {
                self.line(&format!("int {f};"));
            }
            self.indent -= 1;
            if vars.is_empty() {
                self.line("};");
            } else {
                self.line(&format!("}} {};", vars.join(", ")));
            }
        }
        for g in &p.globals {
            let ty = match g.ty {
                Ty::Int => "int",
                Ty::Bool => "bool",
                Ty::Record(_) => continue,
            };
            match &g.init {
                Some(e) => self.line(&format!("{ty} {} = {};", g.name, expr(e))),
                None => self.line(&format!("{ty} {};", g.name)),
            }
        }
        for proc in &p.procs {
            self.out.push('\n');
            self.procedure(proc);
        }
    }

    fn procedure(&mut self, p: &Proc) {
        self.proc = p.name.clone();
        let ret = match p.ret {
            RetTy::Void => "void",
            RetTy::Int => "int",
            RetTy::Bool => "bool",
        };
        let params: Vec<String> = p
            .params
            .iter()
            .map(|prm| match &prm.ty {
                Ty::Int => format!("int {}", prm.name),
                Ty::Bool => format!("bool {}", prm.name),
                Ty::Record(s) => format!("{s} *{}", prm.name),
            })
            .collect();
        self.line(&format!("{ret} {}({}) {{", p.name, params.join(", ")));
        self.totals = match &self.plan {
            Some(plan) => (0..plan.regions.len())
                .map(|r| self.count_in(r, &p.body))
                .collect(),
            None => Vec::new(),
        };
        self.indent += 1;
        self.block(&p.body);
        self.indent -= 1;
        self.line("}");
    }

    fn in_region(&self, r: usize, s: &Stmt) -> bool {
        let plan = self.plan.as_ref().expect("plan");
        let reg = &plan.regions[r];
        !s.synthetic && reg.proc == self.proc && reg.lines.contains(&s.loc.line)
    }

    fn fully_in(&self, r: usize, s: &Stmt) -> bool {
        let mut all = true;
        walk(std::slice::from_ref(s), &mut |x| {
            if !x.synthetic && x.as_yield().is_none() {
                all &= self.in_region(r, x);
            }
        });
        all
    }

    fn count_in(&self, r: usize, block: &[Stmt]) -> usize {
        let mut n = 0;
        walk(block, &mut |x| {
            if self.in_region(r, x) {
                n += 1;
            }
        });
        n
    }

    /// Region whose first statement (pre-order) is `s`.
    fn region_starting_at(&self, s: &Stmt, proc_body_count: &[usize]) -> Option<usize> {
        let plan = self.plan.as_ref()?;
        (0..plan.regions.len()).find(|&r| {
            !self.done.contains(&r)
                && !self.open_comments.contains(&r)
                && self.in_region(r, s)
                && proc_body_count[r] > 0
        })
    }

    fn block(&mut self, stmts: &[Stmt]) {
        let totals = self.totals.clone();
        let mut i = 0;
        while i < stmts.len() {
            let s = &stmts[i];
            if self.wrapped == 0 && self.plan.is_some() {
                if let Some(r) = self.region_starting_at(s, &totals) {
                    // The run of siblings lying wholly inside the region.
                    let mut j = i;
                    while j < stmts.len() && self.fully_in(r, &stmts[j]) {
                        j += 1;
                    }
                    if j > i && self.count_in(r, &stmts[i..j]) == totals[r] {
                        self.switch_marker(s);
                        let kw = self.plan.as_ref().unwrap().keyword;
                        self.line(&format!("{kw} {{"));
                        self.indent += 1;
                        self.wrapped += 1;
                        for x in &stmts[i..j] {
                            self.stmt(x);
                        }
                        self.wrapped -= 1;
                        self.indent -= 1;
                        self.line("}");
                        self.done.insert(r);
                        i = j;
                        continue;
                    }
                    if self.plan.as_ref().unwrap().regions[r].lexical && self.error.is_none() {
                        self.error = Some(LangError::RegionNotLexical(format!(
                            "region in `{}` starting at line {} does not match one block",
                            self.proc, s.loc.line
                        )));
                    }
                    self.switch_marker(s);
                    let kw = self.plan.as_ref().unwrap().keyword;
                    self.line(&format!("/* {kw} {{ */"));
                    self.open_comments.push(r);
                    self.stmt_with_closers(s);
                    i += 1;
                    continue;
                }
            }
            if self.wrapped == 0 {
                self.switch_marker(s);
            }
            self.stmt_with_closers(s);
            i += 1;
        }
    }

    fn switch_marker(&mut self, s: &Stmt) {
        let hit = match &self.plan {
            Some(plan) => plan.switches.contains(&(self.proc.clone(), s.loc.line)),
            None => false,
        };
        if hit {
            self.line("// --> context switch permitted");
        }
    }

    /// Print a statement, then close comment-marked regions it finishes.
    fn stmt_with_closers(&mut self, s: &Stmt) {
        self.stmt(s);
        if self.open_comments.is_empty() {
            return;
        }
        let mut still = Vec::new();
        for r in std::mem::take(&mut self.open_comments) {
            if self.remaining_after(r, s) == 0 {
                self.line("/* } */");
                self.done.insert(r);
            } else {
                still.push(r);
            }
        }
        self.open_comments = still;
    }

    fn remaining_after(&self, r: usize, s: &Stmt) -> usize {
        let reg = &self.plan.as_ref().unwrap().regions[r];
        let last = reg.lines.iter().next_back().copied().unwrap_or(0);
        let mut max_line = s.loc.line;
        walk(std::slice::from_ref(s), &mut |x| {
            max_line = max_line.max(x.loc.line)
        });
        usize::from(max_line < last)
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Local { name, ty, init } => {
                let t = match ty {
                    ScalarTy::Int => "int",
                    ScalarTy::Bool => "bool",
                };
                match init {
                    Some(e) => self.line(&format!("{t} {name} = {};", expr(e))),
                    None => self.line(&format!("{t} {name};")),
                }
            }
            StmtKind::Assign { target, value } => {
                self.line(&format!("{} = {};", lvalue(target), expr(value)))
            }
            StmtKind::Call { target, proc, args } => {
                let call = format!("{proc}({})", args_text(args));
                match target {
                    Some(t) => self.line(&format!("{} = {call};", lvalue(t))),
                    None => self.line(&format!("{call};")),
                }
            }
            StmtKind::Async { handle, proc, args } => {
                let call = format!("async {proc}({})", args_text(args));
                if handle.starts_with("__anon") {
                    self.line(&format!("{call};"))
                } else {
                    self.line(&format!("{handle} = {call};"))
                }
            }
            StmtKind::Join { handle } => self.line(&format!("join({handle});")),
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                self.line(&format!("if ({}) {{", expr(cond)));
                self.nested(then_body);
                if else_body.is_empty() {
                    self.line("}");
                } else {
                    self.line("} else {");
                    self.nested(else_body);
                    self.line("}");
                }
            }
            StmtKind::While { cond, bound, body } => {
                self.line(&format!("@bound({bound}) while ({}) {{", expr(cond)));
                self.nested(body);
                self.line("}");
            }
            StmtKind::Assert(e) => self.line(&format!("assert({});", expr(e))),
            StmtKind::Assume(e) => self.line(&format!("assume({});", expr(e))),
            StmtKind::Return(None) => self.line("return;"),
            StmtKind::Return(Some(e)) => self.line(&format!("return {};", expr(e))),
            StmtKind::Yield(y) => {
                let text = match (y.guard, y.conditional) {
                    (Some(g), true) => format!("if ({g}) {{ yield; }}"),
                    (Some(g), false) => format!("yield; // {g}"),
                    (None, _) if y.excluded => "@sync yield;".to_string(),
                    (None, _) => "yield;".to_string(),
                };
                self.line(&text);
            }
            StmtKind::Atomic { kind, body } => {
                let kw = match kind {
                    AtomicKind::Strong => "satomic",
                    AtomicKind::Weak => "watomic",
                };
                self.line(&format!("{kw} {{"));
                self.nested(body);
                self.line("}");
            }
        }
    }

    fn nested(&mut self, body: &[Stmt]) {
        self.indent += 1;
        self.block(body);
        self.indent -= 1;
    }
}

fn args_text(args: &[Expr]) -> String {
    args.iter().map(expr).collect::<Vec<_>>().join(", ")
}

fn lvalue(lv: &LValue) -> String {
    match lv {
        LValue::Var(v) => v.clone(),
        LValue::Field(b, f) => format!("{b}.{f}"),
    }
}

fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne => 3,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
        BinOp::Add | BinOp::Sub => 5,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
    }
}

fn op_text(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Rem => "%",
        BinOp::Eq => "==",
        BinOp::Ne => "!=",
        BinOp::Lt => "<",
        BinOp::Le => "<=",
        BinOp::Gt => ">",
        BinOp::Ge => ">=",
        BinOp::And => "&&",
        BinOp::Or => "||",
    }
}

/// Source text of an expression, parenthesized only where needed.
pub(crate) fn expr(e: &Expr) -> String {
    fn go(e: &Expr, min: u8, out: &mut String) {
        match e {
            Expr::Int(v) if *v < 0 => {
                let _ = write!(out, "({v})");
            }
            Expr::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Expr::Bool(b) => {
                let _ = write!(out, "{b}");
            }
            Expr::Var(v) => out.push_str(v),
            Expr::Field(b, f) => {
                let _ = write!(out, "{b}.{f}");
            }
            Expr::Guard(g) => {
                let _ = write!(out, "{g}");
            }
            Expr::Unary(op, inner) => {
                out.push(match op {
                    UnOp::Not => '!',
                    UnOp::Neg => '-',
                });
                go(inner, 7, out);
            }
            Expr::Binary(op, l, r) => {
                let p = prec(*op);
                let paren = p < min;
                if paren {
                    out.push('(');
                }
                // Left-associative: the right operand binds one level tighter.
                go(l, p, out);
                let _ = write!(out, " {} ", op_text(*op));
                go(r, p + 1, out);
                if paren {
                    out.push(')');
                }
            }
        }
    }
    let mut out = String::new();
    go(e, 0, &mut out);
    out
}
