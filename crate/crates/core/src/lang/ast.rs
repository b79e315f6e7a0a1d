use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a guard constant attached to a non-excluded yield.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GuardId(pub u32);

impl GuardId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for GuardId {
    // Guards print 1-based, the way instrumented sources name them.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cs{}", self.0 + 1)
    }
}

/// Position of a statement: owning procedure, pre-order index inside that
/// procedure, and the source line it was parsed from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub proc: String,
    pub index: usize,
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.proc, self.line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarTy {
    Int,
    Bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Ty {
    Int,
    Bool,
    Record(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructDef {
    pub name: String,
    pub fields: Vec<String>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Global {
    pub name: String,
    pub ty: Ty,
    /// Scalar initializer; records start zeroed.
    pub init: Option<Expr>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Ty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetTy {
    Void,
    Int,
    Bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proc {
    pub name: String,
    pub ret: RetTy,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub structs: Vec<StructDef>,
    pub globals: Vec<Global>,
    pub procs: Vec<Proc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Bool(bool),
    Var(String),
    Field(String, String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// Symbolic guard constant `cs_i`, produced by instrumentation.
    Guard(GuardId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LValue {
    Var(String),
    Field(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomicKind {
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum YieldRole {
    /// First instruction of an async-spawned thread body.
    Entry,
    /// Placed before a statement touching shared state.
    Access,
    /// Written in the source.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct YieldStmt {
    pub role: YieldRole,
    /// Never eligible for a fix (thread entry, `@sync`, inside `watomic`).
    pub excluded: bool,
    pub guard: Option<GuardId>,
    /// `if (cs) { yield; }`: the switch only happens when the guard holds.
    /// Weak instrumentation turns this off and moves the guard into the
    /// surrounding lock protocol.
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StmtKind {
    Local {
        name: String,
        ty: ScalarTy,
        init: Option<Expr>,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    Call {
        target: Option<LValue>,
        proc: String,
        args: Vec<Expr>,
    },
    Async {
        handle: String,
        proc: String,
        args: Vec<Expr>,
    },
    Join {
        handle: String,
    },
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
    },
    While {
        cond: Expr,
        bound: u32,
        body: Vec<Stmt>,
    },
    Assert(Expr),
    Assume(Expr),
    Return(Option<Expr>),
    Yield(YieldStmt),
    Atomic {
        kind: AtomicKind,
        body: Vec<Stmt>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Stmt {
    pub loc: Location,
    pub kind: StmtKind,
    /// Emitted by an instrumentation pass rather than written by the user.
    pub synthetic: bool,
}

impl Stmt {
    pub fn new(loc: Location, kind: StmtKind) -> Self {
        Stmt {
            loc,
            kind,
            synthetic: false,
        }
    }

    pub fn as_yield(&self) -> Option<&YieldStmt> {
        match &self.kind {
            StmtKind::Yield(y) => Some(y),
            _ => None,
        }
    }

    /// Nested statement lists, in source order.
    pub fn children(&self) -> Vec<&Vec<Stmt>> {
        match &self.kind {
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => vec![then_body, else_body],
            StmtKind::While { body, .. } | StmtKind::Atomic { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Vec<Stmt>> {
        match &mut self.kind {
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => vec![then_body, else_body],
            StmtKind::While { body, .. } | StmtKind::Atomic { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }
}

/// A yield statement after instrumentation, as listed in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YieldPoint {
    pub id: Option<GuardId>,
    pub loc: Location,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub proc: String,
    /// Statements of the region, including its disabled yields, ordered by
    /// position.
    pub locations: Vec<Location>,
    /// Chosen guards whose yields sit inside the region.
    pub guards: Vec<GuardId>,
    /// Dominator / post-dominator pair once lexicalized.
    pub lexical: Option<(Location, Location)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixStats {
    pub queries: usize,
    pub traces: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fix {
    pub kind: AtomicKind,
    #[serde(rename = "strongCore")]
    pub strong_core: BTreeSet<GuardId>,
    pub chosen: BTreeSet<GuardId>,
    pub regions: Vec<Region>,
    #[serde(skip)]
    pub stats: FixStats,
}

impl Program {
    pub fn proc(&self, name: &str) -> Option<&Proc> {
        self.procs.iter().find(|p| p.name == name)
    }

    pub fn proc_index(&self, name: &str) -> Option<usize> {
        self.procs.iter().position(|p| p.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&Global> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn struct_def(&self, name: &str) -> Option<&StructDef> {
        self.structs.iter().find(|s| s.name == name)
    }

    /// Procedures started with `async` somewhere in the program.
    pub fn thread_entries(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for p in &self.procs {
            walk(&p.body, &mut |s| {
                if let StmtKind::Async { proc, .. } = &s.kind {
                    out.insert(proc.clone());
                }
            });
        }
        out
    }

    /// Every yield in declaration / pre-order.
    pub fn yield_points(&self) -> Vec<YieldPoint> {
        let mut out = Vec::new();
        for p in &self.procs {
            walk(&p.body, &mut |s| {
                if let StmtKind::Yield(y) = &s.kind {
                    out.push(YieldPoint {
                        id: y.guard,
                        loc: s.loc.clone(),
                        excluded: y.excluded,
                    });
                }
            });
        }
        out
    }

    pub fn guard_count(&self) -> usize {
        self.yield_points()
            .iter()
            .filter(|y| y.id.is_some())
            .count()
    }

    pub fn excluded_guards(&self) -> BTreeSet<GuardId> {
        self.yield_points()
            .into_iter()
            .filter(|y| y.excluded)
            .filter_map(|y| y.id)
            .collect()
    }

    /// Guards that a fix may use.
    pub fn eligible_guards(&self) -> BTreeSet<GuardId> {
        self.yield_points()
            .into_iter()
            .filter(|y| !y.excluded)
            .filter_map(|y| y.id)
            .collect()
    }

    /// Reassign dense pre-order indices inside every procedure.
    pub fn renumber(&mut self) {
        for p in &mut self.procs {
            let mut next = 0;
            renumber_block(&mut p.body, &p.name, &mut next);
        }
    }

    pub fn statement_at(&self, loc: &Location) -> Option<&Stmt> {
        find_index(&self.proc(&loc.proc)?.body, loc.index)
    }
}

fn find_index(block: &[Stmt], index: usize) -> Option<&Stmt> {
    for s in block {
        if s.loc.index == index {
            return Some(s);
        }
        for child in s.children() {
            if let Some(hit) = find_index(child, index) {
                return Some(hit);
            }
        }
    }
    None
}

fn renumber_block(block: &mut [Stmt], proc: &str, next: &mut usize) {
    for s in block {
        s.loc.proc = proc.to_string();
        s.loc.index = *next;
        *next += 1;
        for child in s.children_mut() {
            renumber_block(child, proc, next);
        }
    }
}

/// Pre-order visit of a statement tree.
pub fn walk<'a>(block: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in block {
        f(s);
        for child in s.children() {
            walk(child, f);
        }
    }
}

impl Expr {
    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn negate(e: Expr) -> Expr {
        Expr::Unary(UnOp::Not, Box::new(e))
    }

    /// Visit variable and field references.
    pub fn for_each_ref(&self, f: &mut impl FnMut(&Expr)) {
        match self {
            Expr::Var(_) | Expr::Field(..) => f(self),
            Expr::Unary(_, e) => e.for_each_ref(f),
            Expr::Binary(_, l, r) => {
                l.for_each_ref(f);
                r.for_each_ref(f);
            }
            Expr::Int(_) | Expr::Bool(_) | Expr::Guard(_) => {}
        }
    }
}
