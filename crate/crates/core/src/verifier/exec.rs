//! Lowering of programs to a small per-procedure instruction set and the
//! single-step machine the explorer and the replayer drive.

use std::collections::{BTreeSet, HashMap};

use crate::lang::{BinOp, Expr, GuardId, LValue, Location, Program, Stmt, StmtKind, Ty, UnOp};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum CExpr {
    Const(i64),
    Global(usize),
    Local(usize),
    /// Field of the record whose base slot is held in a local.
    FieldRef(usize, usize),
    Guard(GuardId),
    Un(UnOp, Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum CLval {
    Global(usize),
    Local(usize),
    FieldRef(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CArg {
    Value(CExpr),
    /// Base slot of a global record.
    Record(usize),
    /// Record reference held in a local parameter.
    RecordLocal(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Op {
    Assign(CLval, CExpr),
    Call {
        target: Option<CLval>,
        proc: usize,
        args: Vec<CArg>,
    },
    Async {
        handle: usize,
        proc: usize,
        args: Vec<CArg>,
    },
    Join(usize),
    /// Jump to the target when the condition is false.
    Branch(CExpr, usize),
    Jump(usize),
    LoopInit(usize),
    LoopHead {
        cond: CExpr,
        counter: usize,
        bound: u32,
        exit: usize,
    },
    Assert(CExpr),
    Assume(CExpr),
    Return(Option<CExpr>),
    Yield {
        guard: Option<GuardId>,
        conditional: bool,
    },
    AtomicEnter,
    AtomicExit,
    Nop,
    End,
}

#[derive(Debug, Clone)]
pub(crate) struct Instr {
    pub op: Op,
    pub loc: Location,
    /// Whether executing this instruction is a trace event.
    pub visible: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct CProc {
    pub code: Vec<Instr>,
    pub locals: usize,
    /// Local slot of each parameter, in order.
    pub params: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub procs: Vec<CProc>,
    pub main: usize,
    pub initial_globals: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Frame {
    pub proc: usize,
    pub pc: usize,
    pub locals: Vec<i64>,
    /// Open `satomic` blocks in this frame.
    pub atomic: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Thread {
    pub frames: Vec<Frame>,
    /// Set once the thread reaches a false `assume`; it never runs again.
    pub stuck: bool,
}

impl Thread {
    pub fn done(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn in_satomic(&self) -> bool {
        self.frames.iter().any(|f| f.atomic > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct State {
    pub globals: Vec<i64>,
    pub threads: Vec<Thread>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Step {
    /// An ordinary statement executed at this location.
    Event(Location),
    /// A yield executed; the scheduler may now switch.
    Yield {
        loc: Location,
        guard: Option<GuardId>,
        conditional: bool,
    },
    Failed {
        loc: Location,
        message: String,
    },
    /// The thread cannot proceed: it waits to join an unfinished thread,
    /// or it is stuck on a false assume.
    Blocked,
    /// The thread has terminated.
    Done,
    /// A loop exceeded its bound: the path is cut off.
    Pruned,
}

#[derive(Debug)]
pub(crate) enum EvalError {
    DivByZero,
}

pub(crate) struct Env<'a> {
    pub globals: &'a [i64],
    pub locals: &'a [i64],
    pub disabled: &'a BTreeSet<GuardId>,
}

pub(crate) fn eval(e: &CExpr, env: &Env) -> Result<i64, EvalError> {
    Ok(match e {
        CExpr::Const(v) => *v,
        CExpr::Global(s) => env.globals[*s],
        CExpr::Local(s) => env.locals[*s],
        CExpr::FieldRef(s, off) => env.globals[env.locals[*s] as usize + off],
        CExpr::Guard(g) => i64::from(!env.disabled.contains(g)),
        CExpr::Un(UnOp::Not, x) => i64::from(eval(x, env)? == 0),
        CExpr::Un(UnOp::Neg, x) => eval(x, env)?.wrapping_neg(),
        CExpr::Bin(op, l, r) => {
            let a = eval(l, env)?;
            match op {
                BinOp::And if a == 0 => return Ok(0),
                BinOp::Or if a != 0 => return Ok(1),
                _ => {}
            }
            let b = eval(r, env)?;
            match op {
                BinOp::Add => a.wrapping_add(b),
                BinOp::Sub => a.wrapping_sub(b),
                BinOp::Mul => a.wrapping_mul(b),
                BinOp::Div if b == 0 => return Err(EvalError::DivByZero),
                BinOp::Div => a.wrapping_div(b),
                BinOp::Rem if b == 0 => return Err(EvalError::DivByZero),
                BinOp::Rem => a.wrapping_rem(b),
                BinOp::Eq => i64::from(a == b),
                BinOp::Ne => i64::from(a != b),
                BinOp::Lt => i64::from(a < b),
                BinOp::Le => i64::from(a <= b),
                BinOp::Gt => i64::from(a > b),
                BinOp::Ge => i64::from(a >= b),
                BinOp::And | BinOp::Or => i64::from(b != 0),
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Lowering

struct GlobalLayout {
    slots: HashMap<String, usize>,
    fields: HashMap<String, Vec<String>>,
}

impl GlobalLayout {
    fn field_offset(&self, record_ty: &str, field: &str) -> usize {
        self.fields[record_ty]
            .iter()
            .position(|f| f == field)
            .expect("field checked by the parser")
    }
}

pub(crate) fn compile(p: &Program) -> Compiled {
    let mut layout = GlobalLayout {
        slots: HashMap::new(),
        fields: p
            .structs
            .iter()
            .map(|s| (s.name.clone(), s.fields.clone()))
            .collect(),
    };
    let mut next = 0;
    for g in &p.globals {
        layout.slots.insert(g.name.clone(), next);
        next += match &g.ty {
            Ty::Record(s) => layout.fields[s].len(),
            _ => 1,
        };
    }
    let mut initial = vec![0i64; next];
    let none = BTreeSet::new();
    for g in &p.globals {
        if let Some(init) = &g.init {
            let empty = ProcScope::default();
            let e = lower_expr(init, &empty, &layout, p);
            let env = Env {
                globals: &initial,
                locals: &[],
                disabled: &none,
            };
            let v = eval(&e, &env).unwrap_or(0);
            initial[layout.slots[&g.name]] = v;
        }
    }
    let names: Vec<String> = p.procs.iter().map(|x| x.name.clone()).collect();
    let procs = p
        .procs
        .iter()
        .map(|proc| {
            let mut scope = ProcScope::default();
            let mut params = Vec::new();
            for prm in &proc.params {
                let slot = scope.slot(&prm.name);
                if let Ty::Record(s) = &prm.ty {
                    scope.records.insert(prm.name.clone(), s.clone());
                }
                params.push(slot);
            }
            let mut lw = Lowerer {
                program: p,
                layout: &layout,
                scope,
                code: Vec::new(),
                names: &names,
            };
            lw.block(&proc.body);
            let end_loc = Location {
                proc: proc.name.clone(),
                index: usize::MAX,
                line: 0,
            };
            lw.code.push(Instr {
                op: Op::End,
                loc: end_loc,
                visible: false,
            });
            CProc {
                code: lw.code,
                locals: lw.scope.count,
                params,
            }
        })
        .collect();
    Compiled {
        procs,
        main: names.iter().position(|n| n == "main").expect("main exists"),
        initial_globals: initial,
    }
}

#[derive(Default)]
struct ProcScope {
    slots: HashMap<String, usize>,
    records: HashMap<String, String>,
    count: usize,
}

impl ProcScope {
    fn slot(&mut self, name: &str) -> usize {
        if let Some(&s) = self.slots.get(name) {
            return s;
        }
        let s = self.count;
        self.count += 1;
        self.slots.insert(name.to_string(), s);
        s
    }

    fn fresh(&mut self) -> usize {
        self.count += 1;
        self.count - 1
    }
}

fn record_type_of<'a>(p: &'a Program, name: &str) -> Option<&'a str> {
    match &p.global(name)?.ty {
        Ty::Record(s) => Some(s),
        _ => None,
    }
}

fn lower_expr(e: &Expr, scope: &ProcScope, layout: &GlobalLayout, p: &Program) -> CExpr {
    match e {
        Expr::Int(v) => CExpr::Const(*v),
        Expr::Bool(b) => CExpr::Const(i64::from(*b)),
        Expr::Var(v) => match scope.slots.get(v) {
            Some(&s) => CExpr::Local(s),
            None => CExpr::Global(layout.slots[v]),
        },
        Expr::Field(b, f) => match (scope.slots.get(b), scope.records.get(b)) {
            (Some(&s), Some(ty)) => CExpr::FieldRef(s, layout.field_offset(ty, f)),
            _ => {
                let ty = record_type_of(p, b).expect("record global");
                CExpr::Global(layout.slots[b] + layout.field_offset(ty, f))
            }
        },
        Expr::Guard(g) => CExpr::Guard(*g),
        Expr::Unary(op, x) => CExpr::Un(*op, Box::new(lower_expr(x, scope, layout, p))),
        Expr::Binary(op, l, r) => CExpr::Bin(
            *op,
            Box::new(lower_expr(l, scope, layout, p)),
            Box::new(lower_expr(r, scope, layout, p)),
        ),
    }
}

struct Lowerer<'a> {
    program: &'a Program,
    layout: &'a GlobalLayout,
    scope: ProcScope,
    code: Vec<Instr>,
    names: &'a [String],
}

impl Lowerer<'_> {
    fn expr(&self, e: &Expr) -> CExpr {
        lower_expr(e, &self.scope, self.layout, self.program)
    }

    fn lval(&self, lv: &LValue) -> CLval {
        match self.expr(&match lv {
            LValue::Var(v) => Expr::Var(v.clone()),
            LValue::Field(b, f) => Expr::Field(b.clone(), f.clone()),
        }) {
            CExpr::Global(s) => CLval::Global(s),
            CExpr::Local(s) => CLval::Local(s),
            CExpr::FieldRef(s, o) => CLval::FieldRef(s, o),
            _ => unreachable!("lvalues lower to slots"),
        }
    }

    fn args(&self, proc: &str, args: &[Expr]) -> Vec<CArg> {
        let target = self
            .program
            .proc(proc)
            .expect("callee checked by the parser");
        target
            .params
            .iter()
            .zip(args)
            .map(|(prm, a)| match (&prm.ty, a) {
                (Ty::Record(_), Expr::Var(v)) => match self.scope.slots.get(v) {
                    Some(&s) => CArg::RecordLocal(s),
                    None => CArg::Record(self.layout.slots[v]),
                },
                _ => CArg::Value(self.expr(a)),
            })
            .collect()
    }

    fn proc_id(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .expect("declared procedure")
    }

    fn emit(&mut self, op: Op, loc: &Location, visible: bool) -> usize {
        self.code.push(Instr {
            op,
            loc: loc.clone(),
            visible,
        });
        self.code.len() - 1
    }

    fn block(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        let loc = &s.loc;
        match &s.kind {
            StmtKind::Local { name, init, .. } => {
                let value = init
                    .as_ref()
                    .map(|e| self.expr(e))
                    .unwrap_or(CExpr::Const(0));
                let slot = self.scope.slot(name);
                self.emit(Op::Assign(CLval::Local(slot), value), loc, true);
            }
            StmtKind::Assign { target, value } => {
                let op = Op::Assign(self.lval(target), self.expr(value));
                self.emit(op, loc, true);
            }
            StmtKind::Call { target, proc, args } => {
                let op = Op::Call {
                    target: target.as_ref().map(|t| self.lval(t)),
                    proc: self.proc_id(proc),
                    args: self.args(proc, args),
                };
                self.emit(op, loc, true);
            }
            StmtKind::Async { handle, proc, args } => {
                let args = self.args(proc, args);
                let handle = self.scope.slot(handle);
                let proc = self.proc_id(proc);
                self.emit(Op::Async { handle, proc, args }, loc, true);
            }
            StmtKind::Join { handle } => {
                let slot = self.scope.slot(handle);
                self.emit(Op::Join(slot), loc, true);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let c = self.expr(cond);
                let br = self.emit(Op::Branch(c, 0), loc, true);
                self.block(then_body);
                if else_body.is_empty() {
                    let after = self.code.len();
                    self.code[br].op = match &self.code[br].op {
                        Op::Branch(c, _) => Op::Branch(c.clone(), after),
                        _ => unreachable!(),
                    };
                } else {
                    let jmp = self.emit(Op::Jump(0), loc, false);
                    let else_start = self.code.len();
                    self.block(else_body);
                    let after = self.code.len();
                    self.code[jmp].op = Op::Jump(after);
                    self.code[br].op = match &self.code[br].op {
                        Op::Branch(c, _) => Op::Branch(c.clone(), else_start),
                        _ => unreachable!(),
                    };
                }
            }
            StmtKind::While { cond, bound, body } => {
                let counter = self.scope.fresh();
                self.emit(Op::LoopInit(counter), loc, false);
                let head = self.emit(Op::Nop, loc, true);
                self.block(body);
                self.emit(Op::Jump(head), loc, false);
                let exit = self.code.len();
                self.code[head].op = Op::LoopHead {
                    cond: self.expr(cond),
                    counter,
                    bound: *bound,
                    exit,
                };
            }
            StmtKind::Assert(e) => {
                let op = Op::Assert(self.expr(e));
                self.emit(op, loc, true);
            }
            StmtKind::Assume(e) => {
                let op = Op::Assume(self.expr(e));
                self.emit(op, loc, true);
            }
            StmtKind::Return(e) => {
                let op = Op::Return(e.as_ref().map(|e| self.expr(e)));
                self.emit(op, loc, true);
            }
            StmtKind::Yield(y) => {
                self.emit(
                    Op::Yield {
                        guard: y.guard,
                        conditional: y.conditional,
                    },
                    loc,
                    true,
                );
            }
            StmtKind::Atomic { kind, body } => {
                let strong = *kind == crate::lang::AtomicKind::Strong;
                self.emit(if strong { Op::AtomicEnter } else { Op::Nop }, loc, true);
                self.block(body);
                if strong {
                    self.emit(Op::AtomicExit, loc, false);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Execution

impl Compiled {
    pub fn initial_state(&self) -> State {
        State {
            globals: self.initial_globals.clone(),
            threads: vec![Thread {
                stuck: false,
                frames: vec![self.frame(self.main, Vec::new())],
            }],
        }
    }

    fn frame(&self, proc: usize, args: Vec<i64>) -> Frame {
        let cp = &self.procs[proc];
        let mut locals = vec![0; cp.locals];
        for (&slot, v) in cp.params.iter().zip(args) {
            locals[slot] = v;
        }
        Frame {
            proc,
            pc: 0,
            locals,
            atomic: 0,
        }
    }

    fn arg_values(&self, args: &[CArg], env: &Env) -> Result<Vec<i64>, EvalError> {
        args.iter()
            .map(|a| match a {
                CArg::Value(e) => eval(e, env),
                CArg::Record(base) => Ok(*base as i64),
                CArg::RecordLocal(s) => Ok(env.locals[*s]),
            })
            .collect()
    }

    /// Whether thread `t` can take a step now.
    pub fn runnable(&self, st: &State, t: usize) -> bool {
        let th = &st.threads[t];
        let Some(fr) = th.frames.last() else {
            return false;
        };
        if th.stuck {
            return false;
        }
        match &self.procs[fr.proc].code[fr.pc].op {
            Op::Join(slot) => {
                let target = fr.locals[*slot] as usize;
                st.threads.get(target).is_none_or(Thread::done)
            }
            _ => true,
        }
    }

    /// Execute thread `t` up to and including its next visible
    /// instruction. `steps` counts every executed instruction.
    pub fn step(
        &self,
        st: &mut State,
        t: usize,
        disabled: &BTreeSet<GuardId>,
        steps: &mut u64,
    ) -> Step {
        loop {
            let (proc, pc) = match st.threads[t].frames.last() {
                Some(f) => (f.proc, f.pc),
                None => return Step::Done,
            };
            let instr = &self.procs[proc].code[pc];
            let loc = instr.loc.clone();
            let fail = |message: &str| Step::Failed {
                loc: loc.clone(),
                message: message.to_string(),
            };
            *steps += 1;
            let State { globals, threads } = st;
            let nthreads = threads.len();
            let fr = threads[t].frames.last_mut().expect("frame");
            let env = Env {
                globals,
                locals: &fr.locals,
                disabled,
            };
            let mut ret = None;
            macro_rules! ev {
                ($e:expr) => {
                    match eval($e, &env) {
                        Ok(v) => v,
                        Err(EvalError::DivByZero) => return fail("division by zero"),
                    }
                };
            }
            match &instr.op {
                Op::Assign(lv, e) => {
                    let v = ev!(e);
                    store(lv, v, globals, &mut fr.locals);
                    fr.pc += 1;
                }
                Op::Call {
                    proc: callee, args, ..
                } => {
                    let vals = match self.arg_values(args, &env) {
                        Ok(v) => v,
                        Err(_) => return fail("division by zero"),
                    };
                    let frame = self.frame(*callee, vals);
                    threads[t].frames.push(frame);
                }
                Op::Async {
                    handle,
                    proc: callee,
                    args,
                } => {
                    let vals = match self.arg_values(args, &env) {
                        Ok(v) => v,
                        Err(_) => return fail("division by zero"),
                    };
                    fr.locals[*handle] = nthreads as i64;
                    fr.pc += 1;
                    let frame = self.frame(*callee, vals);
                    threads.push(Thread {
                        frames: vec![frame],
                        stuck: false,
                    });
                }
                Op::Join(slot) => {
                    let target = fr.locals[*slot] as usize;
                    if threads.get(target).is_some_and(|x| !x.done()) {
                        *steps -= 1;
                        return Step::Blocked;
                    }
                    threads[t].frames.last_mut().expect("frame").pc += 1;
                }
                Op::Branch(c, else_pc) => {
                    let v = ev!(c);
                    fr.pc = if v != 0 { pc + 1 } else { *else_pc };
                }
                Op::Jump(target) => fr.pc = *target,
                Op::LoopInit(counter) => {
                    fr.locals[*counter] = 0;
                    fr.pc += 1;
                }
                Op::LoopHead {
                    cond,
                    counter,
                    bound,
                    exit,
                } => {
                    let v = ev!(cond);
                    if v == 0 {
                        fr.pc = *exit;
                    } else if fr.locals[*counter] >= i64::from(*bound) {
                        return Step::Pruned;
                    } else {
                        fr.locals[*counter] += 1;
                        fr.pc += 1;
                    }
                }
                Op::Assert(e) => {
                    if ev!(e) == 0 {
                        return fail("assertion failed");
                    }
                    fr.pc += 1;
                }
                Op::Assume(e) => {
                    if ev!(e) == 0 {
                        *steps -= 1;
                        st.threads[t].stuck = true;
                        return Step::Blocked;
                    }
                    fr.pc += 1;
                }
                Op::Return(e) => {
                    let v = match e {
                        Some(e) => ev!(e),
                        None => 0,
                    };
                    ret = Some(v);
                }
                Op::End => ret = Some(0),
                Op::Yield { guard, conditional } => {
                    fr.pc += 1;
                    return Step::Yield {
                        loc,
                        guard: *guard,
                        conditional: *conditional,
                    };
                }
                Op::AtomicEnter => {
                    fr.atomic += 1;
                    fr.pc += 1;
                }
                Op::AtomicExit => {
                    fr.atomic = fr.atomic.saturating_sub(1);
                    fr.pc += 1;
                }
                Op::Nop => fr.pc += 1,
            }
            if let Some(v) = ret {
                self.pop_frame(st, t, v);
            }
            if instr.visible {
                return Step::Event(loc);
            }
        }
    }

    fn pop_frame(&self, st: &mut State, t: usize, value: i64) {
        let State { globals, threads } = st;
        threads[t].frames.pop();
        if let Some(caller) = threads[t].frames.last_mut() {
            if let Op::Call {
                target: Some(lv), ..
            } = &self.procs[caller.proc].code[caller.pc].op
            {
                store(lv, value, globals, &mut caller.locals);
            }
            caller.pc += 1;
        }
    }
}

fn store(lv: &CLval, v: i64, globals: &mut [i64], locals: &mut [i64]) {
    match lv {
        CLval::Global(s) => globals[*s] = v,
        CLval::Local(s) => locals[*s] = v,
        CLval::FieldRef(s, off) => globals[locals[*s] as usize + off] = v,
    }
}
