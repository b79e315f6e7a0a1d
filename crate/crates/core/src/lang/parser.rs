//! Hand-written lexer and recursive-descent parser for MiniConc sources.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::ast::*;
use super::LangError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
}

const SYMBOLS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "->", "+=", "-=", "{", "}", "(", ")", ";", ",", "=", "<",
    ">", "+", "-", "*", "/", "%", "!", ".", "&", "@",
];

fn lex(src: &str) -> Result<Vec<Token>, LangError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            let start = line;
            i += 2;
            loop {
                if i + 1 >= bytes.len() {
                    return Err(LangError::parse(start, "unterminated comment"));
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            let value = src[start..i]
                .parse::<i64>()
                .map_err(|e| LangError::parse(line, format!("bad integer: {e}")))?;
            out.push(Token {
                tok: Tok::Int(value),
                line,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                line,
            });
            continue;
        }
        match SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) {
            Some(s) => {
                out.push(Token {
                    tok: Tok::Sym(s),
                    line,
                });
                i += s.len();
            }
            None => {
                return Err(LangError::parse(
                    line,
                    format!("unexpected character `{c}`"),
                ))
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
    });
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "int", "bool", "void", "struct", "if", "else", "while", "assert", "assume", "yield", "return",
    "async", "join", "satomic", "watomic", "true", "false",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    structs: Vec<StructDef>,
    cur_proc: String,
}

/// Parse and validate a MiniConc program.
pub fn parse(source: &str) -> Result<Program, LangError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        structs: Vec::new(),
        cur_proc: String::new(),
    };
    let mut program = p.program()?;
    program.renumber();
    validate(&program)?;
    Ok(program)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, LangError> {
        Err(LangError::parse(self.line(), msg))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), LangError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<(), LangError> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, LangError> {
        match self.peek().clone() {
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                self.bump();
                Ok(name)
            }
            other => self.err(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn int_lit(&mut self) -> Result<i64, LangError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            other => self.err(format!("expected integer, found {}", describe(&other))),
        }
    }

    fn is_struct_name(&self, name: &str) -> bool {
        self.structs.iter().any(|s| s.name == name)
    }

    fn program(&mut self) -> Result<Program, LangError> {
        let mut globals = Vec::new();
        let mut procs = Vec::new();
        while *self.peek() != Tok::Eof {
            if self.is_kw("struct") {
                self.struct_decl(&mut globals)?;
                continue;
            }
            let line = self.line();
            let ty_name = match self.peek().clone() {
                Tok::Ident(n) => n,
                other => {
                    return self.err(format!("expected declaration, found {}", describe(&other)))
                }
            };
            self.bump();
            let ret = match ty_name.as_str() {
                "void" => None,
                "int" => Some(Ty::Int),
                "bool" => Some(Ty::Bool),
                n if self.is_struct_name(n) => Some(Ty::Record(n.to_string())),
                n => return Err(LangError::parse(line, format!("unknown type `{n}`"))),
            };
            let name = self.ident()?;
            if self.is_sym("(") {
                let ret = match ret {
                    None => RetTy::Void,
                    Some(Ty::Int) => RetTy::Int,
                    Some(Ty::Bool) => RetTy::Bool,
                    Some(Ty::Record(_)) => {
                        return Err(LangError::parse(line, "procedures cannot return records"))
                    }
                };
                procs.push(self.proc_rest(name, ret, line)?);
            } else {
                let ty = match ret {
                    Some(t) => t,
                    None => return Err(LangError::parse(line, "globals cannot be void")),
                };
                self.global_rest(name, ty, line, &mut globals)?;
            }
        }
        Ok(Program {
            structs: std::mem::take(&mut self.structs),
            globals,
            procs,
        })
    }

    fn struct_decl(&mut self, globals: &mut Vec<Global>) -> Result<(), LangError> {
        let line = self.line();
        self.expect_kw("struct")?;
        let name = self.ident()?;
        self.expect_sym("{")?;
        let mut fields = Vec::new();
        while !self.eat_sym("}") {
            if !(self.is_kw("int") || self.is_kw("bool")) {
                return self.err("record fields must be int or bool");
            }
            self.bump();
            fields.push(self.ident()?);
            self.expect_sym(";")?;
        }
        self.structs.push(StructDef {
            name: name.clone(),
            fields,
            line,
        });
        if !self.eat_sym(";") {
            loop {
                let var = self.ident()?;
                globals.push(Global {
                    name: var,
                    ty: Ty::Record(name.clone()),
                    init: None,
                    line,
                });
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(";")?;
        }
        Ok(())
    }

    fn global_rest(
        &mut self,
        first: String,
        ty: Ty,
        line: usize,
        globals: &mut Vec<Global>,
    ) -> Result<(), LangError> {
        let mut name = first;
        loop {
            let init = if self.eat_sym("=") {
                if matches!(ty, Ty::Record(_)) {
                    return self.err("records cannot have initializers");
                }
                Some(self.expr()?)
            } else {
                None
            };
            globals.push(Global {
                name,
                ty: ty.clone(),
                init,
                line,
            });
            if !self.eat_sym(",") {
                break;
            }
            name = self.ident()?;
        }
        self.expect_sym(";")
    }

    fn proc_rest(&mut self, name: String, ret: RetTy, line: usize) -> Result<Proc, LangError> {
        self.cur_proc = name.clone();
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.eat_sym(")") {
            loop {
                let ty = match self.peek().clone() {
                    Tok::Ident(t) if t == "int" => Ty::Int,
                    Tok::Ident(t) if t == "bool" => Ty::Bool,
                    Tok::Ident(t) if self.is_struct_name(&t) => Ty::Record(t),
                    other => {
                        return self.err(format!(
                            "expected parameter type, found {}",
                            describe(&other)
                        ))
                    }
                };
                self.bump();
                self.eat_sym("*");
                let pname = self.ident()?;
                params.push(Param { name: pname, ty });
                if self.eat_sym(")") {
                    break;
                }
                self.expect_sym(",")?;
            }
        }
        let body = self.block()?;
        Ok(Proc {
            name,
            ret,
            params,
            body,
            line,
        })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, LangError> {
        self.expect_sym("{")?;
        let mut out = Vec::new();
        while !self.eat_sym("}") {
            if *self.peek() == Tok::Eof {
                return self.err("unexpected end of input inside block");
            }
            let stmt = self.stmt()?;
            if let Some(prev) = out.last() {
                if matches!(
                    prev,
                    Stmt {
                        kind: StmtKind::Return(_),
                        ..
                    }
                ) {
                    return Err(LangError::parse(
                        stmt.loc.line,
                        "unreachable statement after return",
                    ));
                }
            }
            out.push(stmt);
        }
        Ok(out)
    }

    fn mk(&self, line: usize, kind: StmtKind) -> Stmt {
        Stmt::new(
            Location {
                proc: self.cur_proc.clone(),
                index: 0,
                line,
            },
            kind,
        )
    }

    fn stmt(&mut self) -> Result<Stmt, LangError> {
        let line = self.line();
        if self.eat_sym("@") {
            let ann = self.ident()?;
            return match ann.as_str() {
                "sync" => {
                    self.expect_kw("yield")?;
                    self.expect_sym(";")?;
                    Ok(self.mk(
                        line,
                        StmtKind::Yield(YieldStmt {
                            role: YieldRole::Explicit,
                            excluded: true,
                            guard: None,
                            conditional: false,
                        }),
                    ))
                }
                "bound" => {
                    self.expect_sym("(")?;
                    let k = self.int_lit()?;
                    self.expect_sym(")")?;
                    if !self.is_kw("while") {
                        return self.err("`@bound` must precede a while loop");
                    }
                    self.while_stmt(line, Some(k))
                }
                other => self.err(format!("unknown annotation `@{other}`")),
            };
        }
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            other => return self.err(format!("expected statement, found {}", describe(other))),
        };
        match kw.as_str() {
            "int" | "bool" => {
                self.bump();
                let ty = if kw == "int" {
                    ScalarTy::Int
                } else {
                    ScalarTy::Bool
                };
                let name = self.ident()?;
                let init = if self.eat_sym("=") {
                    Some(self.expr()?)
                } else {
                    None
                };
                self.expect_sym(";")?;
                Ok(self.mk(line, StmtKind::Local { name, ty, init }))
            }
            "if" => self.if_stmt(),
            "while" => self.while_stmt(line, None),
            "assert" | "assume" => {
                self.bump();
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                Ok(self.mk(
                    line,
                    if kw == "assert" {
                        StmtKind::Assert(e)
                    } else {
                        StmtKind::Assume(e)
                    },
                ))
            }
            "yield" => {
                self.bump();
                if self.eat_sym("(") {
                    self.expect_sym(")")?;
                }
                self.expect_sym(";")?;
                Ok(self.mk(
                    line,
                    StmtKind::Yield(YieldStmt {
                        role: YieldRole::Explicit,
                        excluded: false,
                        guard: None,
                        conditional: false,
                    }),
                ))
            }
            "return" => {
                self.bump();
                let e = if self.is_sym(";") {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect_sym(";")?;
                Ok(self.mk(line, StmtKind::Return(e)))
            }
            "satomic" | "watomic" => {
                self.bump();
                let body = self.block()?;
                let kind = if kw == "satomic" {
                    AtomicKind::Strong
                } else {
                    AtomicKind::Weak
                };
                Ok(self.mk(line, StmtKind::Atomic { kind, body }))
            }
            "join" => {
                self.bump();
                let paren = self.eat_sym("(");
                let handle = self.ident()?;
                if paren {
                    self.expect_sym(")")?;
                }
                self.expect_sym(";")?;
                Ok(self.mk(line, StmtKind::Join { handle }))
            }
            "async" => {
                self.bump();
                let (proc, args) = self.call_tail()?;
                self.expect_sym(";")?;
                Ok(self.mk(
                    line,
                    StmtKind::Async {
                        handle: format!("__anon{line}"),
                        proc,
                        args,
                    },
                ))
            }
            _ => self.simple_stmt(line),
        }
    }

    fn if_stmt(&mut self) -> Result<Stmt, LangError> {
        let line = self.line();
        self.expect_kw("if")?;
        self.expect_sym("(")?;
        let cond = self.expr()?;
        self.expect_sym(")")?;
        let then_body = self.block()?;
        let else_body = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                vec![self.if_stmt()?]
            } else {
                self.block()?
            }
        } else {
            Vec::new()
        };
        Ok(self.mk(
            line,
            StmtKind::If {
                cond,
                then_body,
                else_body,
            },
        ))
    }

    fn while_stmt(&mut self, line: usize, bound: Option<i64>) -> Result<Stmt, LangError> {
        let wline = self.line();
        self.expect_kw("while")?;
        self.expect_sym("(")?;
        let cond = self.expr()?;
        self.expect_sym(")")?;
        let mut bound = bound;
        if self.eat_sym("@") {
            let ann = self.ident()?;
            if ann != "bound" {
                return self.err(format!("unknown annotation `@{ann}`"));
            }
            self.expect_sym("(")?;
            bound = Some(self.int_lit()?);
            self.expect_sym(")")?;
        }
        let body = self.block()?;
        let bound = match bound {
            Some(k) if (0..=u32::MAX as i64).contains(&k) => k as u32,
            Some(k) => return Err(LangError::parse(line, format!("invalid loop bound {k}"))),
            None => {
                return Err(LangError::UnboundedLoop(Location {
                    proc: self.cur_proc.clone(),
                    index: 0,
                    line: wline,
                }))
            }
        };
        Ok(self.mk(line, StmtKind::While { cond, bound, body }))
    }

    fn call_tail(&mut self) -> Result<(String, Vec<Expr>), LangError> {
        let proc = self.ident()?;
        self.expect_sym("(")?;
        let mut args = Vec::new();
        if !self.eat_sym(")") {
            loop {
                self.eat_sym("&");
                args.push(self.expr()?);
                if self.eat_sym(")") {
                    break;
                }
                self.expect_sym(",")?;
            }
        }
        Ok((proc, args))
    }

    fn lvalue(&mut self) -> Result<LValue, LangError> {
        let base = self.ident()?;
        if self.eat_sym(".") || self.eat_sym("->") {
            Ok(LValue::Field(base, self.ident()?))
        } else {
            Ok(LValue::Var(base))
        }
    }

    fn simple_stmt(&mut self, line: usize) -> Result<Stmt, LangError> {
        if matches!(self.peek_at(1), Tok::Sym("(")) {
            let (proc, args) = self.call_tail()?;
            self.expect_sym(";")?;
            return Ok(self.mk(
                line,
                StmtKind::Call {
                    target: None,
                    proc,
                    args,
                },
            ));
        }
        let target = self.lvalue()?;
        let as_expr = match &target {
            LValue::Var(v) => Expr::Var(v.clone()),
            LValue::Field(b, f) => Expr::Field(b.clone(), f.clone()),
        };
        let kind = if self.eat_sym("+=") {
            StmtKind::Assign {
                target,
                value: Expr::binary(BinOp::Add, as_expr, self.expr()?),
            }
        } else if self.eat_sym("-=") {
            StmtKind::Assign {
                target,
                value: Expr::binary(BinOp::Sub, as_expr, self.expr()?),
            }
        } else {
            self.expect_sym("=")?;
            if self.is_kw("async") {
                self.bump();
                let handle = match target {
                    LValue::Var(v) => v,
                    LValue::Field(..) => return self.err("thread handles must be plain variables"),
                };
                let (proc, args) = self.call_tail()?;
                StmtKind::Async { handle, proc, args }
            } else if matches!(self.peek(), Tok::Ident(n) if !KEYWORDS.contains(&n.as_str()))
                && matches!(self.peek_at(1), Tok::Sym("("))
            {
                let (proc, args) = self.call_tail()?;
                StmtKind::Call {
                    target: Some(target),
                    proc,
                    args,
                }
            } else {
                StmtKind::Assign {
                    target,
                    value: self.expr()?,
                }
            }
        };
        self.expect_sym(";")?;
        Ok(self.mk(line, kind))
    }

    fn expr(&mut self) -> Result<Expr, LangError> {
        self.binary_level(0)
    }

    fn binary_level(&mut self, level: usize) -> Result<Expr, LangError> {
        const LEVELS: &[&[(&str, BinOp)]] = &[
            &[("||", BinOp::Or)],
            &[("&&", BinOp::And)],
            &[("==", BinOp::Eq), ("!=", BinOp::Ne)],
            &[
                ("<=", BinOp::Le),
                (">=", BinOp::Ge),
                ("<", BinOp::Lt),
                (">", BinOp::Gt),
            ],
            &[("+", BinOp::Add), ("-", BinOp::Sub)],
            &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Rem)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary_level(level + 1)?;
        'outer: loop {
            for (sym, op) in LEVELS[level] {
                if self.eat_sym(sym) {
                    let rhs = self.binary_level(level + 1)?;
                    lhs = Expr::binary(*op, lhs, rhs);
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, LangError> {
        if self.eat_sym("!") {
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        if self.eat_sym("-") {
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, LangError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Sym("&") => {
                self.bump();
                self.primary()
            }
            Tok::Ident(k) if k == "true" || k == "false" => {
                self.bump();
                Ok(Expr::Bool(k == "true"))
            }
            Tok::Ident(_) => {
                let base = self.ident()?;
                if self.eat_sym(".") || self.eat_sym("->") {
                    Ok(Expr::Field(base, self.ident()?))
                } else if self.is_sym("(") {
                    self.err("calls are only allowed as whole statements")
                } else {
                    Ok(Expr::Var(base))
                }
            }
            other => self.err(format!("expected expression, found {}", describe(&other))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Name resolution, arity, handle scoping and recursion checks.
fn validate(p: &Program) -> Result<(), LangError> {
    let mut seen = BTreeSet::new();
    for g in &p.globals {
        if !seen.insert(g.name.clone()) {
            return Err(LangError::parse(
                g.line,
                format!("duplicate global `{}`", g.name),
            ));
        }
    }
    let mut procs = BTreeSet::new();
    for pr in &p.procs {
        if !procs.insert(pr.name.clone()) {
            return Err(LangError::parse(
                pr.line,
                format!("duplicate procedure `{}`", pr.name),
            ));
        }
    }
    if p.proc("main").is_none() {
        return Err(LangError::parse(1, "missing `main` procedure"));
    }
    let mut calls: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for pr in &p.procs {
        let mut scope = Scope::new(p, pr);
        check_block(p, &pr.body, &mut scope)?;
        calls.insert(&pr.name, scope.callees);
    }
    // Recursion is rejected outright: exploration unrolls calls inline.
    fn visit<'a>(
        n: &'a str,
        calls: &'a BTreeMap<&str, BTreeSet<String>>,
        stack: &mut Vec<&'a str>,
        done: &mut BTreeSet<&'a str>,
    ) -> Option<String> {
        if stack.contains(&n) {
            return Some(n.to_string());
        }
        if done.contains(n) {
            return None;
        }
        stack.push(n);
        for c in calls.get(n).into_iter().flatten() {
            if let Some(r) = visit(c, calls, stack, done) {
                return Some(r);
            }
        }
        stack.pop();
        done.insert(n);
        None
    }
    let mut done = BTreeSet::new();
    for pr in &p.procs {
        if let Some(r) = visit(&pr.name, &calls, &mut Vec::new(), &mut done) {
            let line = p.proc(&r).map(|x| x.line).unwrap_or(1);
            return Err(LangError::parse(
                line,
                format!("recursive call cycle through `{r}`"),
            ));
        }
    }
    Ok(())
}

struct Scope<'a> {
    program: &'a Program,
    vars: HashMap<String, Ty>,
    handles: BTreeSet<String>,
    callees: BTreeSet<String>,
}

impl<'a> Scope<'a> {
    fn new(program: &'a Program, proc: &Proc) -> Self {
        let mut vars = HashMap::new();
        for prm in &proc.params {
            vars.insert(prm.name.clone(), prm.ty.clone());
        }
        Scope {
            program,
            vars,
            handles: BTreeSet::new(),
            callees: BTreeSet::new(),
        }
    }

    fn ty_of(&self, name: &str) -> Option<Ty> {
        self.vars
            .get(name)
            .cloned()
            .or_else(|| self.program.global(name).map(|g| g.ty.clone()))
    }

    fn check_ref(&self, line: usize, base: &str, field: Option<&str>) -> Result<(), LangError> {
        let ty = self
            .ty_of(base)
            .ok_or_else(|| LangError::parse(line, format!("undeclared name `{base}`")))?;
        match (ty, field) {
            (Ty::Record(s), Some(f)) => {
                let def = self.program.struct_def(&s).expect("record type declared");
                if def.fields.iter().any(|x| x == f) {
                    Ok(())
                } else {
                    Err(LangError::parse(line, format!("`{s}` has no field `{f}`")))
                }
            }
            (Ty::Record(_), None) => Ok(()),
            (_, Some(f)) => Err(LangError::parse(
                line,
                format!("`{base}` is not a record (field `{f}`)"),
            )),
            (_, None) => Ok(()),
        }
    }

    fn check_expr(&self, line: usize, e: &Expr) -> Result<(), LangError> {
        let mut res = Ok(());
        e.for_each_ref(&mut |r| {
            if res.is_err() {
                return;
            }
            res = match r {
                Expr::Var(v) => self.check_ref(line, v, None),
                Expr::Field(b, f) => self.check_ref(line, b, Some(f)),
                _ => Ok(()),
            };
        });
        res
    }

    fn check_lvalue(&self, line: usize, lv: &LValue) -> Result<(), LangError> {
        match lv {
            LValue::Var(v) => match self.ty_of(v) {
                Some(Ty::Record(_)) => Err(LangError::parse(
                    line,
                    format!("cannot assign record `{v}`"),
                )),
                Some(_) => Ok(()),
                None => Err(LangError::parse(line, format!("undeclared name `{v}`"))),
            },
            LValue::Field(b, f) => self.check_ref(line, b, Some(f)),
        }
    }

    fn check_call(
        &mut self,
        line: usize,
        proc: &str,
        args: &[Expr],
        is_call: bool,
    ) -> Result<(), LangError> {
        let target = self
            .program
            .proc(proc)
            .ok_or_else(|| LangError::parse(line, format!("undeclared procedure `{proc}`")))?;
        if target.params.len() != args.len() {
            return Err(LangError::parse(
                line,
                format!(
                    "`{proc}` expects {} arguments, got {}",
                    target.params.len(),
                    args.len()
                ),
            ));
        }
        for (prm, a) in target.params.iter().zip(args) {
            self.check_expr(line, a)?;
            if let Ty::Record(s) = &prm.ty {
                let ok = match a {
                    Expr::Var(v) => matches!(self.ty_of(v), Some(Ty::Record(t)) if &t == s),
                    _ => false,
                };
                if !ok {
                    return Err(LangError::parse(
                        line,
                        format!("argument for `{}` must be a `{s}` record", prm.name),
                    ));
                }
            }
        }
        if is_call {
            self.callees.insert(proc.to_string());
        }
        Ok(())
    }
}

fn check_block(p: &Program, block: &[Stmt], scope: &mut Scope) -> Result<(), LangError> {
    for s in block {
        let line = s.loc.line;
        match &s.kind {
            StmtKind::Local { name, ty, init } => {
                if let Some(e) = init {
                    scope.check_expr(line, e)?;
                }
                let ty = match ty {
                    ScalarTy::Int => Ty::Int,
                    ScalarTy::Bool => Ty::Bool,
                };
                scope.vars.insert(name.clone(), ty);
            }
            StmtKind::Assign { target, value } => {
                scope.check_expr(line, value)?;
                scope.check_lvalue(line, target)?;
            }
            StmtKind::Call { target, proc, args } => {
                scope.check_call(line, proc, args, true)?;
                if let Some(t) = target {
                    if p.proc(proc).map(|x| x.ret) == Some(RetTy::Void) {
                        return Err(LangError::parse(line, format!("`{proc}` returns no value")));
                    }
                    scope.check_lvalue(line, t)?;
                }
            }
            StmtKind::Async { handle, proc, args } => {
                scope.check_call(line, proc, args, false)?;
                if scope.program.global(handle).is_some() {
                    return Err(LangError::parse(
                        line,
                        format!("thread handle `{handle}` shadows a global"),
                    ));
                }
                scope.vars.insert(handle.clone(), Ty::Int);
                scope.handles.insert(handle.clone());
            }
            StmtKind::Join { handle } => {
                if !scope.handles.contains(handle) {
                    return Err(LangError::parse(
                        line,
                        format!("`{handle}` is not bound by an async"),
                    ));
                }
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                scope.check_expr(line, cond)?;
                check_block(p, then_body, scope)?;
                check_block(p, else_body, scope)?;
            }
            StmtKind::While { cond, body, .. } => {
                scope.check_expr(line, cond)?;
                check_block(p, body, scope)?;
            }
            StmtKind::Assert(e) | StmtKind::Assume(e) => scope.check_expr(line, e)?,
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    scope.check_expr(line, e)?;
                }
            }
            StmtKind::Atomic { body, .. } => check_block(p, body, scope)?,
            StmtKind::Yield(_) => {}
        }
    }
    Ok(())
}
