//! Per-procedure control-flow graphs and reconstruction of atomic regions
//! from a chosen set of yield points.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::lang::{walk, GuardId, LangError, Location, Program, Region, Stmt, StmtKind};

pub const ENTRY: usize = 0;
pub const EXIT: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    /// `None` for the synthetic entry and exit nodes.
    pub loc: Option<Location>,
    pub guard: Option<GuardId>,
    pub is_yield: bool,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcCfg {
    pub proc: String,
    /// Node 0 is the entry, node 1 the exit, node `i + 2` the statement with
    /// pre-order index `i`.
    pub nodes: Vec<Node>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
    /// Loop back-edges `(from, header, bound)`.
    pub back_edges: Vec<(usize, usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub procs: Vec<ProcCfg>,
}

impl Location {
    /// Stand-in location for a procedure's synthetic entry node.
    pub fn entry_of(proc: &str) -> Location {
        Location {
            proc: proc.to_string(),
            index: usize::MAX - 1,
            line: 0,
        }
    }

    /// Stand-in location for a procedure's synthetic exit node.
    pub fn exit_of(proc: &str) -> Location {
        Location {
            proc: proc.to_string(),
            index: usize::MAX,
            line: 0,
        }
    }
}

/// One CFG per procedure; branches fan out and loop back-edges carry their
/// bound.
pub fn build_cfg(p: &Program) -> Cfg {
    Cfg {
        procs: p
            .procs
            .iter()
            .map(|proc| build_proc(&proc.name, &proc.body))
            .collect(),
    }
}

fn build_proc(name: &str, body: &[Stmt]) -> ProcCfg {
    let mut count = 0;
    walk(body, &mut |_| count += 1);
    let mut nodes = vec![
        Node {
            loc: None,
            guard: None,
            is_yield: false,
            label: "entry".into(),
        },
        Node {
            loc: None,
            guard: None,
            is_yield: false,
            label: "exit".into(),
        },
    ];
    nodes.resize(
        count + 2,
        Node {
            loc: None,
            guard: None,
            is_yield: false,
            label: String::new(),
        },
    );
    walk(body, &mut |s| {
        let y = s.as_yield();
        nodes[s.loc.index + 2] = Node {
            loc: Some(s.loc.clone()),
            guard: y.and_then(|y| y.guard),
            is_yield: y.is_some(),
            label: label_of(s),
        };
    });
    let mut b = Builder {
        succ: vec![Vec::new(); count + 2],
        back_edges: Vec::new(),
        loops: Vec::new(),
    };
    let first = b.lower(body, EXIT);
    b.edge(ENTRY, first);
    let mut pred = vec![Vec::new(); count + 2];
    for (from, ss) in b.succ.iter().enumerate() {
        for &to in ss {
            pred[to].push(from);
        }
    }
    ProcCfg {
        proc: name.to_string(),
        nodes,
        succ: b.succ,
        pred,
        back_edges: b.back_edges,
    }
}

fn label_of(s: &Stmt) -> String {
    match &s.kind {
        StmtKind::Yield(y) => match y.guard {
            Some(g) => format!("yield {g}"),
            None => "yield".into(),
        },
        StmtKind::Local { name, .. } => format!("local {name}"),
        StmtKind::Assign { .. } => "assign".into(),
        StmtKind::Call { proc, .. } => format!("call {proc}"),
        StmtKind::Async { proc, .. } => format!("async {proc}"),
        StmtKind::Join { handle } => format!("join {handle}"),
        StmtKind::If { .. } => "if".into(),
        StmtKind::While { bound, .. } => format!("while bound {bound}"),
        StmtKind::Assert(_) => "assert".into(),
        StmtKind::Assume(_) => "assume".into(),
        StmtKind::Return(_) => "return".into(),
        StmtKind::Atomic { kind, .. } => format!("{kind:?} atomic").to_lowercase(),
    }
}

struct Builder {
    succ: Vec<Vec<usize>>,
    back_edges: Vec<(usize, usize, u32)>,
    loops: Vec<(usize, u32)>,
}

impl Builder {
    fn edge(&mut self, from: usize, to: usize) {
        if !self.succ[from].contains(&to) {
            self.succ[from].push(to);
            if let Some(&(header, bound)) = self.loops.iter().rev().find(|(h, _)| *h == to) {
                self.back_edges.push((from, header, bound));
            }
        }
    }

    /// Wire up a block whose fall-through continues at `follow`; returns
    /// the node control enters the block at.
    fn lower(&mut self, block: &[Stmt], follow: usize) -> usize {
        let mut next = follow;
        for s in block.iter().rev() {
            next = self.lower_stmt(s, next);
        }
        next
    }

    fn lower_stmt(&mut self, s: &Stmt, follow: usize) -> usize {
        let n = s.loc.index + 2;
        match &s.kind {
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                let t = self.lower(then_body, follow);
                let e = self.lower(else_body, follow);
                self.edge(n, t);
                self.edge(n, e);
            }
            StmtKind::While { body, bound, .. } => {
                self.loops.push((n, *bound));
                let b = self.lower(body, n);
                self.loops.pop();
                self.edge(n, b);
                self.edge(n, follow);
            }
            StmtKind::Atomic { body, .. } => {
                let b = self.lower(body, follow);
                self.edge(n, b);
            }
            StmtKind::Return(_) => self.edge(n, EXIT),
            _ => self.edge(n, follow),
        }
        n
    }
}

impl ProcCfg {
    pub fn node_of(&self, loc: &Location) -> Option<usize> {
        if loc.proc != self.proc {
            return None;
        }
        if *loc == Location::entry_of(&self.proc) {
            return Some(ENTRY);
        }
        if *loc == Location::exit_of(&self.proc) {
            return Some(EXIT);
        }
        let n = loc.index.checked_add(2)?;
        (self.nodes.get(n)?.loc.as_ref() == Some(loc)).then_some(n)
    }

    pub fn loc_of(&self, n: usize) -> Location {
        match n {
            ENTRY => Location::entry_of(&self.proc),
            EXIT => Location::exit_of(&self.proc),
            _ => self.nodes[n].loc.clone().expect("statement node"),
        }
    }

    pub fn yield_node(&self, g: GuardId) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.is_yield && n.guard == Some(g))
    }

    /// `dom[v]` holds every node dominating `v` (including `v`).
    pub fn dominators(&self) -> Vec<BTreeSet<usize>> {
        dataflow_dominators(self.nodes.len(), ENTRY, &self.pred)
    }

    /// `pdom[v]` holds every node post-dominating `v` (including `v`).
    pub fn post_dominators(&self) -> Vec<BTreeSet<usize>> {
        dataflow_dominators(self.nodes.len(), EXIT, &self.succ)
    }
}

/// Iterative dataflow: dom(root) = {root}, dom(v) = {v} ∪ ⋂ dom(p) over
/// predecessors. Nodes unreachable from the root keep the full set.
pub fn dataflow_dominators(n: usize, root: usize, preds: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let all: BTreeSet<usize> = (0..n).collect();
    let mut dom = vec![all; n];
    dom[root] = BTreeSet::from([root]);
    let mut changed = true;
    while changed {
        changed = false;
        for v in 0..n {
            if v == root {
                continue;
            }
            let mut acc: Option<BTreeSet<usize>> = None;
            for &p in &preds[v] {
                acc = Some(match acc {
                    None => dom[p].clone(),
                    Some(a) => a.intersection(&dom[p]).copied().collect(),
                });
            }
            let mut next = acc.unwrap_or_default();
            next.insert(v);
            if preds[v].is_empty() {
                // Unreachable: leave it dominated by everything.
                continue;
            }
            if next != dom[v] {
                dom[v] = next;
                changed = true;
            }
        }
    }
    dom
}

impl Cfg {
    pub fn proc(&self, name: &str) -> Option<&ProcCfg> {
        self.procs.iter().find(|p| p.proc == name)
    }

    fn find_yield(&self, g: GuardId) -> Option<(&ProcCfg, usize)> {
        self.procs
            .iter()
            .find_map(|p| p.yield_node(g).map(|n| (p, n)))
    }

    /// Statements that must run without interruption when the yields of
    /// `chosen` are disabled: each chosen yield, the statement(s) it
    /// precedes, and everything back to the previous permitted switch point.
    pub fn protected_points(&self, chosen: &BTreeSet<GuardId>) -> BTreeSet<Location> {
        let mut out = BTreeSet::new();
        for &g in chosen {
            let Some((pc, y)) = self.find_yield(g) else {
                continue;
            };
            let mut mark = vec![false; pc.nodes.len()];
            mark[y] = true;
            for &s in &pc.succ[y] {
                if s != EXIT {
                    mark[s] = true;
                }
            }
            let mut stack = vec![y];
            while let Some(v) = stack.pop() {
                for &p in &pc.pred[v] {
                    if p == ENTRY || mark[p] {
                        continue;
                    }
                    let node = &pc.nodes[p];
                    let passable =
                        !node.is_yield || node.guard.is_some_and(|h| chosen.contains(&h));
                    if passable {
                        mark[p] = true;
                        stack.push(p);
                    }
                }
            }
            for (n, m) in mark.iter().enumerate() {
                if *m {
                    out.insert(pc.loc_of(n));
                }
            }
        }
        out
    }

    /// Regions for a chosen guard set: the connected components of its
    /// protected points.
    pub fn regions_for(&self, chosen: &BTreeSet<GuardId>) -> Vec<Region> {
        let mut regions = connected_regions(self, &self.protected_points(chosen));
        for r in &mut regions {
            r.guards = self.guards_in(&r.locations, chosen);
        }
        regions
    }

    fn guards_in(&self, locs: &[Location], chosen: &BTreeSet<GuardId>) -> Vec<GuardId> {
        let mut out = Vec::new();
        for l in locs {
            if let Some(pc) = self.proc(&l.proc) {
                if let Some(n) = pc.node_of(l) {
                    if let Some(g) = pc.nodes[n].guard {
                        if chosen.contains(&g) {
                            out.push(g);
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Graphviz rendering of every procedure graph.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box, fontname=monospace];\n");
        for (pi, pc) in self.procs.iter().enumerate() {
            let _ = writeln!(
                out,
                "  subgraph cluster_{pi} {{\n    label=\"{}\";",
                pc.proc
            );
            for (n, node) in pc.nodes.iter().enumerate() {
                let line = node
                    .loc
                    .as_ref()
                    .map(|l| format!(" @{}", l.line))
                    .unwrap_or_default();
                let _ = writeln!(out, "    p{pi}n{n} [label=\"{}{}\"];", node.label, line);
            }
            for (from, ss) in pc.succ.iter().enumerate() {
                for &to in ss {
                    let back = pc
                        .back_edges
                        .iter()
                        .find(|(f, t, _)| *f == from && *t == to);
                    match back {
                        Some((_, _, b)) => {
                            let _ = writeln!(out, "    p{pi}n{from} -> p{pi}n{to} [style=dashed, label=\"bound {b}\"];");
                        }
                        None => {
                            let _ = writeln!(out, "    p{pi}n{from} -> p{pi}n{to};");
                        }
                    }
                }
            }
            out.push_str("  }\n");
        }
        out.push_str("}\n");
        out
    }
}

/// Partition `s` into maximal components connected by CFG paths that stay
/// inside `s`.
pub fn connected_regions(cfg: &Cfg, s: &BTreeSet<Location>) -> Vec<Region> {
    let mut by_proc: BTreeMap<&str, Vec<&Location>> = BTreeMap::new();
    for l in s {
        by_proc.entry(l.proc.as_str()).or_default().push(l);
    }
    let mut out = Vec::new();
    for pc in &cfg.procs {
        let Some(locs) = by_proc.get(pc.proc.as_str()) else {
            continue;
        };
        let members: BTreeSet<usize> = locs.iter().filter_map(|l| pc.node_of(l)).collect();
        let mut seen = BTreeSet::new();
        for &start in &members {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut stack = vec![start];
            seen.insert(start);
            while let Some(v) = stack.pop() {
                comp.insert(v);
                for &w in pc.succ[v].iter().chain(&pc.pred[v]) {
                    if members.contains(&w) && seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
            out.push(Region {
                proc: pc.proc.clone(),
                locations: comp.iter().map(|&n| pc.loc_of(n)).collect(),
                guards: comp.iter().filter_map(|&n| pc.nodes[n].guard).collect(),
                lexical: None,
            });
        }
    }
    out.sort_by(|a, b| a.locations.cmp(&b.locations));
    out
}

/// Extend a region to every statement between its nearest common dominator
/// and nearest common post-dominator.
pub fn lexicalize(cfg: &Cfg, r: &Region) -> Result<Region, LangError> {
    let procs: BTreeSet<&str> = r.locations.iter().map(|l| l.proc.as_str()).collect();
    if procs.len() > 1 {
        return Err(LangError::RegionNotLexical(format!(
            "region spans procedures {}",
            procs.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let pc = cfg
        .proc(&r.proc)
        .ok_or_else(|| LangError::RegionNotLexical(format!("unknown procedure `{}`", r.proc)))?;
    let members: BTreeSet<usize> = r.locations.iter().filter_map(|l| pc.node_of(l)).collect();
    if members.is_empty() {
        return Ok(r.clone());
    }
    let dom = pc.dominators();
    let pdom = pc.post_dominators();
    let d = nearest_common(&dom, &members);
    let pd = nearest_common(&pdom, &members);
    let mut set = members.clone();
    for v in 0..pc.nodes.len() {
        if v != ENTRY && v != EXIT && dom[v].contains(&d) && pdom[v].contains(&pd) {
            set.insert(v);
        }
    }
    set.remove(&ENTRY);
    set.remove(&EXIT);
    let mut guards: Vec<GuardId> = set.iter().filter_map(|&n| pc.nodes[n].guard).collect();
    guards.retain(|g| r.guards.contains(g) || members.contains(&pc.yield_node(*g).unwrap_or(0)));
    Ok(Region {
        proc: r.proc.clone(),
        locations: set.iter().map(|&n| pc.loc_of(n)).collect(),
        guards,
        lexical: Some((pc.loc_of(d), pc.loc_of(pd))),
    })
}

/// Deepest node common to the (post-)dominator sets of all members.
fn nearest_common(dom: &[BTreeSet<usize>], members: &BTreeSet<usize>) -> usize {
    let mut common: Option<BTreeSet<usize>> = None;
    for &m in members {
        common = Some(match common {
            None => dom[m].clone(),
            Some(c) => c.intersection(&dom[m]).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    // Common dominators form a chain; the nearest one has the largest set.
    common
        .iter()
        .copied()
        .max_by_key(|&c| dom[c].len())
        .expect("root dominates every reachable node")
}

/// Lexicalize every region, merging regions whose extended spans overlap
/// until no two overlap.
pub fn lexicalize_all(cfg: &Cfg, regions: &[Region]) -> Result<Vec<Region>, LangError> {
    let mut current: Vec<Region> = regions
        .iter()
        .map(|r| lexicalize(cfg, r))
        .collect::<Result<_, _>>()?;
    loop {
        let mut merged = false;
        'outer: for i in 0..current.len() {
            for j in i + 1..current.len() {
                let (a, b) = (&current[i], &current[j]);
                if a.proc == b.proc && a.locations.iter().any(|l| b.locations.contains(l)) {
                    let mut locs: BTreeSet<Location> = a.locations.iter().cloned().collect();
                    locs.extend(b.locations.iter().cloned());
                    let mut guards = a.guards.clone();
                    guards.extend(&b.guards);
                    guards.sort();
                    guards.dedup();
                    let union = Region {
                        proc: a.proc.clone(),
                        locations: locs.into_iter().collect(),
                        guards,
                        lexical: None,
                    };
                    let next = lexicalize(cfg, &union)?;
                    current.remove(j);
                    current[i] = next;
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    current.sort_by(|a, b| a.locations.cmp(&b.locations));
    Ok(current)
}
