//! Replays a program under OpenMP device data environment semantics and logs
//! host/device transfers and reads of stale data.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use crate::access::{classify_accesses, elem_size, AccessKind, MemoryAccess, Space};
use crate::astcfg::{build_all, AstCfg};
use crate::bounds::extract_for_bounds;
use crate::error::{Error, Result};
use crate::frontend::{Dim, DirectiveKind, MapType, NodeId, NodeKind, OmpDirectiveInfo, TranslationUnit, UnOp};
use crate::interproc::{apply_call_effects, summarize_all};
use crate::source::SourceFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    /// Data directives and map clauses are ignored; kernels use the default rules.
    Implicit,
    /// Directives and clauses in the file are honoured.
    #[default]
    Annotated,
}

impl SimMode {
    pub fn parse(s: &str) -> Option<SimMode> {
        match s {
            "implicit" => Some(SimMode::Implicit),
            "annotated" => Some(SimMode::Annotated),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimMode::Implicit => "implicit",
            SimMode::Annotated => "annotated",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Values for names in bounds and element counts for pointers.
    pub sizes: BTreeMap<String, i64>,
    /// Trip count of loops whose bounds cannot be resolved.
    pub trip_default: u64,
    /// Element count of pointers without a size binding.
    pub default_count: u64,
    pub mode: SimMode,
    /// Upper bound on executed statements.
    pub step_budget: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sizes: BTreeMap::new(),
            trip_default: 2,
            default_count: 1,
            mode: SimMode::Annotated,
            step_budget: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HtoD,
    DtoH,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::HtoD => "HtoD",
            Direction::DtoH => "DtoH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferEvent {
    pub dir: Direction,
    pub var: String,
    pub bytes: u64,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaleRead {
    pub var: String,
    pub space: Space,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferLog {
    pub htod_calls: u64,
    pub dtoh_calls: u64,
    pub htod_bytes: u64,
    pub dtoh_bytes: u64,
    pub events: Vec<TransferEvent>,
    pub stale_reads: Vec<StaleRead>,
    /// Variables whose reference count is nonzero at the end.
    pub unbalanced: Vec<String>,
}

impl TransferLog {
    fn record(&mut self, dir: Direction, var: &str, bytes: u64, line: usize) {
        match dir {
            Direction::HtoD => {
                self.htod_calls += 1;
                self.htod_bytes += bytes;
            }
            Direction::DtoH => {
                self.dtoh_calls += 1;
                self.dtoh_bytes += bytes;
            }
        }
        self.events.push(TransferEvent {
            dir,
            var: var.to_string(),
            bytes,
            line,
        });
    }

    pub fn calls(&self, dir: Direction) -> u64 {
        match dir {
            Direction::HtoD => self.htod_calls,
            Direction::DtoH => self.dtoh_calls,
        }
    }

    pub fn bytes(&self, dir: Direction) -> u64 {
        match dir {
            Direction::HtoD => self.htod_bytes,
            Direction::DtoH => self.dtoh_bytes,
        }
    }

    /// Machine-readable summary, one `direction calls bytes` line each.
    pub fn summary_lines(&self) -> String {
        format!(
            "HtoD {} {}\nDtoH {} {}\nstale {}\n",
            self.htod_calls,
            self.htod_bytes,
            self.dtoh_calls,
            self.dtoh_bytes,
            self.stale_reads.len()
        )
    }
}

impl fmt::Display for TransferLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>10} {:>14}", "dir", "calls", "bytes")?;
        writeln!(f, "{:<6} {:>10} {:>14}", "HtoD", self.htod_calls, self.htod_bytes)?;
        writeln!(f, "{:<6} {:>10} {:>14}", "DtoH", self.dtoh_calls, self.dtoh_bytes)?;
        for s in &self.stale_reads {
            writeln!(f, "stale read of '{}' on {} at line {}", s.var, s.space, s.line)?;
        }
        for v in &self.unbalanced {
            writeln!(f, "unbalanced mapping of '{v}'")?;
        }
        writeln!(f, "stale reads: {}", self.stale_reads.len())
    }
}

/// Ratios of two logs per direction (`a / b`).
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub htod_bytes: f64,
    pub dtoh_bytes: f64,
    pub htod_calls: f64,
    pub dtoh_calls: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    match (a, b) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        _ => a as f64 / b as f64,
    }
}

pub fn compare(a: &TransferLog, b: &TransferLog) -> Comparison {
    Comparison {
        htod_bytes: ratio(a.htod_bytes, b.htod_bytes),
        dtoh_bytes: ratio(a.dtoh_bytes, b.dtoh_bytes),
        htod_calls: ratio(a.htod_calls, b.htod_calls),
        dtoh_calls: ratio(a.dtoh_calls, b.dtoh_calls),
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "HtoD bytes ratio {:.2}x", self.htod_bytes)?;
        writeln!(f, "DtoH bytes ratio {:.2}x", self.dtoh_bytes)?;
        writeln!(f, "HtoD calls ratio {:.2}x", self.htod_calls)?;
        writeln!(f, "DtoH calls ratio {:.2}x", self.dtoh_calls)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct VarState {
    host: u64,
    dev: u64,
    latest: u64,
    refs: u32,
}

impl VarState {
    fn ver(&self, s: Space) -> u64 {
        match s {
            Space::Host => self.host,
            Space::Device => self.dev,
        }
    }

    fn set(&mut self, s: Space, v: u64) {
        match s {
            Space::Host => self.host = v,
            Space::Device => self.dev = v,
        }
    }

    fn valid(&self, s: Space) -> bool {
        self.ver(s) == self.latest
    }
}

const FRESH: VarState = VarState {
    host: 1,
    dev: 0,
    latest: 1,
    refs: 0,
};

/// Both arms of an unresolved branch: a copy stays valid only if valid in both.
fn merge(a: &HashMap<NodeId, VarState>, b: &HashMap<NodeId, VarState>) -> HashMap<NodeId, VarState> {
    let mut out = a.clone();
    for k in b.keys() {
        out.entry(*k).or_insert(FRESH);
    }
    for (k, s) in out.iter_mut() {
        let t = b.get(k).copied().unwrap_or(FRESH);
        let latest = s.latest.max(t.latest);
        let pick = |sp: Space| {
            if s.valid(sp) && t.valid(sp) {
                latest
            } else {
                s.ver(sp).min(t.ver(sp))
            }
        };
        *s = VarState {
            host: pick(Space::Host),
            dev: pick(Space::Device),
            latest,
            refs: s.refs,
        };
    }
    out
}

struct FnInfo<'a> {
    /// Evaluated AST piece → CFG node.
    node_of: HashMap<NodeId, usize>,
    /// Accesses per CFG node.
    ops: Vec<Vec<&'a MemoryAccess>>,
}

#[derive(Clone, Default)]
struct Frame {
    func: NodeId,
    alias: HashMap<NodeId, NodeId>,
}

struct Machine<'a> {
    tu: &'a TranslationUnit,
    file: &'a SourceFile,
    cfg: &'a SimConfig,
    funcs: HashMap<NodeId, FnInfo<'a>>,
    vars: HashMap<NodeId, VarState>,
    counter: u64,
    counting: bool,
    log: TransferLog,
    stale_seen: HashSet<(NodeId, Space, u64)>,
    steps: u64,
    depth: usize,
    /// The current path has left through a jump.
    dead: bool,
    flows: Vec<Flow>,
    returns: Vec<Vars>,
}

type Vars = HashMap<NodeId, VarState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Jump {
    Break,
    Continue,
    Return,
}

/// States collected by jumps out of a loop or switch.
#[derive(Default)]
struct Flow {
    switch: bool,
    breaks: Vec<Vars>,
    continues: Vec<Vars>,
}

/// Simulate a translation unit.
pub fn simulate(tu: &TranslationUnit, file: &SourceFile, config: &SimConfig) -> Result<TransferLog> {
    if config.trip_default == 0 {
        return Err(Error::Config("default trip count must be at least 1".into()));
    }
    let cfgs = build_all(tu, file)?;
    let raw = cfgs
        .iter()
        .map(|c| classify_accesses(tu, file, c))
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize_all(tu, &cfgs, &raw);
    let accesses: Vec<Vec<MemoryAccess>> = raw.iter().map(|fa| apply_call_effects(tu, fa, &summaries)).collect();
    let mut funcs = HashMap::new();
    for (cfg, acc) in cfgs.iter().zip(&accesses) {
        let mut node_of = HashMap::new();
        for n in &cfg.graph.nodes {
            if let Some(a) = n.ast {
                node_of.entry(a).or_insert(n.id);
            }
        }
        let mut ops = vec![Vec::new(); cfg.graph.nodes.len()];
        for m in acc {
            ops[m.cfg_node].push(m);
        }
        funcs.insert(cfg.function, FnInfo { node_of, ops });
    }
    let mut m = Machine {
        tu,
        file,
        cfg: config,
        funcs,
        vars: HashMap::new(),
        counter: 1,
        counting: true,
        log: TransferLog::default(),
        stale_seen: HashSet::new(),
        steps: 0,
        depth: 0,
        dead: false,
        flows: Vec::new(),
        returns: Vec::new(),
    };
    for f in roots(tu, &cfgs) {
        m.run_function(Frame {
            func: f,
            alias: HashMap::new(),
        })?;
    }
    let mut unbalanced: Vec<String> = m
        .vars
        .iter()
        .filter(|(_, s)| s.refs != 0)
        .map(|(k, _)| tu.ast.name(*k).unwrap_or_default().to_string())
        .collect();
    unbalanced.sort();
    m.log.unbalanced = unbalanced;
    Ok(m.log)
}

/// `main` when present, otherwise every defined function no one calls.
fn roots(tu: &TranslationUnit, cfgs: &[AstCfg]) -> Vec<NodeId> {
    if let Some(m) = tu.function_named("main").filter(|&f| tu.ast.function_body(f).is_some()) {
        return vec![m];
    }
    let called: HashSet<&str> = cfgs
        .iter()
        .flat_map(|c| c.call_sites.iter().filter_map(|s| s.callee.as_deref()))
        .collect();
    cfgs.iter()
        .filter(|c| !called.contains(c.name.as_str()))
        .map(|c| c.function)
        .collect()
}

const MAX_CALL_DEPTH: usize = 32;

impl Machine<'_> {
    fn tick(&mut self) -> Result<()> {
        self.steps += 1;
        if self.steps > self.cfg.step_budget {
            return Err(Error::Config(format!(
                "simulation exceeded {} steps; lower the size bindings",
                self.cfg.step_budget
            )));
        }
        Ok(())
    }

    fn lookup(&self, name: &str) -> Option<i64> {
        self.cfg
            .sizes
            .get(name)
            .copied()
            .or_else(|| self.tu.defines.get(name).copied())
    }

    fn fold(&self, e: NodeId) -> Option<i64> {
        self.tu.ast.eval_const(e, &|n| self.lookup(n))
    }

    fn line(&self, n: NodeId) -> usize {
        self.file.line_of(self.tu.ast.span(n).start)
    }

    fn name(&self, k: NodeId) -> String {
        self.tu.ast.name(k).unwrap_or_default().to_string()
    }

    fn key(fr: &Frame, decl: NodeId) -> NodeId {
        fr.alias.get(&decl).copied().unwrap_or(decl)
    }

    fn state(&mut self, k: NodeId) -> &mut VarState {
        self.vars.entry(k).or_insert(FRESH)
    }

    fn count_of(&self, k: NodeId) -> u64 {
        let Some(ty) = self.tu.ast.node(k).type_info.as_ref() else {
            return 1;
        };
        let bound = || {
            self.cfg
                .sizes
                .get(self.tu.ast.name(k).unwrap_or_default())
                .map(|&v| v.max(0) as u64)
        };
        if !ty.dims.is_empty() {
            return ty
                .dims
                .iter()
                .map(|d| match d {
                    Dim::Const(c) => *c,
                    Dim::Expr(e) => self
                        .fold(*e)
                        .map(|v| v.max(0) as u64)
                        .or_else(bound)
                        .unwrap_or(self.cfg.default_count),
                    Dim::Unsized => bound().unwrap_or(self.cfg.default_count),
                })
                .product();
        }
        if ty.pointer_depth > 0 {
            return bound().unwrap_or(self.cfg.default_count);
        }
        1
    }

    fn bytes_of(&self, k: NodeId) -> u64 {
        let elem = self
            .tu
            .ast
            .node(k)
            .type_info
            .as_ref()
            .map(|t| elem_size(self.tu, t))
            .unwrap_or(1);
        self.count_of(k) * elem
    }

    fn read(&mut self, k: NodeId, space: Space, line: usize) {
        let s = *self.state(k);
        if !s.valid(space) && self.stale_seen.insert((k, space, s.latest)) {
            let var = self.name(k);
            self.log.stale_reads.push(StaleRead { var, space, line });
        }
    }

    fn write(&mut self, k: NodeId, space: Space) {
        self.counter += 1;
        let c = self.counter;
        let s = self.state(k);
        s.set(space, c);
        s.latest = c;
    }

    fn copy(&mut self, k: NodeId, dir: Direction, line: usize) {
        let s = self.state(k);
        match dir {
            Direction::HtoD => s.dev = s.host,
            Direction::DtoH => s.host = s.dev,
        }
        if self.counting {
            let (var, bytes) = (self.name(k), self.bytes_of(k));
            self.log.record(dir, &var, bytes, line);
        }
    }

    fn enter(&mut self, k: NodeId, ty: MapType, always: bool, line: usize) {
        let s = self.state(k);
        let first = s.refs == 0;
        s.refs += 1;
        if first {
            // fresh device storage holds no valid version
            s.dev = 0;
        }
        if (first || always) && matches!(ty, MapType::To | MapType::ToFrom) {
            self.copy(k, Direction::HtoD, line);
        }
    }

    fn exit(&mut self, k: NodeId, ty: MapType, always: bool, line: usize) {
        let s = self.state(k);
        if s.refs == 0 {
            return;
        }
        s.refs = if ty == MapType::Delete { 0 } else { s.refs - 1 };
        let last = s.refs == 0;
        if (last || always) && matches!(ty, MapType::From | MapType::ToFrom) {
            self.copy(k, Direction::DtoH, line);
        }
        if last {
            self.state(k).dev = 0;
        }
    }

    fn update(&mut self, k: NodeId, dir: Direction, line: usize) {
        if self.state(k).refs > 0 {
            self.copy(k, dir, line);
        }
    }

    fn run_function(&mut self, fr: Frame) -> Result<()> {
        let Some(body) = self.tu.ast.function_body(fr.func) else {
            return Ok(());
        };
        let flows = std::mem::take(&mut self.flows);
        let returns = std::mem::take(&mut self.returns);
        self.exec(&fr, body)?;
        let ended = std::mem::replace(&mut self.returns, returns);
        self.rejoin(ended);
        self.flows = flows;
        Ok(())
    }

    /// Merge states that left through a jump back into the current path.
    fn rejoin(&mut self, states: Vec<Vars>) {
        let live = (!self.dead).then(|| std::mem::take(&mut self.vars));
        if let Some(v) = live.into_iter().chain(states).reduce(|x, y| merge(&x, &y)) {
            self.vars = v;
            self.dead = false;
        }
    }

    fn jump(&mut self, kind: Jump) {
        let v = self.vars.clone();
        match kind {
            Jump::Break => {
                if let Some(f) = self.flows.last_mut() {
                    f.breaks.push(v);
                }
            }
            Jump::Continue => {
                if let Some(f) = self.flows.iter_mut().rev().find(|f| !f.switch) {
                    f.continues.push(v);
                }
            }
            Jump::Return => self.returns.push(v),
        }
        self.dead = true;
    }

    fn exec_opt(&mut self, fr: &Frame, s: Option<NodeId>) -> Result<()> {
        match s {
            Some(s) => self.exec(fr, s),
            None => Ok(()),
        }
    }

    /// Run every arm from the same state and keep validity common to all live ends.
    fn both(&mut self, fr: &Frame, arms: &[Vec<NodeId>]) -> Result<()> {
        let start = self.vars.clone();
        let counting = self.counting;
        let mut ends = Vec::new();
        for (i, arm) in arms.iter().enumerate() {
            self.vars = start.clone();
            self.dead = false;
            self.counting = counting && i == 0;
            for &st in arm {
                self.exec(fr, st)?;
            }
            if !self.dead {
                ends.push(std::mem::take(&mut self.vars));
            }
        }
        self.counting = counting;
        self.vars = start;
        self.dead = true;
        self.rejoin(ends);
        Ok(())
    }

    /// One loop: `body` runs `trips` times with `cond` evaluated before (or after, for do).
    fn run_loop(
        &mut self,
        fr: &Frame,
        cond: Option<NodeId>,
        body: Option<NodeId>,
        inc: Option<NodeId>,
        trips: u64,
        test_first: bool,
    ) -> Result<()> {
        self.flows.push(Flow::default());
        for _ in 0..trips {
            if test_first {
                self.opt_piece(fr, cond)?;
            }
            self.exec_opt(fr, body)?;
            let conts = std::mem::take(&mut self.flows.last_mut().expect("loop flow").continues);
            self.rejoin(conts);
            if self.dead {
                break;
            }
            self.opt_piece(fr, inc)?;
            if !test_first {
                self.opt_piece(fr, cond)?;
            }
        }
        if test_first && !self.dead {
            self.opt_piece(fr, cond)?;
        }
        let f = self.flows.pop().expect("loop flow");
        self.rejoin(f.breaks);
        Ok(())
    }

    fn exec(&mut self, fr: &Frame, s: NodeId) -> Result<()> {
        if self.dead {
            return Ok(());
        }
        self.tick()?;
        let a = &self.tu.ast;
        match a.kind(s).clone() {
            NodeKind::CompoundStmt => {
                for c in a.children(s).collect::<Vec<_>>() {
                    self.exec(fr, c)?;
                }
            }
            NodeKind::DeclStmt => self.piece(fr, s)?,
            NodeKind::ExprStmt => self.opt_piece(fr, a.child(s, 0))?,
            NodeKind::ReturnStmt => {
                self.opt_piece(fr, a.child(s, 0))?;
                self.jump(Jump::Return);
            }
            NodeKind::BreakStmt => self.jump(Jump::Break),
            NodeKind::ContinueStmt => self.jump(Jump::Continue),
            NodeKind::IfStmt => {
                let (cond, then, els) = (a.child(s, 0), a.child(s, 1), a.child(s, 2));
                self.opt_piece(fr, cond)?;
                match cond.and_then(|c| self.fold(c)) {
                    Some(v) if v != 0 => self.exec_opt(fr, then)?,
                    Some(_) => self.exec_opt(fr, els)?,
                    None => self.both(fr, &[then.into_iter().collect(), els.into_iter().collect()])?,
                }
            }
            NodeKind::WhileStmt => {
                let (cond, body) = (a.child(s, 0), a.child(s, 1));
                let trips = match cond.and_then(|c| self.fold(c)) {
                    Some(0) => 0,
                    _ => self.cfg.trip_default,
                };
                self.run_loop(fr, cond, body, None, trips, true)?;
            }
            NodeKind::DoStmt => {
                let (body, cond) = (a.child(s, 0), a.child(s, 1));
                self.run_loop(fr, cond, body, None, self.cfg.trip_default.max(1), false)?;
            }
            NodeKind::ForStmt => {
                let (init, cond, inc, body) = (a.child(s, 0), a.child(s, 1), a.child(s, 2), a.child(s, 3));
                self.opt_piece(fr, init)?;
                let trips = extract_for_bounds(self.tu, s, &|n| self.lookup(n))
                    .trip_count()
                    .unwrap_or(self.cfg.trip_default);
                self.run_loop(fr, cond, body, inc, trips, true)?;
            }
            NodeKind::SwitchStmt => {
                self.opt_piece(fr, a.child(s, 0))?;
                let body: Vec<NodeId> = match a.child(s, 1) {
                    Some(b) if matches!(a.kind(b), NodeKind::CompoundStmt) => a.children(b).collect(),
                    Some(b) => vec![b],
                    None => Vec::new(),
                };
                // each label starts an arm that falls through to the end
                let mut arms: Vec<Vec<NodeId>> = body
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| matches!(a.kind(c), NodeKind::CaseLabel | NodeKind::DefaultLabel))
                    .map(|(i, _)| body[i..].to_vec())
                    .collect();
                if !body.iter().any(|&c| matches!(a.kind(c), NodeKind::DefaultLabel)) {
                    arms.push(Vec::new());
                }
                self.flows.push(Flow {
                    switch: true,
                    ..Flow::default()
                });
                self.both(fr, &arms)?;
                let f = self.flows.pop().expect("switch flow");
                self.rejoin(f.breaks);
            }
            NodeKind::OmpDirective(info) => self.directive(fr, s, &info)?,
            _ => {}
        }
        Ok(())
    }

    fn opt_piece(&mut self, fr: &Frame, e: Option<NodeId>) -> Result<()> {
        match e {
            Some(e) => self.piece(fr, e),
            None => Ok(()),
        }
    }

    fn simulated_callee(&self, call: NodeId) -> Option<NodeId> {
        if self.depth >= MAX_CALL_DEPTH {
            return None;
        }
        let c = self.tu.ast.strip_casts(self.tu.ast.child(call, 0)?);
        let f = self.tu.function_named(self.tu.ast.name(c)?)?;
        self.tu.ast.function_body(f).map(|_| f)
    }

    /// Execute the calls and host accesses of one evaluated AST piece.
    fn piece(&mut self, fr: &Frame, ast: NodeId) -> Result<()> {
        let Some(&n) = self.funcs.get(&fr.func).and_then(|i| i.node_of.get(&ast)) else {
            return Ok(());
        };
        let a = &self.tu.ast;
        let mut calls: Vec<NodeId> = a
            .descendants(ast)
            .into_iter()
            .filter(|&c| matches!(a.kind(c), NodeKind::Call))
            .collect();
        calls.reverse();
        let mut simulated = HashSet::new();
        for c in calls {
            if let Some(f) = self.simulated_callee(c) {
                simulated.insert(c);
                self.call(fr, c, f)?;
            }
        }
        let ops: Vec<MemoryAccess> = self.funcs[&fr.func].ops[n].iter().map(|m| (*m).clone()).collect();
        for op in ops {
            if op.call.is_some_and(|(c, _)| simulated.contains(&c)) {
                continue;
            }
            let k = Self::key(fr, op.var);
            let line = self.line(op.ast);
            let (r, w) = match op.kind {
                AccessKind::Unknown => (true, true),
                k => (k.reads(), k.writes()),
            };
            if r {
                self.read(k, op.space, line);
            }
            if w {
                self.write(k, op.space);
            }
        }
        Ok(())
    }

    fn root_decl(&self, mut e: NodeId) -> Option<NodeId> {
        let a = &self.tu.ast;
        loop {
            e = a.strip_casts(e);
            match a.kind(e) {
                NodeKind::DeclRef { decl, .. } => return *decl,
                NodeKind::UnaryOp(UnOp::AddrOf | UnOp::Deref)
                | NodeKind::ArraySubscript
                | NodeKind::MemberAccess { .. }
                | NodeKind::BinaryOp(_) => {
                    e = a.child(e, 0)?;
                }
                _ => return None,
            }
        }
    }

    fn call(&mut self, fr: &Frame, call: NodeId, f: NodeId) -> Result<()> {
        let a = &self.tu.ast;
        let args: Vec<NodeId> = a.node(call).children[1..].iter().filter_map(|c| *c).collect();
        let mut alias = HashMap::new();
        for (p, arg) in a.function_params(f).into_iter().zip(args) {
            let buffer = a.node(p).type_info.as_ref().is_some_and(|t| t.is_buffer());
            if buffer {
                if let Some(root) = self.root_decl(arg) {
                    alias.insert(p, Self::key(fr, root));
                }
            }
        }
        self.depth += 1;
        let r = self.run_function(Frame { func: f, alias });
        self.depth -= 1;
        r
    }

    /// Declaration visible under `name` at statement `at`.
    fn resolve(&self, fr: &Frame, name: &str, at: NodeId) -> Option<NodeId> {
        let a = &self.tu.ast;
        let pos = a.span(at).start;
        let mut best = None;
        if let Some(body) = a.function_body(fr.func) {
            for d in a.descendants(body) {
                if !matches!(a.kind(d), NodeKind::VarDecl { name: n, .. } if n == name) || a.span(d).start >= pos {
                    continue;
                }
                let scope = a
                    .ancestors(d)
                    .find(|&p| matches!(a.kind(p), NodeKind::CompoundStmt | NodeKind::ForStmt));
                if scope.is_some_and(|sc| a.is_ancestor_or_self(sc, at)) {
                    best = Some(d);
                }
            }
        }
        let found = best
            .or_else(|| {
                a.function_params(fr.func)
                    .into_iter()
                    .find(|&p| a.name(p) == Some(name))
            })
            .or_else(|| self.tu.globals().into_iter().find(|&g| a.name(g) == Some(name)))?;
        Some(Self::key(fr, found))
    }

    fn clause_maps(&self, fr: &Frame, at: NodeId, info: &OmpDirectiveInfo) -> Vec<(NodeId, MapType, bool)> {
        let mut out = Vec::new();
        for c in info.clauses_named("map") {
            let (ty, always, names) = c.map_parts();
            for n in names {
                if let Some(k) = self.resolve(fr, &n, at) {
                    out.push((k, ty, always));
                }
            }
        }
        out
    }

    fn directive(&mut self, fr: &Frame, s: NodeId, info: &OmpDirectiveInfo) -> Result<()> {
        let annotated = self.cfg.mode == SimMode::Annotated;
        let line = self.line(s);
        let child = self.tu.ast.child(s, 0);
        match info.kind {
            k if k.is_kernel() => self.kernel(fr, s, info)?,
            DirectiveKind::TargetData => {
                let maps = if annotated {
                    self.clause_maps(fr, s, info)
                } else {
                    Vec::new()
                };
                for &(k, ty, al) in &maps {
                    self.enter(k, ty, al, line);
                }
                self.exec_opt(fr, child)?;
                let end = self.tu.ast.span(s).end;
                let end_line = self.file.line_of(end.saturating_sub(1));
                for &(k, ty, al) in maps.iter().rev() {
                    self.exit(k, ty, al, end_line);
                }
            }
            DirectiveKind::TargetEnterData if annotated => {
                for (k, ty, al) in self.clause_maps(fr, s, info) {
                    self.enter(k, ty, al, line);
                }
            }
            DirectiveKind::TargetExitData if annotated => {
                for (k, ty, al) in self.clause_maps(fr, s, info) {
                    self.exit(k, ty, al, line);
                }
            }
            DirectiveKind::TargetUpdate if annotated => {
                for c in &info.clauses {
                    let dir = match c.name.as_str() {
                        "to" => Direction::HtoD,
                        "from" => Direction::DtoH,
                        _ => continue,
                    };
                    for n in c.var_list() {
                        if let Some(k) = self.resolve(fr, &n, s) {
                            self.update(k, dir, line);
                        }
                    }
                }
            }
            DirectiveKind::NonTarget => self.exec_opt(fr, child)?,
            _ => {}
        }
        Ok(())
    }

    fn kernel(&mut self, fr: &Frame, d: NodeId, info: &OmpDirectiveInfo) -> Result<()> {
        let line = self.line(d);
        let Some(&n) = self.funcs.get(&fr.func).and_then(|i| i.node_of.get(&d)) else {
            return Ok(());
        };
        let ops: Vec<MemoryAccess> = self.funcs[&fr.func].ops[n].iter().map(|m| (*m).clone()).collect();
        let explicit = if self.cfg.mode == SimMode::Annotated {
            self.clause_maps(fr, d, info)
        } else {
            Vec::new()
        };
        let mut maps = explicit.clone();
        let mut seen: HashSet<NodeId> = explicit.iter().map(|m| m.0).collect();
        for op in &ops {
            let k = Self::key(fr, op.var);
            if op.by_value && !seen.contains(&k) {
                // firstprivate: passed by value from the host copy
                if op.kind.reads() || op.kind == AccessKind::Unknown {
                    self.read(k, Space::Host, line);
                }
                continue;
            }
            if seen.insert(k) {
                maps.push((k, MapType::ToFrom, false));
            }
        }
        for &(k, ty, al) in &maps {
            self.enter(k, ty, al, line);
        }
        for op in &ops {
            let k = Self::key(fr, op.var);
            if op.by_value && !explicit.iter().any(|m| m.0 == k) {
                continue;
            }
            let (r, w) = match op.kind {
                AccessKind::Unknown => (true, true),
                kind => (kind.reads(), kind.writes()),
            };
            if r {
                self.read(k, Space::Device, line);
            }
            if w {
                self.write(k, Space::Device);
            }
        }
        for &(k, ty, al) in maps.iter().rev() {
            self.exit(k, ty, al, line);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;

    fn run(src: &str, mode: SimMode, sizes: &[(&str, i64)]) -> TransferLog {
        let f = SourceFile::new("t.c", src);
        let tu = parse_source(&f).unwrap();
        let cfg = SimConfig {
            mode,
            sizes: sizes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            ..SimConfig::default()
        };
        simulate(&tu, &f, &cfg).unwrap()
    }

    const LOOP_KERNEL: &str = "#define N 100\nint main() {\n  int a[N] = {};\n  for (int i = 0; i < N; ++i) {\n    #pragma omp target\n    for (int j = 0; j < N; ++j) {\n      a[j] += j;\n    }\n  }\n  return a[0];\n}\n";

    #[test]
    fn implicit_loop_kernel_copies_every_iteration() {
        let log = run(LOOP_KERNEL, SimMode::Implicit, &[]);
        assert_eq!((log.htod_calls, log.dtoh_calls), (100, 100));
        assert_eq!((log.htod_bytes, log.dtoh_bytes), (100 * 100 * 4, 100 * 100 * 4));
        assert!(log.stale_reads.is_empty());
        assert!(log.unbalanced.is_empty());
    }

    #[test]
    fn annotated_loop_kernel_copies_once() {
        let src = LOOP_KERNEL.replace("  for (int i", "  #pragma omp target data map(tofrom: a)\n  for (int i");
        let log = run(&src, SimMode::Annotated, &[]);
        assert_eq!((log.htod_calls, log.dtoh_calls), (1, 1));
        assert_eq!((log.htod_bytes, log.dtoh_bytes), (400, 400));
        assert!(log.stale_reads.is_empty());
    }

    #[test]
    fn nested_from_is_swallowed_by_refcount() {
        let src = "#define N 100\nint main() {\n  int a[N] = {}, sum = 0;\n  #pragma omp target data map(a)\n  for (int i = 0; i < M; ++i) {\n    #pragma omp target map(from:a)\n    for (int j = 0; j < N; ++j) {\n      a[j] += j;\n    }\n    for (int j = 0; j < N; ++j) {\n      sum += a[j];\n    }\n  }\n  return sum;\n}\n";
        let m = 7;
        let log = run(src, SimMode::Annotated, &[("M", m)]);
        assert_eq!((log.htod_calls, log.dtoh_calls), (1, 1));
        let stale: Vec<_> = log
            .stale_reads
            .iter()
            .filter(|s| s.var == "a" && s.space == Space::Host)
            .collect();
        assert_eq!(stale.len(), m as usize);
    }

    #[test]
    fn update_from_after_kernel_fixes_staleness() {
        let src = "#define N 100\nint main() {\n  int a[N] = {}, sum = 0;\n  #pragma omp target data map(a)\n  for (int i = 0; i < M; ++i) {\n    #pragma omp target\n    for (int j = 0; j < N; ++j) {\n      a[j] += j;\n    }\n    #pragma omp target update from(a)\n    for (int j = 0; j < N; ++j) {\n      sum += a[j];\n    }\n  }\n  return sum;\n}\n";
        let m = 5;
        let log = run(src, SimMode::Annotated, &[("M", m)]);
        assert!(log.stale_reads.is_empty(), "{:?}", log.stale_reads);
        let updates: Vec<_> = log
            .events
            .iter()
            .filter(|e| e.dir == Direction::DtoH && e.line == 10)
            .collect();
        assert_eq!(updates.len(), m as usize);
        assert!(updates.iter().all(|e| e.bytes == 400));
    }

    #[test]
    fn missing_from_reports_stale_host_read() {
        let src = "int main() {\n  int a[8];\n  #pragma omp target map(to: a)\n  for (int j = 0; j < 8; ++j) a[j] = j;\n  return a[1];\n}\n";
        let log = run(src, SimMode::Annotated, &[]);
        assert_eq!(log.stale_reads.len(), 1);
        assert_eq!(log.stale_reads[0].line, 5);
    }

    #[test]
    fn enter_exit_balance() {
        let src = "int main() {\n  int a[8];\n  #pragma omp target enter data map(to: a)\n  #pragma omp target\n  for (int j = 0; j < 8; ++j) a[j] = j;\n  #pragma omp target exit data map(from: a)\n  return a[1];\n}\n";
        let log = run(src, SimMode::Annotated, &[]);
        assert!(log.stale_reads.is_empty());
        assert!(log.unbalanced.is_empty());
        assert_eq!((log.htod_bytes, log.dtoh_bytes), (32, 32));
        let leak = src.replace("  #pragma omp target exit data map(from: a)\n", "");
        assert_eq!(run(&leak, SimMode::Annotated, &[]).unbalanced, vec!["a".to_string()]);
    }

    #[test]
    fn firstprivate_scalar_moves_no_bytes() {
        let src = "int main() {\n  int a[4];\n  int s = 3;\n  #pragma omp target data map(from: a)\n  {\n    #pragma omp target firstprivate(s)\n    for (int j = 0; j < 4; ++j) a[j] = s;\n  }\n  return a[0];\n}\n";
        let log = run(src, SimMode::Annotated, &[]);
        assert!(log.stale_reads.is_empty());
        assert_eq!((log.htod_calls, log.dtoh_calls), (0, 1));
    }

    #[test]
    fn callee_accesses_alias_caller_buffer() {
        let src = "void fill(int *p, int n) {\n  #pragma omp target\n  for (int i = 0; i < n; ++i) p[i] = i;\n}\nint main() {\n  int a[16];\n  #pragma omp target data map(alloc: a)\n  {\n    fill(a, 16);\n  }\n  return a[2];\n}\n";
        let log = run(src, SimMode::Annotated, &[]);
        assert_eq!(log.stale_reads.len(), 1);
        assert_eq!(log.stale_reads[0].var, "a");
    }

    #[test]
    fn divergent_branch_is_worst_case() {
        let src = "int main(int c) {\n  int a[4];\n  #pragma omp target data map(to: a)\n  {\n    if (c) {\n      #pragma omp target\n      for (int j = 0; j < 4; ++j) a[j] = j;\n    }\n  }\n  return a[0];\n}\n";
        let log = run(src, SimMode::Annotated, &[]);
        assert_eq!(log.stale_reads.len(), 1);
    }

    #[test]
    fn step_budget_is_enforced() {
        let f = SourceFile::new("t.c", LOOP_KERNEL);
        let tu = parse_source(&f).unwrap();
        let cfg = SimConfig {
            step_budget: 50,
            ..SimConfig::default()
        };
        assert!(matches!(simulate(&tu, &f, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn compare_ratios() {
        let a = run(LOOP_KERNEL, SimMode::Implicit, &[]);
        let src = LOOP_KERNEL.replace("  for (int i", "  #pragma omp target data map(tofrom: a)\n  for (int i");
        let b = run(&src, SimMode::Annotated, &[]);
        let c = compare(&a, &b);
        assert!((c.htod_bytes - 100.0).abs() < 1e-9);
        assert!((c.dtoh_calls - 100.0).abs() < 1e-9);
    }

    #[test]
    fn continue_skips_end_of_body_update() {
        let src = "int main(int c) {\n  int a[4], t = 0;\n  #pragma omp target data map(to: a)\n  for (int i = 0; i < 3; ++i) {\n    #pragma omp target\n    for (int j = 0; j < 4; ++j) a[j] = j;\n    if (c) continue;\n    #pragma omp target update from(a)\n  }\n  t = a[0];\n  return t;\n}\n";
        let log = run(src, SimMode::Annotated, &[]);
        assert_eq!(log.stale_reads.len(), 1, "{:?}", log.stale_reads);
        let fixed = src.replace("    if (c) continue;\n", "");
        assert!(run(&fixed, SimMode::Annotated, &[]).stale_reads.is_empty());
    }

    #[test]
    fn break_state_reaches_loop_exit() {
        let src = "int main(int c) {\n  int a[4];\n  #pragma omp target data map(to: a)\n  {\n    for (int i = 0; i < 3; ++i) {\n      #pragma omp target\n      for (int j = 0; j < 4; ++j) a[j] = j;\n      if (c) break;\n      #pragma omp target update from(a)\n    }\n  }\n  return a[0];\n}\n";
        assert_eq!(run(src, SimMode::Annotated, &[]).stale_reads.len(), 1);
    }

    #[test]
    fn switch_falls_through_until_break() {
        let src = "int main(int c) {\n  int a[4];\n  #pragma omp target data map(to: a)\n  {\n    #pragma omp target\n    for (int j = 0; j < 4; ++j) a[j] = j;\n    switch (c) {\n    case 1:\n      c = 2;\n    case 2:\n      #pragma omp target update from(a)\n      break;\n    default:\n      #pragma omp target update from(a)\n    }\n  }\n  return a[0];\n}\n";
        assert!(run(src, SimMode::Annotated, &[]).stale_reads.is_empty());
        let missing = src.replace("    default:\n      #pragma omp target update from(a)\n", "");
        assert_eq!(run(&missing, SimMode::Annotated, &[]).stale_reads.len(), 1);
    }

    #[test]
    fn early_return_merges_at_function_exit() {
        let src = "void k(int *p, int c) {\n  #pragma omp target\n  for (int i = 0; i < 4; ++i) p[i] = i;\n  if (c) return;\n  p[0] = 1;\n}\nint main(int c) {\n  int a[4];\n  k(a, c);\n  return a[0];\n}\n";
        let log = run(src, SimMode::Annotated, &[]);
        assert!(log.stale_reads.is_empty(), "{:?}", log.stale_reads);
    }
}
