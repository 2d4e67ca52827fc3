//! Validity dataflow over the host CFG and resolution of true dependencies
//! into data mapping and update directives.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::access::{classify_accesses, variable, AccessKind, FunctionAccesses, MemoryAccess, Space};
use crate::astcfg::{build_all, AstCfg, CfgNodeKind, EdgeLabel};
use crate::bounds::{finalize_update_anchor, find_update_insert_loc};
use crate::error::{Diagnostic, Error, Result};
use crate::frontend::{MapType, NodeId, NodeKind, Storage, TranslationUnit};
use crate::interproc::{apply_call_effects, summarize_all, Summaries};
use crate::source::{SourceFile, Span};

/// How far update directives are hoisted out of loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HoistMode {
    /// Loop-nest placement with legality and source-validity checks.
    #[default]
    Checked,
    /// Directly before the consuming statement.
    Innermost,
    /// Loop-nest placement taken as is.
    Unchecked,
}

impl HoistMode {
    pub fn parse(s: &str) -> Option<HoistMode> {
        match s {
            "checked" => Some(HoistMode::Checked),
            "innermost" => Some(HoistMode::Innermost),
            "unchecked" => Some(HoistMode::Unchecked),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub hoist: HoistMode,
    /// Variables whose updates are suppressed.
    pub allow_stale: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PlanKind {
    MapTo,
    MapToFrom,
    MapAlloc,
    MapFrom,
    UpdateTo,
    UpdateFrom,
    Firstprivate,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::MapTo => "map_to",
            PlanKind::MapToFrom => "map_tofrom",
            PlanKind::MapAlloc => "map_alloc",
            PlanKind::MapFrom => "map_from",
            PlanKind::UpdateTo => "update_to",
            PlanKind::UpdateFrom => "update_from",
            PlanKind::Firstprivate => "firstprivate",
        }
    }

    pub fn map_type(self) -> Option<MapType> {
        match self {
            PlanKind::MapTo => Some(MapType::To),
            PlanKind::MapToFrom => Some(MapType::ToFrom),
            PlanKind::MapAlloc => Some(MapType::Alloc),
            PlanKind::MapFrom => Some(MapType::From),
            _ => None,
        }
    }

    fn of_map(t: MapType) -> PlanKind {
        match t {
            MapType::To => PlanKind::MapTo,
            MapType::From => PlanKind::MapFrom,
            MapType::ToFrom => PlanKind::MapToFrom,
            _ => PlanKind::MapAlloc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Position {
    Before,
    After,
    EndOfBody,
    BeginOfBody,
    ClauseOnKernel,
    ClauseOnRegion,
}

impl Position {
    pub fn name(self) -> &'static str {
        match self {
            Position::Before => "before",
            Position::After => "after",
            Position::EndOfBody => "end-of-body",
            Position::BeginOfBody => "begin-of-body",
            Position::ClauseOnKernel | Position::ClauseOnRegion => "clause",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectivePlan {
    pub kind: PlanKind,
    pub vars: Vec<NodeId>,
    pub names: Vec<String>,
    pub anchor: NodeId,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRegion {
    /// First and last statements covered; siblings in one compound statement.
    pub begin: NodeId,
    pub end: NodeId,
    pub maps: Vec<(NodeId, String, MapType)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dependency {
    pub var: NodeId,
    pub name: String,
    /// Space whose stale copy is read.
    pub consumer: Space,
    pub node: usize,
    pub ast: NodeId,
    pub subscripts: Vec<NodeId>,
    /// Stale on the forward paths into the node.
    pub stale_forward: bool,
    /// Stale along a loop back edge into the node.
    pub stale_back_edge: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FunctionPlan {
    pub function: NodeId,
    pub name: String,
    pub region: Option<DataRegion>,
    pub plans: Vec<DirectivePlan>,
    pub deps: Vec<Dependency>,
    /// Device-used variables left to implicit mapping.
    pub excluded: Vec<NodeId>,
}

/// Everything computed for one translation unit.
#[derive(Debug)]
pub struct Analysis {
    pub cfgs: Vec<AstCfg>,
    pub raw: Vec<FunctionAccesses>,
    pub accesses: Vec<Vec<MemoryAccess>>,
    pub summaries: Summaries,
    pub functions: Vec<FunctionPlan>,
    pub warnings: Vec<Diagnostic>,
}

impl Analysis {
    pub fn plans(&self) -> impl Iterator<Item = &DirectivePlan> + '_ {
        self.functions.iter().flat_map(|f| f.plans.iter())
    }

    /// One line per directive: `kind(vars) @ file:line (position)`.
    pub fn report(&self, tu: &TranslationUnit, file: &SourceFile) -> String {
        let mut lines: Vec<(usize, String)> = Vec::new();
        for p in self.plans() {
            let line = file.line_of(tu.ast.span(p.anchor).start);
            lines.push((
                line,
                format!(
                    "{}({}) @ {}:{} ({})",
                    p.kind.name(),
                    p.names.join(", "),
                    file.path,
                    line,
                    p.position.name()
                ),
            ));
        }
        lines.sort_by_key(|l| l.0);
        let mut out = String::new();
        for (_, l) in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }
}

/// Run the whole analysis pipeline on a parsed unit.
pub fn analyze(tu: &TranslationUnit, file: &SourceFile, opts: &Options) -> Result<Analysis> {
    let cfgs = build_all(tu, file)?;
    let raw = cfgs
        .iter()
        .map(|c| classify_accesses(tu, file, c))
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize_all(tu, &cfgs, &raw);
    let accesses: Vec<Vec<MemoryAccess>> = raw.iter().map(|fa| apply_call_effects(tu, fa, &summaries)).collect();
    let mut warnings: Vec<Diagnostic> = tu.warnings.clone();
    let mut functions = Vec::new();
    for ((cfg, fa), acc) in cfgs.iter().zip(&raw).zip(&accesses) {
        warnings.extend(cfg.warnings.iter().cloned());
        functions.push(analyze_function(tu, file, cfg, fa, acc, opts)?);
    }
    Ok(Analysis {
        cfgs,
        raw,
        accesses,
        summaries,
        functions,
        warnings,
    })
}

const HOST: u8 = 1;
const DEV: u8 = 2;

fn bit(s: Space) -> u8 {
    match s {
        Space::Host => HOST,
        Space::Device => DEV,
    }
}

#[derive(Debug, Clone, Copy)]
struct Op {
    var: usize,
    space: Space,
    read: bool,
    write: bool,
    /// Index into the access list; `None` for the synthetic read at exit.
    access: Option<usize>,
}

type State = Vec<u8>;

struct Ctx<'a> {
    tu: &'a TranslationUnit,
    cfg: &'a AstCfg,
    acc: &'a [MemoryAccess],
    opts: &'a Options,
    vars: Vec<NodeId>,
    names: Vec<String>,
    ops: Vec<Vec<Op>>,
    in_region: Vec<bool>,
    region_span: Span,
    preds: Vec<Vec<usize>>,
    /// Copies performed on each edge, as (variable, destination space).
    syncs: Vec<Vec<(usize, Space)>>,
    to: BTreeSet<usize>,
    from: BTreeSet<usize>,
    out: Vec<State>,
    inn: Vec<State>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Decisions {
    to: BTreeSet<usize>,
    from: BTreeSet<usize>,
    plans: PlanSet,
}

impl Decisions {
    fn with(&self, o: Decisions) -> Decisions {
        let mut d = self.clone();
        d.to.extend(o.to);
        d.from.extend(o.from);
        d.plans.extend(o.plans);
        d
    }
}

/// Analyze one function and produce its directive plan.
pub fn analyze_function(
    tu: &TranslationUnit,
    file: &SourceFile,
    cfg: &AstCfg,
    fa: &FunctionAccesses,
    acc: &[MemoryAccess],
    opts: &Options,
) -> Result<FunctionPlan> {
    let mut fp = FunctionPlan {
        function: cfg.function,
        name: cfg.name.clone(),
        ..Default::default()
    };
    let mut plans: BTreeSet<(PlanKind, NodeId, Position, NodeId)> = BTreeSet::new();
    for k in &fa.kernels {
        let existing: BTreeSet<String> = tu
            .ast
            .omp(k.directive)
            .map(|d| {
                ["firstprivate", "private", "lastprivate", "shared", "reduction", "map"]
                    .iter()
                    .flat_map(|c| d.vars_in(c))
                    .collect()
            })
            .unwrap_or_default();
        for &v in k
            .by_value
            .iter()
            .filter(|v| k.read.contains(v) && !k.written.contains(v))
        {
            if !existing.contains(tu.ast.name(v).unwrap_or_default()) {
                plans.insert((PlanKind::Firstprivate, k.directive, Position::ClauseOnKernel, v));
            }
        }
    }
    if !cfg.kernels.is_empty() {
        region_plans(tu, file, cfg, acc, opts, &mut fp, &mut plans)?;
    }
    fp.plans = consolidate(tu, plans);
    Ok(fp)
}

fn consolidate(tu: &TranslationUnit, plans: BTreeSet<(PlanKind, NodeId, Position, NodeId)>) -> Vec<DirectivePlan> {
    let mut groups: BTreeMap<(usize, Position, PlanKind, NodeId), Vec<NodeId>> = BTreeMap::new();
    for (k, anchor, pos, v) in plans {
        groups
            .entry((tu.ast.span(anchor).start, pos, k, anchor))
            .or_default()
            .push(v);
    }
    groups
        .into_iter()
        .map(|((_, position, kind, anchor), mut vars)| {
            vars.sort_by_key(|&v| (tu.ast.span(v).start, v));
            let names = vars
                .iter()
                .map(|&v| tu.ast.name(v).unwrap_or_default().to_string())
                .collect();
            DirectivePlan {
                kind,
                vars,
                names,
                anchor,
                position,
            }
        })
        .collect()
}

/// Outermost statement that carries `s` (through non-kernel directives).
fn normalize(tu: &TranslationUnit, mut s: NodeId) -> NodeId {
    while let Some(p) = tu.ast.parent(s) {
        match tu.ast.kind(p) {
            NodeKind::OmpDirective(_) if !tu.ast.is_kernel(p) => s = p,
            _ => break,
        }
    }
    s
}

/// Lift two statements to siblings in their deepest common compound statement.
fn lift(tu: &TranslationUnit, a: NodeId, z: NodeId) -> Option<(NodeId, NodeId)> {
    let chain = |n: NodeId| -> Vec<NodeId> { std::iter::once(n).chain(tu.ast.ancestors(n)).collect() };
    let ca = chain(a);
    let cz = chain(z);
    for w in ca.windows(2) {
        let (below, c) = (w[0], w[1]);
        if matches!(tu.ast.kind(c), NodeKind::CompoundStmt) && tu.ast.is_ancestor_or_self(c, z) {
            let e = cz.windows(2).find(|w| w[1] == c)?[0];
            return Some((below, e));
        }
    }
    None
}

fn region_plans(
    tu: &TranslationUnit,
    file: &SourceFile,
    cfg: &AstCfg,
    acc: &[MemoryAccess],
    opts: &Options,
    fp: &mut FunctionPlan,
    plans: &mut BTreeSet<(PlanKind, NodeId, Position, NodeId)>,
) -> Result<()> {
    let a = &tu.ast;
    let mut ks: Vec<NodeId> = cfg.kernels.iter().map(|k| k.directive).collect();
    ks.sort_by_key(|&k| a.span(k).start);
    let outer = |d: NodeId| -> NodeId {
        let host = cfg
            .kernels
            .iter()
            .find(|k| k.directive == d)
            .map(|k| k.host_node)
            .unwrap_or(0);
        cfg.node(host).enclosing_loops.first().copied().unwrap_or(d)
    };
    let (first, last) = (outer(ks[0]), outer(*ks.last().unwrap_or(&ks[0])));
    let Some((b, e)) = lift(tu, normalize(tu, first), normalize(tu, last)) else {
        return Err(Error::Internal(format!(
            "no common block for the kernels of '{}'",
            cfg.name
        )));
    };
    let (b, e) = (normalize(tu, b), normalize(tu, e));
    let region_span = Span {
        start: a.span(b).start,
        end: a.span(e).end,
    };
    let inside = |n: NodeId| {
        let s = a.span(n);
        s.start >= region_span.start && s.end <= region_span.end
    };

    let mut vars: Vec<NodeId> = Vec::new();
    let mut excluded: BTreeSet<NodeId> = BTreeSet::new();
    for m in acc {
        if m.via_offload_callee && inside(a.enclosing_statement(m.ast)) {
            excluded.insert(m.var);
        }
    }
    for m in acc {
        if m.space == Space::Device && !m.by_value && !vars.contains(&m.var) {
            if excluded.contains(&m.var) {
                continue;
            }
            vars.push(m.var);
        }
    }
    fp.excluded = excluded.into_iter().collect();
    if vars.is_empty() {
        return Ok(());
    }
    for &v in &vars {
        if matches!(a.kind(v), NodeKind::VarDecl { .. }) && inside(v) {
            let (l, c) = file.line_col(a.span(v).start);
            let line = file.line_of(region_span.start);
            return Err(Error::Placement(Diagnostic::error(
                l,
                c,
                format!(
                    "variable '{}' is used on host and device but declared inside the data region; move its declaration before line {}",
                    a.name(v).unwrap_or_default(),
                    line
                ),
            )));
        }
    }
    let mut s = b;
    loop {
        for n in std::iter::once(s).chain(a.descendants(s)) {
            if matches!(a.kind(n), NodeKind::ReturnStmt) {
                let (l, c) = file.line_col(a.span(n).start);
                return Err(Error::Unsupported(Diagnostic::error(
                    l,
                    c,
                    "'return' inside the data region is not supported",
                )));
            }
        }
        if s == e {
            break;
        }
        let Some(p) = a.parent(s) else { break };
        let sib: Vec<NodeId> = a.children(p).collect();
        match sib.iter().position(|&x| x == s) {
            Some(i) if i + 1 < sib.len() => s = sib[i + 1],
            _ => break,
        }
    }

    let g = &cfg.graph;
    let idx: HashMap<NodeId, usize> = vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut ops: Vec<Vec<Op>> = vec![Vec::new(); g.nodes.len()];
    for (i, m) in acc.iter().enumerate() {
        let Some(&var) = idx.get(&m.var) else { continue };
        let (read, write) = match m.kind {
            AccessKind::Unknown => (true, true),
            k => (k.reads(), k.writes()),
        };
        let op = if m.by_value {
            // private device copies are initialized from the host
            Op {
                var,
                space: Space::Host,
                read,
                write: false,
                access: Some(i),
            }
        } else {
            Op {
                var,
                space: m.space,
                read,
                write,
                access: Some(i),
            }
        };
        if op.read || op.write {
            ops[m.cfg_node].push(op);
        }
    }
    for (i, &v) in vars.iter().enumerate() {
        let info = variable(tu, v);
        let escapes =
            matches!(info.storage, Storage::Global) || (info.storage == Storage::Param && info.ty.is_buffer());
        if escapes {
            ops[g.exit].push(Op {
                var: i,
                space: Space::Host,
                read: true,
                write: false,
                access: None,
            });
        }
    }
    let in_region: Vec<bool> = g.nodes.iter().map(|n| n.owner.is_some_and(inside)).collect();
    let names = vars
        .iter()
        .map(|&v| a.name(v).unwrap_or_default().to_string())
        .collect();
    let mut preds = vec![Vec::new(); g.nodes.len()];
    for (i, e) in g.edges.iter().enumerate() {
        preds[e.to].push(i);
    }
    let mut ctx = Ctx {
        tu,
        cfg,
        acc,
        opts,
        vars,
        names,
        ops,
        in_region,
        region_span,
        preds,
        syncs: vec![Vec::new(); g.edges.len()],
        to: BTreeSet::new(),
        from: BTreeSet::new(),
        out: Vec::new(),
        inn: Vec::new(),
    };
    // One dependency per round: each decision changes the states seen by the rest.
    let mut dec = Decisions::default();
    let mut done = BTreeSet::new();
    loop {
        ctx.install(&dec);
        ctx.solve();
        let next = ctx
            .dependencies()
            .into_iter()
            .filter(|d| !done.contains(&(d.node, d.var, d.consumer)))
            .min_by_key(|d| ctx.priority(d.node));
        let Some(d) = next else { break };
        let key = (d.node, d.var, d.consumer);
        done.insert(key);
        let cands = ctx.resolve(&d);
        let last = cands.len() - 1;
        for (i, c) in cands.into_iter().enumerate() {
            let trial = dec.with(c);
            if i < last {
                ctx.install(&trial);
                ctx.solve();
                if ctx.dependencies().iter().any(|x| (x.node, x.var, x.consumer) == key) {
                    continue;
                }
            }
            dec = trial;
            break;
        }
        fp.deps.push(d);
    }
    plans.extend(dec.plans.iter().copied());
    let (to, from) = (dec.to, dec.from);
    let mut maps: Vec<(NodeId, String, MapType)> = ctx
        .vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = match (to.contains(&i), from.contains(&i)) {
                (true, true) => MapType::ToFrom,
                (true, false) => MapType::To,
                (false, true) => MapType::From,
                (false, false) => MapType::Alloc,
            };
            (v, ctx.names[i].clone(), t)
        })
        .collect();
    let rank = |t: MapType| match t {
        MapType::To => 0,
        MapType::ToFrom => 1,
        MapType::Alloc => 2,
        _ => 3,
    };
    maps.sort_by_key(|m| (rank(m.2), a.span(m.0).start));
    for (v, _, t) in &maps {
        plans.insert((PlanKind::of_map(*t), b, Position::ClauseOnRegion, *v));
    }
    fp.region = Some(DataRegion { begin: b, end: e, maps });
    Ok(())
}

type PlanSet = BTreeSet<(PlanKind, NodeId, Position, NodeId)>;

impl Ctx<'_> {
    fn copy(s: &mut State, v: usize, dst: Space) {
        if s[v] & bit(dst.other()) != 0 {
            s[v] |= bit(dst);
        } else {
            s[v] &= !bit(dst);
        }
    }

    fn leaving(&self, ei: usize) -> bool {
        let e = &self.cfg.graph.edges[ei];
        self.in_region[e.from] && !self.in_region[e.to]
    }

    /// Edge effects in textual order: region entry, updates, region exit.
    fn edge_apply(&self, ei: usize, s: &mut State, release: bool) {
        let e = &self.cfg.graph.edges[ei];
        if !self.in_region[e.from] && self.in_region[e.to] {
            for &v in &self.to {
                Self::copy(s, v, Space::Device);
            }
        }
        for &(v, dst) in &self.syncs[ei] {
            Self::copy(s, v, dst);
        }
        if release && self.leaving(ei) {
            for &v in &self.from {
                Self::copy(s, v, Space::Host);
            }
            for x in s.iter_mut() {
                *x &= !DEV;
            }
        }
    }

    /// Conjunction over predecessors; `back` selects the edge subset.
    fn merge(&self, n: usize, back: Option<bool>) -> State {
        let g = &self.cfg.graph;
        if n == g.entry {
            return vec![HOST; self.vars.len()];
        }
        let mut s = vec![HOST | DEV; self.vars.len()];
        for &ei in &self.preds[n] {
            if back.is_some_and(|b| b != g.edges[ei].is_back_edge) {
                continue;
            }
            let mut es = self.out[g.edges[ei].from].clone();
            self.edge_apply(ei, &mut es, true);
            for (x, y) in s.iter_mut().zip(es) {
                *x &= y;
            }
        }
        s
    }

    fn apply(state: &mut State, op: &Op) {
        let b = bit(op.space);
        if op.read {
            state[op.var] |= b;
        }
        if op.write {
            state[op.var] = b;
        }
    }

    fn solve(&mut self) {
        let n = self.cfg.graph.nodes.len();
        self.out = vec![vec![HOST | DEV; self.vars.len()]; n];
        self.inn = self.out.clone();
        let rpo = self.cfg.graph.rpo();
        loop {
            let mut changed = false;
            for &n in &rpo {
                let i = self.merge(n, None);
                let mut o = i.clone();
                for op in &self.ops[n] {
                    Self::apply(&mut o, op);
                }
                self.inn[n] = i;
                if o != self.out[n] {
                    self.out[n] = o;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn install(&mut self, dec: &Decisions) {
        self.to = dec.to.clone();
        self.from = dec.from.clone();
        let mut syncs = vec![Vec::new(); self.cfg.graph.edges.len()];
        for &(kind, anchor, pos, var) in &dec.plans {
            let dst = match kind {
                PlanKind::UpdateTo => Space::Device,
                PlanKind::UpdateFrom => Space::Host,
                _ => continue,
            };
            let v = self.var_index(var);
            for ei in self.plan_edges(anchor, pos) {
                syncs[ei].push((v, dst));
            }
        }
        self.syncs = syncs;
    }

    fn loop_node(&self, l: NodeId, kind: CfgNodeKind) -> Option<usize> {
        self.cfg
            .graph
            .nodes
            .iter()
            .find(|n| n.kind == kind && n.owner == Some(l))
            .map(|n| n.id)
    }

    /// CFG edges on which a directive at `(anchor, pos)` executes.
    fn plan_edges(&self, anchor: NodeId, pos: Position) -> Vec<usize> {
        let g = &self.cfg.graph;
        let a = &self.tu.ast;
        let into = |n: usize, with_back: bool| -> Vec<usize> {
            self.preds[n]
                .iter()
                .copied()
                .filter(|&ei| with_back || !g.edges[ei].is_back_edge)
                .collect()
        };
        let is_do = matches!(a.kind(anchor), NodeKind::DoStmt);
        match pos {
            Position::Before => self
                .cfg
                .stmt_entry
                .get(&anchor)
                .map(|&n| into(n, false))
                .unwrap_or_default(),
            Position::After => {
                let sp = a.span(anchor);
                let within = |n: usize| {
                    g.nodes[n]
                        .owner
                        .is_some_and(|o| sp.start <= a.span(o).start && a.span(o).end <= sp.end)
                };
                g.edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| {
                        within(e.from)
                            && !within(e.to)
                            && !e.is_back_edge
                            && (e.to == g.exit || g.nodes[e.to].owner.is_some_and(|o| a.span(o).start >= sp.end))
                    })
                    .map(|(i, _)| i)
                    .collect()
            }
            Position::EndOfBody => {
                let kind = if is_do {
                    CfgNodeKind::Pred
                } else {
                    CfgNodeKind::LoopBack
                };
                let edges = self.loop_node(anchor, kind).map(|n| into(n, false)).unwrap_or_default();
                // text at the end of the body is skipped by `continue`
                edges.into_iter().filter(|&ei| !g.edges[ei].is_continue).collect()
            }
            Position::BeginOfBody => {
                if is_do {
                    self.cfg
                        .stmt_entry
                        .get(&anchor)
                        .map(|&n| into(n, true))
                        .unwrap_or_default()
                } else {
                    let p = self.loop_node(anchor, CfgNodeKind::Pred);
                    g.edges
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| Some(e.from) == p && e.label == EdgeLabel::True)
                        .map(|(i, _)| i)
                        .collect()
                }
            }
            Position::ClauseOnKernel | Position::ClauseOnRegion => Vec::new(),
        }
    }

    fn dependencies(&self) -> Vec<Dependency> {
        let mut seen = BTreeSet::new();
        let mut deps = Vec::new();
        for n in self.cfg.graph.rpo() {
            let mut full = self.inn[n].clone();
            let mut fwd = self.merge(n, Some(false));
            let mut back = self.merge(n, Some(true));
            for op in &self.ops[n] {
                let b = bit(op.space);
                if op.read && full[op.var] & b == 0 && seen.insert((n, op.var, op.space)) {
                    let (ast, subscripts) = match op.access {
                        Some(i) => (self.acc[i].ast, self.acc[i].subscripts.clone()),
                        None => (self.cfg.function, Vec::new()),
                    };
                    deps.push(Dependency {
                        var: self.vars[op.var],
                        name: self.names[op.var].clone(),
                        consumer: op.space,
                        node: n,
                        ast,
                        subscripts,
                        stale_forward: fwd[op.var] & b == 0,
                        stale_back_edge: back[op.var] & b == 0,
                    });
                }
                Self::apply(&mut full, op);
                Self::apply(&mut fwd, op);
                Self::apply(&mut back, op);
            }
        }
        deps
    }

    /// Region nodes first, then source order.
    fn priority(&self, n: usize) -> (bool, usize) {
        let at = self
            .cfg
            .node(n)
            .owner
            .map(|o| self.tu.ast.span(o).start)
            .unwrap_or(usize::MAX);
        (!self.in_region[n], at)
    }

    fn var_index(&self, v: NodeId) -> usize {
        self.vars.iter().position(|&x| x == v).unwrap_or(0)
    }

    fn node_stmt(&self, n: usize) -> NodeId {
        normalize(self.tu, self.cfg.node(n).owner.unwrap_or(self.cfg.function))
    }

    fn is_loop_owned(&self, n: usize) -> Option<NodeId> {
        self.cfg.node(n).owner.filter(|&o| self.tu.ast.is_loop(o))
    }

    fn for_loops(&self, n: usize) -> Vec<NodeId> {
        self.cfg
            .node(n)
            .enclosing_loops
            .iter()
            .copied()
            .filter(|&l| matches!(self.tu.ast.kind(l), NodeKind::ForStmt))
            .collect()
    }

    /// Loops enclosing statement `s`, outermost first.
    fn stmt_loops(&self, s: NodeId) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.tu.ast.ancestors(s).filter(|&l| self.tu.ast.is_loop(l)).collect();
        v.reverse();
        v
    }

    fn nodes_with(&self, v: usize, space: Space, write: bool) -> impl Iterator<Item = usize> + '_ {
        (0..self.ops.len()).filter(move |&n| {
            self.ops[n]
                .iter()
                .any(|o| o.var == v && o.space == space && o.access.is_some() && if write { o.write } else { o.read })
        })
    }

    fn in_loop(&self, l: NodeId, n: usize) -> bool {
        self.cfg.node(n).enclosing_loops.contains(&l)
    }

    fn writes_in_loop(&self, v: usize, space: Space, l: NodeId) -> bool {
        self.nodes_with(v, space, true).any(|n| self.in_loop(l, n))
    }

    /// Hoist `anchor` out of enclosing loops free of producer-space writes.
    fn hoist_out(&self, anchor: NodeId, v: usize, producer: Space) -> NodeId {
        let mut a = anchor;
        for l in self.stmt_loops(anchor).into_iter().rev() {
            if self.writes_in_loop(v, producer, l) {
                break;
            }
            a = normalize(self.tu, l);
        }
        a
    }

    fn before_state(&self, s: NodeId) -> State {
        match self.cfg.stmt_entry.get(&s) {
            Some(&n) => self.merge(n, Some(false)),
            None => vec![0; self.vars.len()],
        }
    }

    fn checked(&self) -> bool {
        self.opts.hoist != HoistMode::Unchecked
    }

    /// Loop-nest anchor for an update consumed at node `n`.
    fn placement(&self, d: &Dependency, v: usize, producer: Space, lim: usize) -> NodeId {
        let stmt = self.node_stmt(d.node);
        if self.opts.hoist == HoistMode::Innermost {
            return stmt;
        }
        let loops = self.for_loops(d.node);
        let pos = find_update_insert_loc(self.tu, d.ast, &d.subscripts, &loops, lim);
        let is_loop = loops.contains(&pos);
        if !self.checked() {
            return if is_loop { normalize(self.tu, pos) } else { stmt };
        }
        let a0 = if is_loop {
            finalize_update_anchor(pos, &loops, stmt, &|l| !self.writes_in_loop(v, producer, l))
        } else {
            stmt
        };
        self.hoist_out(normalize(self.tu, a0), v, producer)
    }

    /// Candidate decisions for a dependency, most preferred first.
    fn resolve(&self, d: &Dependency) -> Vec<Decisions> {
        let v = self.var_index(d.var);
        let suppress = self.opts.allow_stale.contains(&d.name);
        let mut dec = Decisions::default();
        let mut fallback = Decisions::default();
        match d.consumer {
            Space::Device => {
                self.resolve_device(d, v, suppress, &mut dec);
                self.fallback_to(v, suppress, &mut fallback);
            }
            Space::Host if !self.in_region[d.node] => return self.resolve_after_region(v, suppress),
            Space::Host => {
                self.resolve_host(d, v, suppress, &mut dec);
                if !suppress {
                    self.fallback_from(v, &mut fallback);
                }
            }
        }
        if self.checked() && !suppress && fallback != dec {
            return vec![dec, fallback];
        }
        vec![dec]
    }

    fn resolve_after_region(&self, v: usize, suppress: bool) -> Vec<Decisions> {
        let g = &self.cfg.graph;
        let exits_valid = (0..g.edges.len()).filter(|&ei| self.leaving(ei)).all(|ei| {
            let mut s = self.out[g.edges[ei].from].clone();
            self.edge_apply(ei, &mut s, false);
            s[v] & DEV != 0
        });
        let from = Decisions {
            from: [v].into(),
            ..Default::default()
        };
        if exits_valid || !self.checked() {
            return vec![from];
        }
        let tofrom = Decisions {
            to: [v].into(),
            from: [v].into(),
            ..Default::default()
        };
        let mut fallback = Decisions::default();
        if !suppress {
            self.fallback_from(v, &mut fallback);
        }
        vec![tofrom, fallback]
    }

    fn resolve_device(&self, d: &Dependency, v: usize, suppress: bool, dec: &mut Decisions) {
        let a = &self.tu.ast;
        let k = self.node_stmt(d.node);
        let lim = self
            .nodes_with(v, Space::Host, true)
            .filter(|&m| self.in_region[m])
            .map(|m| a.span(self.node_stmt(m)).end)
            .filter(|&e| e <= a.span(k).start)
            .max()
            .unwrap_or(self.region_span.start);
        let anchor = self.placement(d, v, Space::Host, lim);
        let in_loop = !self.stmt_loops(anchor).is_empty();
        let written_before = self
            .nodes_with(v, Space::Host, true)
            .any(|m| self.in_region[m] && a.span(self.node_stmt(m)).start < a.span(anchor).start);
        if !in_loop && !written_before {
            dec.to.insert(v);
            return;
        }
        if suppress {
            return;
        }
        if self.checked() && self.before_state(anchor)[v] & HOST == 0 {
            self.fallback_to(v, suppress, dec);
            return;
        }
        dec.plans.insert((PlanKind::UpdateTo, anchor, Position::Before, d.var));
    }

    fn resolve_host(&self, d: &Dependency, v: usize, suppress: bool, dec: &mut Decisions) {
        let a = &self.tu.ast;
        if suppress {
            return;
        }
        let node = self.cfg.node(d.node);
        if let (Some(l), CfgNodeKind::Pred | CfgNodeKind::LoopBack) = (self.is_loop_owned(d.node), node.kind) {
            let is_do = matches!(a.kind(l), NodeKind::DoStmt);
            if is_do || node.kind == CfgNodeKind::LoopBack || d.stale_back_edge {
                let lb = self.loop_node(
                    l,
                    if is_do {
                        CfgNodeKind::Pred
                    } else {
                        CfgNodeKind::LoopBack
                    },
                );
                match lb {
                    Some(lb) => {
                        if self.checked() && self.inn[lb][v] & DEV == 0 {
                            dec.to.insert(v);
                        }
                        dec.plans.insert((PlanKind::UpdateFrom, l, Position::EndOfBody, d.var));
                    }
                    None => return self.fallback_from(v, dec),
                }
            }
            if d.stale_forward && !is_do && node.kind == CfgNodeKind::Pred {
                let anchor = if self.checked() && self.opts.hoist != HoistMode::Innermost {
                    self.hoist_out(normalize(self.tu, l), v, Space::Device)
                } else {
                    normalize(self.tu, l)
                };
                if self.checked() && self.before_state(anchor)[v] & DEV == 0 {
                    dec.to.insert(v);
                }
                dec.plans
                    .insert((PlanKind::UpdateFrom, anchor, Position::Before, d.var));
            }
            return;
        }
        let stmt = self.node_stmt(d.node);
        let lim = self
            .nodes_with(v, Space::Device, true)
            .map(|m| a.span(self.node_stmt(m)).end)
            .filter(|&e| e <= a.span(stmt).start)
            .max()
            .unwrap_or(self.region_span.start);
        let anchor = self.placement(d, v, Space::Device, lim);
        // Device copy may be unset on some path; copying in at entry keeps the update harmless.
        if self.checked() && self.before_state(anchor)[v] & DEV == 0 {
            dec.to.insert(v);
        }
        dec.plans
            .insert((PlanKind::UpdateFrom, anchor, Position::Before, d.var));
    }

    /// Refresh the host after every kernel that writes `v`.
    fn fallback_from(&self, v: usize, dec: &mut Decisions) {
        for k in self.nodes_with(v, Space::Device, true).collect::<Vec<_>>() {
            dec.plans
                .insert((PlanKind::UpdateFrom, self.node_stmt(k), Position::After, self.vars[v]));
        }
    }

    /// Copy in at region entry and refresh the device after every host write.
    fn fallback_to(&self, v: usize, suppress: bool, dec: &mut Decisions) {
        dec.to.insert(v);
        if suppress {
            return;
        }
        let reads_in = |l: NodeId| self.nodes_with(v, Space::Device, false).any(|n| self.in_loop(l, n));
        let used_in = |l: NodeId| reads_in(l) || self.writes_in_loop(v, Space::Device, l);
        for m in self
            .nodes_with(v, Space::Host, true)
            .filter(|&m| self.in_region[m])
            .collect::<Vec<_>>()
        {
            let mut anchor = match self.is_loop_owned(m) {
                Some(l) => {
                    if reads_in(l) {
                        dec.plans
                            .insert((PlanKind::UpdateTo, l, Position::BeginOfBody, self.vars[v]));
                    }
                    normalize(self.tu, l)
                }
                None => self.node_stmt(m),
            };
            for l in self.stmt_loops(anchor).into_iter().rev() {
                if used_in(l) || !self.host_valid_on_back_edge(l, v) {
                    break;
                }
                anchor = normalize(self.tu, l);
            }
            dec.plans
                .insert((PlanKind::UpdateTo, anchor, Position::After, self.vars[v]));
        }
    }

    /// Host copy of `v` is valid whenever loop `l` repeats.
    fn host_valid_on_back_edge(&self, l: NodeId, v: usize) -> bool {
        let Some(lb) = self.loop_node(l, CfgNodeKind::LoopBack) else {
            return false;
        };
        let g = &self.cfg.graph;
        g.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.from == lb && e.is_back_edge)
            .all(|(ei, _)| {
                let mut s = self.out[lb].clone();
                self.edge_apply(ei, &mut s, false);
                s[v] & HOST != 0
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;

    fn report_with(src: &str, opts: &Options) -> String {
        let f = SourceFile::new("t.c", src);
        let tu = parse_source(&f).unwrap();
        analyze(&tu, &f, opts).unwrap().report(&tu, &f)
    }

    fn report(src: &str) -> String {
        report_with(src, &Options::default())
    }

    fn lines(r: &str) -> Vec<&str> {
        r.lines().collect()
    }

    const LOOP_KERNEL: &str = "int main() {
  int a[100];
  for (int i = 0; i < 100; ++i) {
    #pragma omp target
    for (int j = 0; j < 100; ++j) {
      a[j] += j;
    }
  }
  return a[3];
}
";

    #[test]
    fn loop_kernel_maps_tofrom_once() {
        assert_eq!(lines(&report(LOOP_KERNEL)), vec!["map_tofrom(a) @ t.c:3 (clause)"]);
    }

    #[test]
    fn chained_kernels_without_later_use_map_to() {
        let src = "int main() {
  int a[100];
  #pragma omp target
  for (int i = 0; i < 100; ++i) a[i] += i;
  #pragma omp target
  for (int i = 0; i < 100; ++i) a[i] *= i;
  return 0;
}
";
        assert_eq!(lines(&report(src)), vec!["map_to(a) @ t.c:3 (clause)"]);
    }

    #[test]
    fn host_sum_after_kernel_in_loop() {
        let src = "void f(int *s) {
  int a[8];
  int sum = 0;
  for (int i = 0; i < 4; ++i) {
    #pragma omp target teams distribute parallel for
    for (int j = 0; j < 8; ++j)
      a[j] += j;
    for (int j = 0; j < 8; ++j)
      sum += a[j];
  }
  *s = sum;
}
";
        let r = report(src);
        assert_eq!(
            lines(&r),
            vec!["map_to(a) @ t.c:4 (clause)", "update_from(a) @ t.c:8 (before)"]
        );
    }

    const BACKPROP: &str = "void f(float *partial_sum, float *hidden, int hid, int num_blocks) {
  float sum;
  #pragma omp target teams distribute parallel for
  for (int k = 0; k < num_blocks * hid; k++)
    partial_sum[k] = k;
  for (int j = 1; j <= hid; j++) {
    sum = 0.0f;
    for (int k = 0; k < num_blocks; k++) {
      sum += partial_sum[k * hid + j - 1];
    }
    hidden[j] = sum;
  }
  #pragma omp target teams distribute parallel for
  for (int k = 0; k < hid; k++)
    partial_sum[k] += hidden[k];
}
";

    #[test]
    fn backprop_update_before_outer_loop() {
        let r = report(BACKPROP);
        assert!(r.contains("update_from(partial_sum) @ t.c:6 (before)"), "{r}");
        assert!(r.contains("map_from(partial_sum) @ t.c:3 (clause)"), "{r}");
        assert!(r.contains("update_to(hidden) @ t.c:13 (before)"), "{r}");
        assert!(r.contains("firstprivate(hid, num_blocks) @ t.c:3 (clause)"), "{r}");
    }

    #[test]
    fn innermost_mode_keeps_update_in_inner_loop() {
        let r = report_with(
            BACKPROP,
            &Options {
                hoist: HoistMode::Innermost,
                ..Default::default()
            },
        );
        assert!(r.contains("update_from(partial_sum) @ t.c:9 (before)"), "{r}");
    }

    #[test]
    fn allow_stale_suppresses_updates() {
        let opts = Options {
            allow_stale: ["partial_sum".to_string()].into(),
            ..Default::default()
        };
        let r = report_with(BACKPROP, &opts);
        assert!(!r.contains("update_from"), "{r}");
    }

    #[test]
    fn host_write_in_loop_needs_update_to() {
        let src = "void f(int *a, int n) {
  for (int it = 0; it < 10; it++) {
    a[0] = it;
    #pragma omp target teams distribute parallel for map(tofrom: a[0:n])
    for (int j = 0; j < n; j++)
      a[j] += 1;
  }
}
";
        let r = report(src);
        assert!(r.contains("update_to(a) @ t.c:4 (before)"), "{r}");
        assert!(r.contains("map_tofrom(a) @ t.c:2 (clause)"), "{r}");
    }

    #[test]
    fn while_condition_refreshed_at_end_of_body() {
        let src = "int main() {
  int flag = 1;
  int a[4];
  while (flag) {
    #pragma omp target map(tofrom: flag)
    for (int j = 0; j < 4; j++) {
      a[j] = j;
      flag = 0;
    }
  }
  return a[0];
}
";
        let r = report(src);
        assert!(r.contains("update_from(flag) @ t.c:4 (end-of-body)"), "{r}");
        assert!(r.contains("map_tofrom(a) @ t.c:4 (clause)"), "{r}");
        assert!(r.contains("map_alloc(flag) @ t.c:4 (clause)"), "{r}");
    }

    #[test]
    fn param_buffer_escapes_with_from() {
        let src = "void f(double *x, int n) {
  #pragma omp target teams distribute parallel for map(from: x[0:n])
  for (int i = 0; i < n; i++)
    x[i] = 2.0 * i;
}
";
        let r = report(src);
        assert!(r.contains("map_from(x) @ t.c:2 (clause)"), "{r}");
        assert!(r.contains("firstprivate(n)"), "{r}");
    }

    #[test]
    fn declaration_inside_region_is_rejected() {
        let src = "int main() {
  int a[4];
  #pragma omp target
  for (int j = 0; j < 4; j++) a[j] = j;
  int b[4];
  #pragma omp target
  for (int j = 0; j < 4; j++) b[j] = a[j];
  return b[0];
}
";
        let f = SourceFile::new("t.c", src);
        let tu = parse_source(&f).unwrap();
        let e = analyze(&tu, &f, &Options::default()).unwrap_err();
        assert!(matches!(e, Error::Placement(_)));
        let d = e.diagnostic().unwrap();
        assert_eq!(d.line, 5);
        assert!(d.message.contains("before line 3"), "{}", d.message);
    }

    #[test]
    fn return_inside_region_is_unsupported() {
        let src = "int f(int *a, int n) {
  #pragma omp target
  for (int j = 0; j < 4; j++) a[j] = j;
  if (n) return 1;
  #pragma omp target
  for (int j = 0; j < 4; j++) a[j] += j;
  return 0;
}
";
        let f = SourceFile::new("t.c", src);
        let tu = parse_source(&f).unwrap();
        assert!(matches!(
            analyze(&tu, &f, &Options::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn divergent_branches_fall_back_to_producer_sync() {
        let src = "void f(int *a, int c) {
  if (c) {
    #pragma omp target
    for (int j = 0; j < 4; j++) a[j] = j;
  } else {
    a[0] = 1;
  }
  #pragma omp target
  for (int j = 0; j < 4; j++) a[j] += 1;
}
";
        let r = report(src);
        // the join leaves neither copy valid, so the host write is pushed instead
        assert!(r.contains("update_to(a) @ t.c:6 (after)"), "{r}");
        assert!(r.contains("map_tofrom(a) @ t.c:2 (clause)"), "{r}");
    }

    #[test]
    fn no_kernels_no_plans() {
        let r = report("int main() { int a[3]; a[0] = 1; return a[0]; }\n");
        assert!(r.is_empty());
    }

    #[test]
    fn offloading_callee_vars_are_left_implicit() {
        let src = "void g(int *p) {
  #pragma omp target
  for (int j = 0; j < 4; j++) p[j] = j;
}
int main() {
  int a[4];
  int b[4];
  #pragma omp target
  for (int j = 0; j < 4; j++) b[j] = j;
  g(a);
  #pragma omp target
  for (int j = 0; j < 4; j++) a[j] += b[j];
  return a[0] + b[0];
}
";
        let f = SourceFile::new("t.c", src);
        let tu = parse_source(&f).unwrap();
        let an = analyze(&tu, &f, &Options::default()).unwrap();
        let main = an.functions.iter().find(|p| p.name == "main").unwrap();
        let maps = &main.region.as_ref().unwrap().maps;
        assert_eq!(maps.iter().map(|m| m.1.as_str()).collect::<Vec<_>>(), vec!["b"]);
        assert_eq!(main.excluded.len(), 1);
    }

    #[test]
    fn conditional_host_write_is_not_hoisted_out_of_loop() {
        let src = "int main() {
  int a[8], c[8];
  int s = 1;
  #pragma omp target
  for (int i = 0; i < 8; i++) c[i] = i;
  for (int t = 0; t < 3; t++) {
    if (s > 10) {
      for (int i = 0; i < 8; i++)
        c[i] = a[i];
    }
    s += 4;
  }
  #pragma omp target
  for (int i = 0; i < 8; i++) a[i] = c[i];
  return a[0];
}
";
        let r = report(src);
        assert!(r.contains("update_to(c) @ t.c:8 (after)"), "{r}");
        assert!(!r.contains("t.c:6 (after)"), "{r}");
    }

    #[test]
    fn host_read_before_first_kernel_copies_in() {
        let src = "int main() {
  int c[8];
  int s = 0;
  for (int i = 0; i < 8; i++) c[i] = 0;
  for (int t = 0; t < 3; t++) {
    s += c[2];
    #pragma omp target
    for (int i = 0; i < 8; i++) c[i] = c[i] + s;
  }
  return s;
}
";
        let r = report(src);
        assert!(r.contains("update_from(c) @ t.c:6 (before)"), "{r}");
        assert!(!r.contains("(after)"), "{r}");
        assert!(r.contains("map_to(c)") || r.contains("map_tofrom(c)"), "{r}");
    }
}
