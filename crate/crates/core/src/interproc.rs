//! Interprocedural side-effect summaries. Each function gets the effect it
//! has on memory reachable through its pointer parameters and on globals;
//! call sites are then expanded with those effects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::access::{const_param_is_readonly, AccessKind, FunctionAccesses, MemoryAccess, Space};
use crate::astcfg::AstCfg;
use crate::frontend::{NodeId, NodeKind, TranslationUnit};

/// Effect lattice element with the spaces it occurs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Effect {
    pub read: bool,
    pub write: bool,
    pub host: bool,
    pub device: bool,
}

impl Effect {
    pub const NONE: Effect = Effect {
        read: false,
        write: false,
        host: false,
        device: false,
    };
    pub const READ_HOST: Effect = Effect {
        read: true,
        write: false,
        host: true,
        device: false,
    };
    pub const WRITE_HOST: Effect = Effect {
        read: false,
        write: true,
        host: true,
        device: false,
    };
    pub const RW_HOST: Effect = Effect {
        read: true,
        write: true,
        host: true,
        device: false,
    };

    pub fn from_access(kind: AccessKind, space: Space) -> Effect {
        Effect {
            read: kind.reads(),
            write: kind.writes(),
            host: space == Space::Host,
            device: space == Space::Device,
        }
    }

    pub fn join(self, o: Effect) -> Effect {
        Effect {
            read: self.read || o.read,
            write: self.write || o.write,
            host: self.host || o.host,
            device: self.device || o.device,
        }
    }

    pub fn is_none(self) -> bool {
        !self.read && !self.write
    }

    pub fn kind(self) -> Option<AccessKind> {
        match (self.read, self.write) {
            (false, false) => None,
            (true, false) => Some(AccessKind::Read),
            (false, true) => Some(AccessKind::Write),
            (true, true) => Some(AccessKind::ReadWrite),
        }
    }

    /// Same kind, all in one space.
    pub fn in_space(self, s: Space) -> Effect {
        Effect {
            host: s == Space::Host,
            device: s == Space::Device,
            ..self
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind() {
            None => return f.write_str("none"),
            Some(k) => k,
        };
        let spaces = match (self.host, self.device) {
            (true, true) => "host,device",
            (false, true) => "device",
            _ => "host",
        };
        write!(f, "{k}({spaces})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSummary {
    pub name: String,
    /// Effect through each parameter, by position.
    pub params: Vec<(String, Effect)>,
    /// Effect through arguments past the declared parameters.
    pub extra_args: Effect,
    /// Global declaration -> effect.
    pub globals: BTreeMap<NodeId, Effect>,
    /// No body available; effects are assumed.
    pub external: bool,
}

impl CallSummary {
    pub fn param(&self, i: usize) -> Effect {
        self.params.get(i).map(|p| p.1).unwrap_or(self.extra_args)
    }

    pub fn has_device_effects(&self) -> bool {
        self.params.iter().any(|p| p.1.device && !p.1.is_none())
            || self.globals.values().any(|e| e.device && !e.is_none())
    }
}

#[derive(Debug, Clone)]
pub struct Summaries {
    pub by_name: BTreeMap<String, CallSummary>,
    /// Passes until no summary changed (including the confirming pass).
    pub passes: usize,
    /// Longest chain of functions along call edges among defined functions.
    pub max_call_depth: usize,
    pub recursive: bool,
    non_static_globals: Vec<NodeId>,
}

/// Library functions with known effects when no declaration is in the file.
fn builtin(name: &str) -> Option<(Vec<Effect>, Effect)> {
    use Effect as E;
    let none = E::NONE;
    Some(match name {
        "printf" | "puts" | "fprintf" | "putchar" | "fputs" | "perror" | "strlen" | "strcmp" | "atoi" | "atof"
        | "atol" | "strtol" | "strtod" => (vec![], E::READ_HOST),
        "sprintf" | "snprintf" => (vec![E::WRITE_HOST], E::READ_HOST),
        "sqrt"
        | "sqrtf"
        | "exp"
        | "expf"
        | "log"
        | "logf"
        | "fabs"
        | "fabsf"
        | "abs"
        | "sin"
        | "sinf"
        | "cos"
        | "cosf"
        | "tan"
        | "pow"
        | "powf"
        | "floor"
        | "ceil"
        | "fmin"
        | "fmax"
        | "fminf"
        | "fmaxf"
        | "rand"
        | "srand"
        | "time"
        | "clock"
        | "exit"
        | "malloc"
        | "calloc"
        | "omp_get_wtime"
        | "omp_get_num_threads"
        | "omp_get_thread_num"
        | "omp_get_num_teams"
        | "omp_get_team_num"
        | "omp_get_num_devices"
        | "assert" => (vec![], none),
        "free" => (vec![E::WRITE_HOST], none),
        "realloc" => (vec![E::RW_HOST], none),
        "memcpy" | "memmove" | "strcpy" | "strncpy" => (vec![E::WRITE_HOST, E::READ_HOST], none),
        "memset" => (vec![E::WRITE_HOST], none),
        "gettimeofday" => (vec![E::WRITE_HOST], none),
        _ => return None,
    })
}

impl Summaries {
    /// Summary for a callee, assuming the worst for anything unknown.
    pub fn get(&self, name: &str) -> CallSummary {
        if let Some(s) = self.by_name.get(name) {
            return s.clone();
        }
        if let Some((params, extra)) = builtin(name) {
            return CallSummary {
                name: name.to_string(),
                params: params.into_iter().map(|e| (String::new(), e)).collect(),
                extra_args: extra,
                globals: BTreeMap::new(),
                external: true,
            };
        }
        CallSummary {
            name: name.to_string(),
            params: Vec::new(),
            extra_args: Effect::RW_HOST,
            globals: self.non_static_globals.iter().map(|&g| (g, Effect::RW_HOST)).collect(),
            external: true,
        }
    }

    /// `fn: param -> effect` lines, defined functions first.
    pub fn report(&self, tu: &TranslationUnit) -> String {
        let mut out = String::new();
        let mut names: Vec<_> = self.by_name.values().collect();
        names.sort_by_key(|s| (s.external, s.name.clone()));
        for s in names {
            for (p, e) in &s.params {
                if !p.is_empty() {
                    out.push_str(&format!("{}: {} -> {}\n", s.name, p, e));
                }
            }
            for (g, e) in &s.globals {
                let gname = tu.ast.name(*g).unwrap_or("?");
                out.push_str(&format!("{}: global {} -> {}\n", s.name, gname, e));
            }
        }
        out
    }
}

fn is_buffer_param(tu: &TranslationUnit, d: NodeId) -> bool {
    matches!(tu.ast.kind(d), NodeKind::ParamDecl { .. })
        && tu.ast.node(d).type_info.as_ref().is_some_and(|t| t.is_buffer())
}

fn is_global(tu: &TranslationUnit, d: NodeId) -> bool {
    matches!(
        tu.ast.kind(d),
        NodeKind::VarDecl {
            storage: crate::frontend::Storage::Global,
            ..
        }
    )
}

fn prototype_summary(tu: &TranslationUnit, f: NodeId, globals: &[NodeId]) -> CallSummary {
    let params = tu
        .ast
        .function_params(f)
        .into_iter()
        .map(|p| {
            let name = tu.ast.name(p).unwrap_or_default().to_string();
            let e = if !is_buffer_param(tu, p) {
                Effect::NONE
            } else if const_param_is_readonly(tu, p) {
                Effect::READ_HOST
            } else {
                Effect::RW_HOST
            };
            (name, e)
        })
        .collect();
    CallSummary {
        name: tu.ast.name(f).unwrap_or_default().to_string(),
        params,
        extra_args: Effect::RW_HOST,
        globals: globals.iter().map(|&g| (g, Effect::RW_HOST)).collect(),
        external: true,
    }
}

/// Effect of a callee effect at a call site evaluated in `site`.
fn at_site(e: Effect, site: Space) -> Effect {
    match site {
        Space::Device => e.in_space(Space::Device),
        Space::Host => e,
    }
}

fn summarize_one(tu: &TranslationUnit, fa: &FunctionAccesses, prev: &Summaries) -> CallSummary {
    let f = fa.function;
    let params: Vec<NodeId> = tu.ast.function_params(f);
    let mut param_eff: BTreeMap<NodeId, Effect> = BTreeMap::new();
    let mut globals: BTreeMap<NodeId, Effect> = BTreeMap::new();
    let record =
        |var: NodeId, e: Effect, param_eff: &mut BTreeMap<NodeId, Effect>, globals: &mut BTreeMap<NodeId, Effect>| {
            if e.is_none() {
                return;
            }
            if is_buffer_param(tu, var) {
                let slot = param_eff.entry(var).or_default();
                *slot = slot.join(e);
            } else if is_global(tu, var) {
                let slot = globals.entry(var).or_default();
                *slot = slot.join(e);
            }
        };
    let callee_name = |call: NodeId| -> Option<String> {
        let c = tu.ast.strip_casts(tu.ast.child(call, 0)?);
        tu.ast.name(c).map(str::to_string)
    };
    for a in &fa.accesses {
        let e = match (a.kind, a.call) {
            (AccessKind::Unknown, Some((call, Some(i)))) => {
                let Some(name) = callee_name(call) else { continue };
                at_site(prev.get(&name).param(i), a.space)
            }
            _ if a.by_value => Effect::from_access(a.kind, Space::Host),
            _ => Effect::from_access(a.kind, a.space),
        };
        record(a.var, e, &mut param_eff, &mut globals);
    }
    for cp in &fa.calls {
        let Some(name) = callee_name(cp.call) else { continue };
        for (g, e) in prev.get(&name).globals {
            record(g, at_site(e, cp.space), &mut param_eff, &mut globals);
        }
    }
    CallSummary {
        name: tu.ast.name(f).unwrap_or_default().to_string(),
        params: params
            .iter()
            .map(|&p| {
                (
                    tu.ast.name(p).unwrap_or_default().to_string(),
                    param_eff.get(&p).copied().unwrap_or_default(),
                )
            })
            .collect(),
        extra_args: Effect::NONE,
        globals,
        external: false,
    }
}

fn call_graph(cfgs: &[AstCfg]) -> BTreeMap<String, BTreeSet<String>> {
    let defined: BTreeSet<String> = cfgs.iter().map(|c| c.name.clone()).collect();
    cfgs.iter()
        .map(|c| {
            let callees = c
                .call_sites
                .iter()
                .filter_map(|s| s.callee.clone())
                .filter(|n| defined.contains(n))
                .collect();
            (c.name.clone(), callees)
        })
        .collect()
}

/// Longest path (in functions) of the call graph, and whether it has a cycle.
fn depth_and_cycles(g: &BTreeMap<String, BTreeSet<String>>) -> (usize, bool) {
    fn visit(
        n: &str,
        g: &BTreeMap<String, BTreeSet<String>>,
        memo: &mut BTreeMap<String, usize>,
        on_stack: &mut BTreeSet<String>,
        cyclic: &mut bool,
    ) -> usize {
        if let Some(&d) = memo.get(n) {
            return d;
        }
        if !on_stack.insert(n.to_string()) {
            *cyclic = true;
            return 0;
        }
        let mut best = 0;
        for c in g.get(n).into_iter().flatten() {
            best = best.max(visit(c, g, memo, on_stack, cyclic));
        }
        on_stack.remove(n);
        memo.insert(n.to_string(), best + 1);
        best + 1
    }
    let mut memo = BTreeMap::new();
    let mut cyclic = false;
    let mut depth = 0;
    for n in g.keys() {
        let mut on_stack = BTreeSet::new();
        depth = depth.max(visit(n, g, &mut memo, &mut on_stack, &mut cyclic));
    }
    (depth, cyclic)
}

/// Fixed-point summaries for every function in the unit.
pub fn summarize_all(tu: &TranslationUnit, cfgs: &[AstCfg], accesses: &[FunctionAccesses]) -> Summaries {
    let non_static_globals: Vec<NodeId> = tu
        .globals()
        .into_iter()
        .filter(|&g| !matches!(tu.ast.kind(g), NodeKind::VarDecl { is_static: true, .. }))
        .collect();
    let graph = call_graph(cfgs);
    let (max_call_depth, recursive) = depth_and_cycles(&graph);
    let mut s = Summaries {
        by_name: BTreeMap::new(),
        passes: 0,
        max_call_depth,
        recursive,
        non_static_globals: non_static_globals.clone(),
    };
    for f in tu.functions() {
        let name = tu.ast.name(f).unwrap_or_default().to_string();
        if tu.ast.function_body(f).is_none() && tu.function_named(&name) == Some(f) {
            s.by_name.insert(name, prototype_summary(tu, f, &non_static_globals));
        }
    }
    for fa in accesses {
        let name = tu.ast.name(fa.function).unwrap_or_default().to_string();
        let params = tu
            .ast
            .function_params(fa.function)
            .into_iter()
            .map(|p| (tu.ast.name(p).unwrap_or_default().to_string(), Effect::NONE))
            .collect();
        s.by_name.insert(
            name.clone(),
            CallSummary {
                name,
                params,
                extra_args: Effect::NONE,
                globals: BTreeMap::new(),
                external: false,
            },
        );
    }
    // Effects only grow, so the iteration terminates; the cap guards recursion.
    let cap = accesses.len() * 4 + 2;
    loop {
        s.passes += 1;
        let next: Vec<CallSummary> = accesses.iter().map(|fa| summarize_one(tu, fa, &s)).collect();
        let mut changed = false;
        for n in next {
            let slot = s.by_name.get_mut(&n.name).expect("summary");
            if *slot != n {
                // monotone join keeps the lattice ascending
                let mut joined = n.clone();
                for (i, p) in joined.params.iter_mut().enumerate() {
                    p.1 = p.1.join(slot.param(i));
                }
                for (g, e) in &slot.globals {
                    let v = joined.globals.entry(*g).or_default();
                    *v = v.join(*e);
                }
                if *slot != joined {
                    *slot = joined;
                    changed = true;
                }
            }
        }
        if !changed || s.passes >= cap {
            break;
        }
    }
    s
}

/// Final access list of a function, with call-site effects substituted for
/// the unknown argument accesses.
pub fn apply_call_effects(tu: &TranslationUnit, fa: &FunctionAccesses, summaries: &Summaries) -> Vec<MemoryAccess> {
    let callee_name = |call: NodeId| -> Option<String> {
        let c = tu.ast.strip_casts(tu.ast.child(call, 0)?);
        tu.ast.name(c).map(str::to_string)
    };
    let make = |template: &MemoryAccess, e: Effect, site: Space| -> Vec<MemoryAccess> {
        let Some(kind) = e.kind() else { return Vec::new() };
        match site {
            Space::Device => vec![MemoryAccess {
                kind,
                space: Space::Device,
                ..template.clone()
            }],
            Space::Host => {
                // a callee that offloads by itself hands back host-visible data
                let via_offload_callee = e.device;
                vec![MemoryAccess {
                    kind,
                    space: Space::Host,
                    via_offload_callee,
                    ..template.clone()
                }]
            }
        }
    };
    let mut out = Vec::with_capacity(fa.accesses.len());
    let mut calls = fa.calls.iter().peekable();
    for (i, a) in fa.accesses.iter().enumerate() {
        while let Some(cp) = calls.next_if(|cp| cp.position == i) {
            push_globals(tu, cp.call, cp.cfg_node, cp.space, &callee_name, summaries, &mut out);
        }
        match (a.kind, a.call) {
            (AccessKind::Unknown, Some((call, Some(arg)))) => {
                let e = callee_name(call)
                    .map(|n| summaries.get(&n).param(arg))
                    .unwrap_or(Effect::RW_HOST);
                let e = if a.by_value { e.in_space(Space::Host) } else { e };
                out.extend(make(a, e, a.space));
            }
            (AccessKind::Unknown, _) => out.push(MemoryAccess {
                kind: AccessKind::ReadWrite,
                ..a.clone()
            }),
            _ => out.push(a.clone()),
        }
    }
    for cp in calls {
        push_globals(tu, cp.call, cp.cfg_node, cp.space, &callee_name, summaries, &mut out);
    }
    out
}

fn push_globals(
    tu: &TranslationUnit,
    call: NodeId,
    cfg_node: usize,
    site: Space,
    callee_name: &dyn Fn(NodeId) -> Option<String>,
    summaries: &Summaries,
    out: &mut Vec<MemoryAccess>,
) {
    let Some(name) = callee_name(call) else { return };
    for (g, e) in summaries.get(&name).globals {
        let Some(kind) = e.kind() else { continue };
        out.push(MemoryAccess {
            var: g,
            name: tu.ast.name(g).unwrap_or_default().to_string(),
            kind,
            space: site,
            cfg_node,
            ast: call,
            subscripts: Vec::new(),
            by_value: false,
            call: Some((call, None)),
            via_offload_callee: site == Space::Host && e.device,
        });
    }
}
