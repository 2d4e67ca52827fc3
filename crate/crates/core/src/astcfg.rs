//! Hybrid AST-CFG: a per-function control-flow graph whose nodes point at the
//! AST subtrees they execute. Kernel regions appear as one atomic node in the
//! host graph and carry their own device sub-graph.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Diagnostic, Error, Result};
use crate::frontend::{NodeId, NodeKind, TranslationUnit};
use crate::source::SourceFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CfgNodeKind {
    Entry,
    Exit,
    Decl,
    Stmt,
    Pred,
    LoopBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeLabel {
    Epsilon,
    True,
    False,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfgNode {
    pub id: usize,
    pub kind: CfgNodeKind,
    /// Expression or statement evaluated by this node.
    pub ast: Option<NodeId>,
    /// Statement the node belongs to (for `Pred`/`LoopBack`, the loop or branch).
    pub owner: Option<NodeId>,
    pub offloaded: bool,
    /// Syntactically enclosing loops, innermost last.
    pub enclosing_loops: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CfgEdge {
    pub from: usize,
    pub to: usize,
    pub label: EdgeLabel,
    pub is_back_edge: bool,
    /// Taken by a `continue` statement.
    pub is_continue: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub nodes: Vec<CfgNode>,
    pub edges: Vec<CfgEdge>,
    pub entry: usize,
    pub exit: usize,
}

impl Graph {
    pub fn succs(&self, n: usize) -> impl Iterator<Item = &CfgEdge> + '_ {
        self.edges.iter().filter(move |e| e.from == n)
    }

    pub fn preds(&self, n: usize) -> impl Iterator<Item = &CfgEdge> + '_ {
        self.edges.iter().filter(move |e| e.to == n)
    }

    /// Reverse post-order from the entry, ignoring back edges.
    pub fn rpo(&self) -> Vec<usize> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if !e.is_back_edge {
                adj[e.from].push(e.to);
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut post = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.entry, 0usize)];
        seen[self.entry] = true;
        while let Some((n, i)) = stack.pop() {
            if i < adj[n].len() {
                stack.push((n, i + 1));
                let s = adj[n][i];
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                post.push(n);
            }
        }
        post.reverse();
        post
    }

    pub fn back_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.is_back_edge).count()
    }
}

#[derive(Debug, Clone)]
pub struct CallSite {
    pub node: usize,
    /// Index into `AstCfg::kernels` when the call runs on the device.
    pub kernel: Option<usize>,
    pub call: NodeId,
    /// None when the callee is not a plain name.
    pub callee: Option<String>,
    pub args: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct KernelCfg {
    pub directive: NodeId,
    /// The atomic node standing for the kernel in the host graph.
    pub host_node: usize,
    pub body: Graph,
}

#[derive(Debug, Clone)]
pub struct AstCfg {
    pub function: NodeId,
    pub name: String,
    pub graph: Graph,
    pub kernels: Vec<KernelCfg>,
    pub call_sites: Vec<CallSite>,
    /// Host node at which each lowered statement begins executing.
    pub stmt_entry: HashMap<NodeId, usize>,
    pub warnings: Vec<Diagnostic>,
}

impl AstCfg {
    pub fn node(&self, id: usize) -> &CfgNode {
        &self.graph.nodes[id]
    }

    pub fn kernel_at(&self, host_node: usize) -> Option<&KernelCfg> {
        self.kernels.iter().find(|k| k.host_node == host_node)
    }

    /// Textual listing used by `--dump-cfg`.
    pub fn dump(&self, tu: &TranslationUnit, file: &SourceFile) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "function {}", self.name);
        dump_graph(&mut out, &self.graph, tu, file);
        for k in &self.kernels {
            let line = file.line_of(tu.ast.span(k.directive).start);
            let _ = writeln!(out, "kernel at line {line} (host node {})", k.host_node);
            dump_graph(&mut out, &k.body, tu, file);
        }
        out
    }
}

fn dump_graph(out: &mut String, g: &Graph, tu: &TranslationUnit, file: &SourceFile) {
    for n in &g.nodes {
        let line = n
            .ast
            .or(n.owner)
            .map(|a| file.line_of(tu.ast.span(a).start).to_string())
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{} | {:?} | {} | {}", n.id, n.kind, n.offloaded, line);
    }
    for e in &g.edges {
        let label = match e.label {
            EdgeLabel::Epsilon => "e",
            EdgeLabel::True => "true",
            EdgeLabel::False => "false",
        };
        let back = if e.is_back_edge { " back" } else { "" };
        let _ = writeln!(out, "{} -> {} [{}{}]", e.from, e.to, label, back);
    }
}

struct Jump {
    target: NodeId,
    is_switch: bool,
    breaks: Vec<(usize, EdgeLabel)>,
    continues: Vec<(usize, EdgeLabel)>,
}

struct Builder<'a> {
    tu: &'a TranslationUnit,
    file: &'a SourceFile,
    g: Graph,
    offloaded: bool,
    loops: Vec<NodeId>,
    pending: Vec<(usize, EdgeLabel)>,
    continue_marks: Vec<(usize, EdgeLabel)>,
    returns: Vec<(usize, EdgeLabel)>,
    jumps: Vec<Jump>,
    awaiting_entry: Vec<NodeId>,
    stmt_entry: HashMap<NodeId, usize>,
    kernels: Vec<KernelCfg>,
    call_sites: Vec<CallSite>,
    warnings: Vec<Diagnostic>,
    /// Index of the kernel being built (sub-builders only).
    kernel_index: Option<usize>,
}

impl<'a> Builder<'a> {
    fn new(tu: &'a TranslationUnit, file: &'a SourceFile, offloaded: bool, loops: Vec<NodeId>) -> Self {
        let mut b = Builder {
            tu,
            file,
            g: Graph::default(),
            offloaded,
            loops,
            pending: Vec::new(),
            continue_marks: Vec::new(),
            returns: Vec::new(),
            jumps: Vec::new(),
            awaiting_entry: Vec::new(),
            stmt_entry: HashMap::new(),
            kernels: Vec::new(),
            call_sites: Vec::new(),
            warnings: Vec::new(),
            kernel_index: None,
        };
        let entry = b.raw_node(CfgNodeKind::Entry, None, None, false);
        b.g.entry = entry;
        b.pending.push((entry, EdgeLabel::Epsilon));
        b
    }

    fn raw_node(&mut self, kind: CfgNodeKind, ast: Option<NodeId>, owner: Option<NodeId>, in_loop: bool) -> usize {
        let id = self.g.nodes.len();
        let mut loops = self.loops.clone();
        if in_loop {
            if let Some(o) = owner {
                loops.push(o);
            }
        }
        self.g.nodes.push(CfgNode {
            id,
            kind,
            ast,
            owner,
            offloaded: self.offloaded,
            enclosing_loops: loops,
        });
        id
    }

    fn connect(&mut self, to: usize) {
        for (from, label) in std::mem::take(&mut self.pending) {
            let is_continue = match self.continue_marks.iter().position(|&m| m == (from, label)) {
                Some(i) => {
                    self.continue_marks.swap_remove(i);
                    true
                }
                None => false,
            };
            self.g.edges.push(CfgEdge {
                from,
                to,
                label,
                is_back_edge: false,
                is_continue,
            });
        }
    }

    /// Create a node reached from the pending edges.
    fn emit(&mut self, kind: CfgNodeKind, ast: Option<NodeId>, owner: NodeId, in_loop: bool) -> usize {
        if self.pending.is_empty() && kind != CfgNodeKind::LoopBack {
            let (l, c) = self.file.line_col(self.tu.ast.span(owner).start);
            self.warnings.push(Diagnostic::warning(l, c, "unreachable code"));
        }
        let id = self.raw_node(kind, ast, Some(owner), in_loop);
        self.connect(id);
        for s in self.awaiting_entry.drain(..) {
            self.stmt_entry.entry(s).or_insert(id);
        }
        self.pending.push((id, EdgeLabel::Epsilon));
        self.collect_calls(id, ast);
        id
    }

    fn collect_calls(&mut self, node: usize, ast: Option<NodeId>) {
        let Some(root) = ast else { return };
        let tu = self.tu;
        let a = &tu.ast;
        if a.is_kernel(root) {
            return;
        }
        for n in a.descendants(root) {
            if !matches!(a.kind(n), NodeKind::Call) {
                continue;
            }
            let callee_node = a.child(n, 0).map(|c| a.strip_casts(c));
            let callee = callee_node.and_then(|c| match a.kind(c) {
                NodeKind::DeclRef { name, .. } => Some(name.clone()),
                _ => None,
            });
            let args = a.node(n).children[1..].iter().filter_map(|c| *c).collect();
            self.call_sites.push(CallSite {
                node,
                kernel: self.kernel_index,
                call: n,
                callee,
                args,
            });
        }
    }

    fn back_edge(&mut self, from: usize, to: usize) {
        self.g.edges.push(CfgEdge {
            from,
            to,
            label: EdgeLabel::Epsilon,
            is_back_edge: true,
            is_continue: false,
        });
    }

    fn unsupported(&self, at: NodeId, msg: &str) -> Error {
        let (l, c) = self.file.line_col(self.tu.ast.span(at).start);
        Error::Unsupported(Diagnostic::error(l, c, msg))
    }

    fn lower(&mut self, s: NodeId) -> Result<()> {
        let tu = self.tu;
        let a = &tu.ast;
        self.awaiting_entry.push(s);
        match a.kind(s).clone() {
            NodeKind::CompoundStmt => {
                for c in a.children(s).collect::<Vec<_>>() {
                    self.lower(c)?;
                }
            }
            NodeKind::DeclStmt => {
                self.emit(CfgNodeKind::Decl, Some(s), s, false);
            }
            NodeKind::ExprStmt => {
                let e = a.child(s, 0);
                self.emit(CfgNodeKind::Stmt, e, s, false);
            }
            NodeKind::NullStmt => {}
            NodeKind::ReturnStmt => {
                let e = a.child(s, 0);
                self.emit(CfgNodeKind::Stmt, e, s, false);
                let p = std::mem::take(&mut self.pending);
                self.returns.extend(p);
            }
            NodeKind::BreakStmt => {
                let p = std::mem::take(&mut self.pending);
                match self.jumps.last_mut() {
                    Some(j) => j.breaks.extend(p),
                    None => return Err(self.unsupported(s, "'break' outside a loop or switch")),
                }
            }
            NodeKind::ContinueStmt => {
                let p = std::mem::take(&mut self.pending);
                match self.jumps.iter_mut().rev().find(|j| !j.is_switch) {
                    Some(j) => j.continues.extend(p),
                    None => return Err(self.unsupported(s, "'continue' outside a loop")),
                }
            }
            NodeKind::IfStmt => {
                let cond = a.child(s, 0);
                let then = a.child(s, 1);
                let els = a.child(s, 2);
                let p = self.emit(CfgNodeKind::Pred, cond, s, false);
                self.pending = vec![(p, EdgeLabel::True)];
                if let Some(t) = then {
                    self.lower(t)?;
                }
                let after_then = std::mem::replace(&mut self.pending, vec![(p, EdgeLabel::False)]);
                if let Some(e) = els {
                    self.lower(e)?;
                }
                self.pending.extend(after_then);
            }
            NodeKind::WhileStmt => {
                let cond = a.child(s, 0);
                let body = a.child(s, 1);
                let p = self.emit(CfgNodeKind::Pred, cond, s, true);
                self.pending = vec![(p, EdgeLabel::True)];
                let jump = self.loop_body(s, body)?;
                self.continue_marks.extend(jump.continues.iter().copied());
                self.pending.extend(jump.continues);
                let lb = self.emit(CfgNodeKind::LoopBack, None, s, true);
                self.pending.clear();
                self.back_edge(lb, p);
                self.pending.push((p, EdgeLabel::False));
                self.pending.extend(jump.breaks);
            }
            NodeKind::ForStmt => {
                let init = a.child(s, 0);
                let cond = a.child(s, 1);
                let inc = a.child(s, 2);
                let body = a.child(s, 3);
                if let Some(i) = init {
                    let kind = if matches!(a.kind(i), NodeKind::DeclStmt) {
                        CfgNodeKind::Decl
                    } else {
                        CfgNodeKind::Stmt
                    };
                    self.emit(kind, Some(i), s, false);
                }
                let p = self.emit(CfgNodeKind::Pred, cond, s, true);
                self.pending = vec![(p, EdgeLabel::True)];
                let jump = self.loop_body(s, body)?;
                self.continue_marks.extend(jump.continues.iter().copied());
                self.pending.extend(jump.continues);
                let lb = self.emit(CfgNodeKind::LoopBack, inc, s, true);
                self.pending.clear();
                self.back_edge(lb, p);
                self.pending.push((p, EdgeLabel::False));
                self.pending.extend(jump.breaks);
            }
            NodeKind::DoStmt => {
                let body = a.child(s, 0);
                let cond = a.child(s, 1);
                let first = self.g.nodes.len();
                let jump = self.loop_body(s, body)?;
                let body_created = self.g.nodes.len() > first;
                self.continue_marks.extend(jump.continues.iter().copied());
                self.pending.extend(jump.continues);
                let p = self.emit(CfgNodeKind::Pred, cond, s, true);
                self.pending = vec![(p, EdgeLabel::True)];
                let lb = self.emit(CfgNodeKind::LoopBack, None, s, true);
                self.pending.clear();
                self.back_edge(lb, if body_created { first } else { p });
                self.pending.push((p, EdgeLabel::False));
                self.pending.extend(jump.breaks);
            }
            NodeKind::SwitchStmt => self.lower_switch(s)?,
            NodeKind::CaseLabel | NodeKind::DefaultLabel => {
                return Err(self.unsupported(s, "case label outside the top level of a switch body"));
            }
            NodeKind::OmpDirective(info) => {
                if info.kind.is_kernel() {
                    if self.offloaded {
                        return Err(self.unsupported(s, "nested kernel directives are not supported"));
                    }
                    self.lower_kernel(s)?;
                } else {
                    match a.child(s, 0) {
                        Some(c) => self.lower(c)?,
                        None => {
                            self.emit(CfgNodeKind::Stmt, Some(s), s, false);
                        }
                    }
                }
            }
            other => {
                return Err(Error::Internal(format!("unexpected statement kind {other:?}")));
            }
        }
        Ok(())
    }

    fn loop_body(&mut self, s: NodeId, body: Option<NodeId>) -> Result<Jump> {
        self.jumps.push(Jump {
            target: s,
            is_switch: false,
            breaks: Vec::new(),
            continues: Vec::new(),
        });
        self.loops.push(s);
        let r = match body {
            Some(b) => self.lower(b),
            None => Ok(()),
        };
        self.loops.pop();
        let j = self.jumps.pop().expect("jump");
        debug_assert_eq!(j.target, s);
        r.map(|_| j)
    }

    fn lower_switch(&mut self, s: NodeId) -> Result<()> {
        let tu = self.tu;
        let a = &tu.ast;
        let cond = a.child(s, 0);
        let body = a.child(s, 1);
        let items: Vec<NodeId> = match body {
            Some(b) if matches!(a.kind(b), NodeKind::CompoundStmt) => a.children(b).collect(),
            Some(b) => vec![b],
            None => Vec::new(),
        };
        let cases: Vec<NodeId> = items
            .iter()
            .copied()
            .filter(|&i| matches!(a.kind(i), NodeKind::CaseLabel))
            .collect();
        let default = items
            .iter()
            .copied()
            .find(|&i| matches!(a.kind(i), NodeKind::DefaultLabel));
        // Pred chain, one per case label; the first evaluates the condition.
        let mut case_pred = HashMap::new();
        let mut last: Option<usize> = None;
        for (k, &c) in cases.iter().enumerate() {
            let id = if k == 0 {
                self.emit(CfgNodeKind::Pred, cond, s, false)
            } else {
                let id = self.raw_node(CfgNodeKind::Pred, cond, Some(s), false);
                self.pending = vec![(last.expect("previous pred"), EdgeLabel::False)];
                self.connect(id);
                id
            };
            case_pred.insert(c, id);
            last = Some(id);
        }
        let fallthrough_start = match last {
            Some(p) => vec![(p, EdgeLabel::False)],
            None => std::mem::take(&mut self.pending),
        };
        self.pending.clear();
        self.jumps.push(Jump {
            target: s,
            is_switch: true,
            breaks: Vec::new(),
            continues: Vec::new(),
        });
        let mut default_in = Some(fallthrough_start);
        for &i in &items {
            match a.kind(i) {
                NodeKind::CaseLabel => {
                    self.pending.push((case_pred[&i], EdgeLabel::True));
                }
                NodeKind::DefaultLabel => {
                    self.pending.extend(default_in.take().unwrap_or_default());
                }
                _ => self.lower(i)?,
            }
        }
        let j = self.jumps.pop().expect("switch jump");
        self.pending.extend(j.breaks);
        if default.is_none() {
            self.pending.extend(default_in.take().unwrap_or_default());
        }
        Ok(())
    }

    fn lower_kernel(&mut self, d: NodeId) -> Result<()> {
        let host = self.emit(CfgNodeKind::Stmt, Some(d), d, false);
        self.g.nodes[host].offloaded = true;
        let idx = self.kernels.len();
        let mut sub = Builder::new(self.tu, self.file, true, self.loops.clone());
        sub.kernel_index = Some(idx);
        if let Some(c) = self.tu.ast.child(d, 0) {
            sub.lower(c)?;
        }
        let body = sub.finish();
        self.warnings.extend(body.warnings);
        self.call_sites.extend(body.call_sites);
        self.kernels.push(KernelCfg {
            directive: d,
            host_node: host,
            body: body.graph,
        });
        Ok(())
    }

    fn finish(mut self) -> Built {
        let exit = self.raw_node(CfgNodeKind::Exit, None, None, false);
        self.pending.append(&mut self.returns);
        self.connect(exit);
        for s in self.awaiting_entry.drain(..) {
            self.stmt_entry.entry(s).or_insert(exit);
        }
        self.g.exit = exit;
        Built {
            graph: self.g,
            kernels: self.kernels,
            call_sites: self.call_sites,
            stmt_entry: self.stmt_entry,
            warnings: self.warnings,
        }
    }
}

struct Built {
    graph: Graph,
    kernels: Vec<KernelCfg>,
    call_sites: Vec<CallSite>,
    stmt_entry: HashMap<NodeId, usize>,
    warnings: Vec<Diagnostic>,
}

/// Build the AST-CFG of a function definition.
pub fn build_astcfg(tu: &TranslationUnit, file: &SourceFile, function: NodeId) -> Result<AstCfg> {
    let name = tu.ast.name(function).unwrap_or_default().to_string();
    let mut b = Builder::new(tu, file, false, Vec::new());
    if let Some(body) = tu.ast.function_body(function) {
        b.lower(body)?;
    }
    let built = b.finish();
    Ok(AstCfg {
        function,
        name,
        graph: built.graph,
        kernels: built.kernels,
        call_sites: built.call_sites,
        stmt_entry: built.stmt_entry,
        warnings: built.warnings,
    })
}

/// AST-CFGs of every defined function, in source order.
pub fn build_all(tu: &TranslationUnit, file: &SourceFile) -> Result<Vec<AstCfg>> {
    tu.defined_functions().map(|f| build_astcfg(tu, file, f)).collect()
}
