//! Memory access classification. Every variable reference in a function is
//! recorded as a read, write, read-write or (at call sites) unknown access in
//! host or device space. Element accesses are attributed to the whole object.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::astcfg::{AstCfg, CfgNodeKind};
use crate::error::{Diagnostic, Error, Result};
use crate::frontend::{
    BaseType, BinOp, DirectiveKind, NodeId, NodeKind, OmpDirectiveInfo, Storage, TranslationUnit, TypeInfo, UnOp,
};
use crate::source::SourceFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessKind {
    Read,
    Write,
    ReadWrite,
    Unknown,
}

impl AccessKind {
    pub fn reads(self) -> bool {
        matches!(self, AccessKind::Read | AccessKind::ReadWrite | AccessKind::Unknown)
    }

    pub fn writes(self) -> bool {
        matches!(self, AccessKind::Write | AccessKind::ReadWrite | AccessKind::Unknown)
    }
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessKind::Read => "read",
            AccessKind::Write => "write",
            AccessKind::ReadWrite => "readwrite",
            AccessKind::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    Host,
    Device,
}

impl Space {
    pub fn other(self) -> Space {
        match self {
            Space::Host => Space::Device,
            Space::Device => Space::Host,
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Host => "host",
            Space::Device => "device",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableId {
    pub name: String,
    pub decl: NodeId,
    pub storage: Storage,
    pub is_scalar: bool,
    pub element_size: u64,
    /// None for pointers, whose extent is configured externally.
    pub element_count: Option<u64>,
    pub ty: TypeInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryAccess {
    pub var: NodeId,
    pub name: String,
    pub kind: AccessKind,
    pub space: Space,
    pub cfg_node: usize,
    /// Innermost expression (or kernel directive) the access comes from.
    pub ast: NodeId,
    pub subscripts: Vec<NodeId>,
    /// Kernel use of a scalar that is passed by value (firstprivate class).
    pub by_value: bool,
    /// Call and argument position for accesses produced at call sites.
    pub call: Option<(NodeId, Option<usize>)>,
    /// Effect of a callee that offloads on its own.
    pub via_offload_callee: bool,
}

/// Variable classes of one kernel.
#[derive(Debug, Clone, Default)]
pub struct KernelVars {
    pub directive: NodeId,
    pub host_node: usize,
    pub private: BTreeSet<NodeId>,
    /// Scalars passed by value (implicitly or explicitly firstprivate).
    pub by_value: BTreeSet<NodeId>,
    /// Objects that need a device copy.
    pub mapped: BTreeSet<NodeId>,
    pub read: BTreeSet<NodeId>,
    pub written: BTreeSet<NodeId>,
}

/// Where a call is evaluated relative to the surrounding accesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallPoint {
    pub call: NodeId,
    /// Index in `FunctionAccesses::accesses` at which the call's effects apply.
    pub position: usize,
    pub cfg_node: usize,
    pub space: Space,
}

#[derive(Debug, Clone)]
pub struct FunctionAccesses {
    pub function: NodeId,
    pub accesses: Vec<MemoryAccess>,
    pub kernels: Vec<KernelVars>,
    pub calls: Vec<CallPoint>,
}

impl FunctionAccesses {
    /// `line: var kind space` lines in access order.
    pub fn report(&self, tu: &TranslationUnit, file: &SourceFile) -> String {
        let mut out = String::new();
        for a in &self.accesses {
            let line = file.line_of(tu.ast.span(a.ast).start);
            out.push_str(&format!("{line}: {} {} {}\n", a.name, a.kind, a.space));
        }
        out
    }
}

/// True exactly for the directive kinds that launch a kernel.
pub fn is_kernel_directive(d: &OmpDirectiveInfo) -> bool {
    d.kind.is_kernel()
}

/// Whether a pointer or array parameter points to `const` data.
pub fn const_param_is_readonly(tu: &TranslationUnit, param: NodeId) -> bool {
    match tu.ast.node(param).type_info.as_ref() {
        Some(t) if t.is_buffer() => t.is_const,
        // by-value parameters cannot modify caller memory
        _ => true,
    }
}

pub fn struct_size(tu: &TranslationUnit, tag: &str) -> u64 {
    tu.struct_members(tag)
        .map(|ms| ms.iter().map(|(_, t)| type_size(tu, t)).sum())
        .unwrap_or(8)
        .max(1)
}

/// Size of a whole object of type `t`, treating unknown dimensions as 1.
pub fn type_size(tu: &TranslationUnit, t: &TypeInfo) -> u64 {
    let elem = elem_size(tu, t);
    if t.pointer_depth > 0 {
        return 8 * t.const_elems().unwrap_or(1);
    }
    elem * t.const_elems().unwrap_or(1)
}

/// Size of one element of the object (what a subscript or `*` yields at the
/// innermost level).
pub fn elem_size(tu: &TranslationUnit, t: &TypeInfo) -> u64 {
    if t.pointer_depth > 1 || (t.pointer_depth == 1 && !t.dims.is_empty()) {
        return 8;
    }
    match &t.base {
        BaseType::Struct(tag) => struct_size(tu, tag),
        BaseType::Void => 1,
        _ => TypeInfo {
            pointer_depth: 0,
            ..t.clone()
        }
        .base_size()
        .unwrap_or(8),
    }
}

pub fn variable(tu: &TranslationUnit, decl: NodeId) -> VariableId {
    let (name, storage) = match tu.ast.kind(decl) {
        NodeKind::VarDecl { name, storage, .. } => (name.clone(), *storage),
        NodeKind::ParamDecl { name } => (name.clone(), Storage::Param),
        _ => (String::new(), Storage::Local),
    };
    let ty = tu
        .ast
        .node(decl)
        .type_info
        .clone()
        .unwrap_or_else(|| TypeInfo::scalar(BaseType::Int));
    let element_count = if ty.pointer_depth > 0 {
        None
    } else {
        Some(ty.const_elems().unwrap_or(1))
    };
    VariableId {
        name,
        decl,
        storage,
        is_scalar: ty.is_scalar(),
        element_size: elem_size(tu, &ty),
        element_count,
        ty,
    }
}

/// Ordered effect of evaluating an expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Access {
        var: NodeId,
        name: String,
        kind: AccessKind,
        ast: NodeId,
        subscripts: Vec<NodeId>,
        call: Option<(NodeId, Option<usize>)>,
    },
    Call {
        call: NodeId,
        callee: Option<String>,
    },
}

struct Root {
    var: NodeId,
    name: String,
    subscripts: Vec<NodeId>,
    reads: Vec<NodeId>,
}

pub struct Walker<'a> {
    tu: &'a TranslationUnit,
    file: &'a SourceFile,
    pub events: Vec<Event>,
}

impl<'a> Walker<'a> {
    pub fn new(tu: &'a TranslationUnit, file: &'a SourceFile) -> Self {
        Walker {
            tu,
            file,
            events: Vec::new(),
        }
    }

    fn fail(&self, at: NodeId, msg: String) -> Error {
        let (l, c) = self.file.line_col(self.tu.ast.span(at).start);
        Error::Analysis(Diagnostic::error(l, c, msg))
    }

    fn is_var_decl(&self, d: NodeId) -> bool {
        matches!(
            self.tu.ast.kind(d),
            NodeKind::VarDecl { .. } | NodeKind::ParamDecl { .. }
        )
    }

    fn ty(&self, e: NodeId) -> Option<&TypeInfo> {
        self.tu.ast.node(e).type_info.as_ref()
    }

    fn is_buffer_expr(&self, e: NodeId) -> bool {
        self.ty(e).is_some_and(|t| t.is_buffer())
    }

    fn root(&self, e: NodeId) -> Option<Root> {
        let a = &self.tu.ast;
        match a.kind(e) {
            NodeKind::DeclRef { name, decl: Some(d) } if self.is_var_decl(*d) => Some(Root {
                var: *d,
                name: name.clone(),
                subscripts: Vec::new(),
                reads: Vec::new(),
            }),
            NodeKind::ArraySubscript => {
                let mut r = self.root(a.child(e, 0)?)?;
                let idx = a.child(e, 1)?;
                r.subscripts.push(idx);
                r.reads.push(idx);
                Some(r)
            }
            NodeKind::MemberAccess { .. } | NodeKind::Cast => self.root(a.child(e, 0)?),
            NodeKind::UnaryOp(UnOp::Deref) => {
                let inner = a.strip_casts(a.child(e, 0)?);
                self.offset_root(inner).or_else(|| self.root(inner))
            }
            _ => None,
        }
    }

    /// `p + i` / `i + p` / `p - i` with `p` a buffer.
    fn offset_root(&self, e: NodeId) -> Option<Root> {
        let a = &self.tu.ast;
        let NodeKind::BinaryOp(op @ (BinOp::Add | BinOp::Sub)) = a.kind(e) else {
            return None;
        };
        let (l, r) = (a.child(e, 0)?, a.child(e, 1)?);
        let (base, off) = if self.is_buffer_expr(l) {
            (l, r)
        } else if *op == BinOp::Add && self.is_buffer_expr(r) {
            (r, l)
        } else {
            return None;
        };
        let mut root = self.root(a.strip_casts(base))?;
        root.subscripts.push(off);
        root.reads.push(off);
        Some(root)
    }

    fn emit(&mut self, root: Root, kind: AccessKind, ast: NodeId, call: Option<(NodeId, Option<usize>)>) -> Result<()> {
        for r in &root.reads {
            self.expr(*r)?;
        }
        self.events.push(Event::Access {
            var: root.var,
            name: root.name,
            kind,
            ast,
            subscripts: root.subscripts,
            call,
        });
        Ok(())
    }

    fn lvalue(&mut self, e: NodeId, kind: AccessKind) -> Result<()> {
        match self.root(e) {
            Some(r) => self.emit(r, kind, e, None),
            None => match self.tu.ast.kind(e) {
                // unresolved name: bound externally, carries no memory
                NodeKind::DeclRef { decl: None, .. } => Ok(()),
                _ => Err(self.fail(e, "unsupported assignment target".into())),
            },
        }
    }

    /// Pointer variables may only be bound to fresh allocations or constants.
    fn check_pointer_binding(&self, target: NodeId, value: NodeId) -> Result<()> {
        let a = &self.tu.ast;
        let ok = match a.kind(a.strip_casts(value)) {
            NodeKind::Call | NodeKind::IntLiteral(_) | NodeKind::StringLiteral | NodeKind::InitList => true,
            _ => !self.is_buffer_expr(value),
        };
        if ok {
            return Ok(());
        }
        let name = a.name(target).unwrap_or("pointer").to_string();
        Err(self.fail(
            value,
            format!("pointer {name} is rebound to another object; alias analysis cannot disambiguate it"),
        ))
    }

    pub fn expr(&mut self, e: NodeId) -> Result<()> {
        let tu = self.tu;
        let a = &tu.ast;
        match a.kind(e) {
            NodeKind::IntLiteral(_) | NodeKind::FloatLiteral(_) | NodeKind::StringLiteral | NodeKind::SizeOf => Ok(()),
            NodeKind::DeclRef { .. } | NodeKind::ArraySubscript | NodeKind::MemberAccess { .. } => match self.root(e) {
                Some(r) => self.emit(r, AccessKind::Read, e, None),
                None => {
                    for c in a.children(e).collect::<Vec<_>>() {
                        self.expr(c)?;
                    }
                    Ok(())
                }
            },
            NodeKind::UnaryOp(op) => {
                let inner = a.child(e, 0).expect("operand");
                match op {
                    UnOp::AddrOf => Err(self.fail(e, "address-of is only supported as a call argument".into())),
                    UnOp::Deref => match self.root(e) {
                        Some(r) => self.emit(r, AccessKind::Read, e, None),
                        None => self.expr(inner),
                    },
                    op if op.is_increment() => {
                        if self.is_buffer_expr(inner) {
                            let name = a.name(inner).unwrap_or("pointer").to_string();
                            return Err(self.fail(
                                e,
                                format!(
                                    "pointer {name} is rebound by arithmetic; alias analysis cannot disambiguate it"
                                ),
                            ));
                        }
                        self.lvalue(inner, AccessKind::ReadWrite)
                    }
                    _ => self.expr(inner),
                }
            }
            NodeKind::AssignOp(op) => {
                let lhs = a.child(e, 0).expect("lhs");
                let rhs = a.child(e, 1).expect("rhs");
                if self.is_buffer_expr(lhs) && matches!(a.kind(lhs), NodeKind::DeclRef { .. }) {
                    if op.is_some() {
                        let name = a.name(lhs).unwrap_or("pointer").to_string();
                        return Err(self.fail(
                            e,
                            format!("pointer {name} is rebound by arithmetic; alias analysis cannot disambiguate it"),
                        ));
                    }
                    self.check_pointer_binding(lhs, rhs)?;
                }
                self.expr(rhs)?;
                let kind = if op.is_some() {
                    AccessKind::ReadWrite
                } else {
                    AccessKind::Write
                };
                self.lvalue(lhs, kind)
            }
            NodeKind::Call => self.call(e),
            NodeKind::BinaryOp(_) | NodeKind::Conditional | NodeKind::Cast | NodeKind::InitList => {
                for c in a.children(e).collect::<Vec<_>>() {
                    self.expr(c)?;
                }
                Ok(())
            }
            other => Err(Error::Internal(format!("unexpected expression kind {other:?}"))),
        }
    }

    fn call(&mut self, e: NodeId) -> Result<()> {
        let tu = self.tu;
        let a = &tu.ast;
        let callee_expr = a.strip_casts(a.child(e, 0).expect("callee"));
        let callee = match a.kind(callee_expr) {
            NodeKind::DeclRef { name, decl: None } => Some(name.clone()),
            _ => return Err(self.fail(e, "call through a function pointer is not supported".into())),
        };
        let args: Vec<NodeId> = a.node(e).children[1..].iter().filter_map(|c| *c).collect();
        for (i, &arg) in args.iter().enumerate() {
            match self.pointer_root(arg) {
                Some(r) => self.emit(r, AccessKind::Unknown, arg, Some((e, Some(i))))?,
                None => self.expr(arg)?,
            }
        }
        self.events.push(Event::Call { call: e, callee });
        Ok(())
    }

    /// Object whose address an argument passes, if it is pointer-valued.
    fn pointer_root(&self, arg: NodeId) -> Option<Root> {
        let a = &self.tu.ast;
        let e = a.strip_casts(arg);
        match a.kind(e) {
            NodeKind::UnaryOp(UnOp::AddrOf) => self.root(a.child(e, 0)?),
            NodeKind::BinaryOp(BinOp::Add | BinOp::Sub) => self.offset_root(e),
            NodeKind::DeclRef { .. } | NodeKind::ArraySubscript | NodeKind::MemberAccess { .. }
                if self.is_buffer_expr(e) =>
            {
                self.root(e)
            }
            _ => None,
        }
    }

    /// Effects of a declaration statement: initializers, then the write.
    pub fn decl_stmt(&mut self, s: NodeId) -> Result<()> {
        let tu = self.tu;
        let a = &tu.ast;
        for d in a.children(s).collect::<Vec<_>>() {
            if let Some(init) = a.child(d, 0) {
                if self.ty(d).is_some_and(|t| t.is_pointer()) {
                    self.check_pointer_binding(d, init)?;
                }
                self.expr(init)?;
                let name = a.name(d).unwrap_or_default().to_string();
                self.events.push(Event::Access {
                    var: d,
                    name,
                    kind: AccessKind::Write,
                    ast: d,
                    subscripts: Vec::new(),
                    call: None,
                });
            }
        }
        Ok(())
    }

    /// Effects of whatever a CFG node evaluates.
    pub fn node_ast(&mut self, ast: NodeId) -> Result<()> {
        match self.tu.ast.kind(ast) {
            NodeKind::DeclStmt => self.decl_stmt(ast),
            NodeKind::OmpDirective(_) => Ok(()),
            _ => self.expr(ast),
        }
    }
}

fn events_to_accesses(
    events: Vec<Event>,
    space: Space,
    cfg_node: usize,
    out: &mut Vec<MemoryAccess>,
    calls: &mut Vec<CallPoint>,
) {
    for ev in events {
        if let Event::Call { call, .. } = ev {
            calls.push(CallPoint {
                call,
                position: out.len(),
                cfg_node,
                space,
            });
            continue;
        }
        if let Event::Access {
            var,
            name,
            kind,
            ast,
            subscripts,
            call,
        } = ev
        {
            out.push(MemoryAccess {
                var,
                name,
                kind,
                space,
                cfg_node,
                ast,
                subscripts,
                by_value: false,
                call,
                via_offload_callee: false,
            });
        }
    }
}

/// Loop variables privatized by a loop-associated kernel directive.
fn associated_loop_vars(tu: &TranslationUnit, d: NodeId) -> BTreeSet<NodeId> {
    let a = &tu.ast;
    let mut out = BTreeSet::new();
    let info = a.omp(d).expect("directive");
    let loop_assoc = matches!(
        info.kind,
        DirectiveKind::TargetParallelFor
            | DirectiveKind::TargetParallelForSimd
            | DirectiveKind::TargetParallelLoop
            | DirectiveKind::TargetSimd
            | DirectiveKind::TargetTeamsDistribute
            | DirectiveKind::TargetTeamsDistributeParallelFor
            | DirectiveKind::TargetTeamsDistributeParallelForSimd
            | DirectiveKind::TargetTeamsDistributeSimd
            | DirectiveKind::TargetTeamsLoop
    );
    if !loop_assoc {
        return out;
    }
    let mut cur = a.child(d, 0);
    for _ in 0..info.collapse().max(1) {
        let Some(mut s) = cur else { break };
        while matches!(a.kind(s), NodeKind::CompoundStmt) && a.children(s).count() == 1 {
            s = a.children(s).next().expect("child");
        }
        if !matches!(a.kind(s), NodeKind::ForStmt) {
            break;
        }
        if let Some(v) = crate::bounds::indexing_var(tu, s) {
            out.insert(v);
        }
        cur = a.child(s, 3);
    }
    out
}

fn clause_decls(tu: &TranslationUnit, d: NodeId, names: &[String]) -> BTreeSet<NodeId> {
    let a = &tu.ast;
    let scope = a.descendants(d);
    let mut out = BTreeSet::new();
    for n in scope {
        if let NodeKind::DeclRef { name, decl: Some(decl) } = a.kind(n) {
            if names.contains(name) {
                out.insert(*decl);
            }
        }
    }
    out
}

fn kernel_accesses(
    tu: &TranslationUnit,
    file: &SourceFile,
    d: NodeId,
    host_node: usize,
    out: &mut Vec<MemoryAccess>,
    calls: &mut Vec<CallPoint>,
) -> Result<KernelVars> {
    let a = &tu.ast;
    let info = a.omp(d).expect("directive").clone();
    let mut kv = KernelVars {
        directive: d,
        host_node,
        ..Default::default()
    };
    let mut w = Walker::new(tu, file);
    for n in a.descendants(d) {
        if n == d {
            continue;
        }
        match a.kind(n) {
            NodeKind::VarDecl { .. } => {
                kv.private.insert(n);
            }
            NodeKind::DeclStmt => w.decl_stmt(n)?,
            NodeKind::ExprStmt | NodeKind::ReturnStmt => {
                if let Some(e) = a.child(n, 0) {
                    w.expr(e)?;
                }
            }
            NodeKind::IfStmt | NodeKind::WhileStmt | NodeKind::SwitchStmt => w.expr(a.child(n, 0).expect("cond"))?,
            NodeKind::DoStmt => w.expr(a.child(n, 1).expect("cond"))?,
            NodeKind::ForStmt => {
                for slot in 0..3 {
                    if let Some(c) = a.child(n, slot) {
                        if !matches!(a.kind(c), NodeKind::DeclStmt) {
                            w.expr(c)?;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    kv.private.extend(associated_loop_vars(tu, d));
    let privates: Vec<String> = info.vars_in("private");
    kv.private.extend(clause_decls(tu, d, &privates));
    let mut mapped_names: Vec<String> = info.vars_in("map");
    mapped_names.extend(info.vars_in("reduction"));
    let forced_mapped = clause_decls(tu, d, &mapped_names);

    // reads first, then writes, each in first-seen order
    let mut order: Vec<NodeId> = Vec::new();
    let mut names: BTreeMap<NodeId, String> = BTreeMap::new();
    let mut unknown: Vec<(NodeId, NodeId, Option<(NodeId, Option<usize>)>, Vec<NodeId>)> = Vec::new();
    let mut subs: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for ev in &w.events {
        let Event::Access {
            var,
            name,
            kind,
            ast,
            subscripts,
            call,
        } = ev
        else {
            continue;
        };
        if kv.private.contains(var) {
            continue;
        }
        if !names.contains_key(var) {
            order.push(*var);
            names.insert(*var, name.clone());
        }
        subs.entry(*var).or_default().extend(subscripts.iter().copied());
        match kind {
            AccessKind::Unknown => unknown.push((*var, *ast, *call, subscripts.clone())),
            k => {
                if k.reads() {
                    kv.read.insert(*var);
                }
                if k.writes() {
                    kv.written.insert(*var);
                }
            }
        }
    }
    for &v in &order {
        let is_scalar = tu.ast.node(v).type_info.as_ref().is_some_and(|t| t.is_scalar());
        let by_address = unknown.iter().any(|u| u.0 == v);
        if is_scalar && !forced_mapped.contains(&v) && !by_address {
            kv.by_value.insert(v);
        } else {
            kv.mapped.insert(v);
        }
    }
    let mk = |var: NodeId, kind: AccessKind, by_value: bool| MemoryAccess {
        var,
        name: names[&var].clone(),
        kind,
        space: Space::Device,
        cfg_node: host_node,
        ast: d,
        subscripts: subs.get(&var).cloned().unwrap_or_default(),
        by_value,
        call: None,
        via_offload_callee: false,
    };
    for &v in &order {
        if kv.read.contains(&v) {
            out.push(mk(v, AccessKind::Read, kv.by_value.contains(&v)));
        }
    }
    for &v in &order {
        // by-value writes land in a private copy
        if kv.written.contains(&v) && !kv.by_value.contains(&v) {
            out.push(mk(v, AccessKind::Write, false));
        }
    }
    for (var, ast, call, subscripts) in unknown {
        let by_value = kv.by_value.contains(&var);
        out.push(MemoryAccess {
            ast,
            call,
            subscripts,
            ..mk(var, AccessKind::Unknown, by_value)
        });
    }
    for ev in &w.events {
        if let Event::Call { call, .. } = ev {
            calls.push(CallPoint {
                call: *call,
                position: out.len(),
                cfg_node: host_node,
                space: Space::Device,
            });
        }
    }
    Ok(kv)
}

/// Classify every access in a function.
pub fn classify_accesses(tu: &TranslationUnit, file: &SourceFile, cfg: &AstCfg) -> Result<FunctionAccesses> {
    let mut accesses = Vec::new();
    let mut kernels = Vec::new();
    let mut calls = Vec::new();
    for n in &cfg.graph.nodes {
        let Some(ast) = n.ast else { continue };
        if n.kind == CfgNodeKind::Stmt && tu.ast.is_kernel(ast) {
            kernels.push(kernel_accesses(tu, file, ast, n.id, &mut accesses, &mut calls)?);
            continue;
        }
        let mut w = Walker::new(tu, file);
        w.node_ast(ast)?;
        events_to_accesses(w.events, Space::Host, n.id, &mut accesses, &mut calls);
    }
    Ok(FunctionAccesses {
        function: cfg.function,
        accesses,
        kernels,
        calls,
    })
}
