//! Arena-allocated syntax tree for the C subset.

use std::fmt;

use super::omp::{DirectiveKind, OmpDirectiveInfo};
use crate::source::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BaseType {
    Void,
    Char,
    Short,
    Int,
    Long,
    Float,
    Double,
    Struct(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dim {
    Const(u64),
    /// Dimension given by an expression that did not fold (e.g. an unbound name).
    Expr(NodeId),
    Unsized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeInfo {
    pub base: BaseType,
    pub unsigned: bool,
    /// `const` on the base type (the pointee, for pointers).
    pub is_const: bool,
    pub pointer_depth: u32,
    pub dims: Vec<Dim>,
}

impl TypeInfo {
    pub fn scalar(base: BaseType) -> Self {
        TypeInfo {
            base,
            unsigned: false,
            is_const: false,
            pointer_depth: 0,
            dims: Vec::new(),
        }
    }

    pub fn is_pointer(&self) -> bool {
        self.pointer_depth > 0
    }

    pub fn is_array(&self) -> bool {
        !self.dims.is_empty()
    }

    pub fn is_struct(&self) -> bool {
        matches!(self.base, BaseType::Struct(_)) && self.pointer_depth == 0
    }

    /// Non-pointer, non-array, non-struct value.
    pub fn is_scalar(&self) -> bool {
        self.pointer_depth == 0 && self.dims.is_empty() && !matches!(self.base, BaseType::Struct(_))
    }

    /// Size in bytes of one base element (pointer-sized when this is a pointer).
    /// Struct sizes are resolved by the caller.
    pub fn base_size(&self) -> Option<u64> {
        if self.pointer_depth > 0 {
            return Some(8);
        }
        match self.base {
            BaseType::Void => None,
            BaseType::Char => Some(1),
            BaseType::Short => Some(2),
            BaseType::Int | BaseType::Float => Some(4),
            BaseType::Long | BaseType::Double => Some(8),
            BaseType::Struct(_) => None,
        }
    }

    /// Product of the constant array dimensions, if all are constant.
    pub fn const_elems(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, d| match d {
            Dim::Const(n) => acc.checked_mul(*n),
            _ => None,
        })
    }

    /// Value refers to a buffer (array or pointer) rather than being one.
    pub fn is_buffer(&self) -> bool {
        self.pointer_depth > 0 || !self.dims.is_empty()
    }
}

impl fmt::Display for TypeInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_const {
            f.write_str("const ")?;
        }
        if self.unsigned {
            f.write_str("unsigned ")?;
        }
        match &self.base {
            BaseType::Void => f.write_str("void")?,
            BaseType::Char => f.write_str("char")?,
            BaseType::Short => f.write_str("short")?,
            BaseType::Int => f.write_str("int")?,
            BaseType::Long => f.write_str("long")?,
            BaseType::Float => f.write_str("float")?,
            BaseType::Double => f.write_str("double")?,
            BaseType::Struct(t) => write!(f, "struct {t}")?,
        }
        for _ in 0..self.pointer_depth {
            f.write_str(" *")?;
        }
        for d in &self.dims {
            match d {
                Dim::Const(n) => write!(f, "[{n}]")?,
                Dim::Expr(_) => f.write_str("[?]")?,
                Dim::Unsized => f.write_str("[]")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Shl,
    Shr,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
    BitAnd,
    BitOr,
    BitXor,
    LogAnd,
    LogOr,
    Comma,
}

impl BinOp {
    pub fn from_punct(p: &str) -> Option<BinOp> {
        use BinOp::*;
        Some(match p {
            "+" => Add,
            "-" => Sub,
            "*" => Mul,
            "/" => Div,
            "%" => Rem,
            "<<" => Shl,
            ">>" => Shr,
            "<" => Lt,
            ">" => Gt,
            "<=" => Le,
            ">=" => Ge,
            "==" => Eq,
            "!=" => Ne,
            "&" => BitAnd,
            "|" => BitOr,
            "^" => BitXor,
            "&&" => LogAnd,
            "||" => LogOr,
            "," => Comma,
            _ => return None,
        })
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Plus,
    Not,
    BitNot,
    Deref,
    AddrOf,
    PreInc,
    PreDec,
    PostInc,
    PostDec,
}

impl UnOp {
    pub fn is_increment(self) -> bool {
        matches!(self, UnOp::PreInc | UnOp::PreDec | UnOp::PostInc | UnOp::PostDec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Local,
    Param,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    TranslationUnit,
    /// children: params..., body (None for a prototype)
    FunctionDef {
        name: String,
        is_static: bool,
    },
    ParamDecl {
        name: String,
    },
    /// children: [init]
    VarDecl {
        name: String,
        storage: Storage,
        is_static: bool,
    },
    StructDecl {
        tag: String,
        members: Vec<(String, TypeInfo)>,
    },
    CompoundStmt,
    ExprStmt,
    /// children: VarDecl...
    DeclStmt,
    /// children: [cond, then, else]
    IfStmt,
    /// children: [cond, body]
    SwitchStmt,
    /// children: [value expr]
    CaseLabel,
    DefaultLabel,
    /// children: [init, cond, inc, body]; any of the first three may be empty
    ForStmt,
    /// children: [cond, body]
    WhileStmt,
    /// children: [body, cond]
    DoStmt,
    ReturnStmt,
    BreakStmt,
    ContinueStmt,
    NullStmt,
    BinaryOp(BinOp),
    UnaryOp(UnOp),
    /// `=` when op is None, compound assignment otherwise
    AssignOp(Option<BinOp>),
    /// children: [base, index]
    ArraySubscript,
    /// children: [base]
    MemberAccess {
        field: String,
        arrow: bool,
    },
    /// children: [callee, args...]
    Call,
    /// `decl` is None for names that resolve to nothing in scope
    /// (functions, unbound globals).
    DeclRef {
        name: String,
        decl: Option<NodeId>,
    },
    IntLiteral(i64),
    FloatLiteral(f64),
    StringLiteral,
    /// children: [cond, then, else]
    Conditional,
    Cast,
    SizeOf,
    InitList,
    /// children: [associated statement] (empty for standalone directives)
    OmpDirective(OmpDirectiveInfo),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub children: Vec<Option<NodeId>>,
    pub span: Span,
    pub type_info: Option<TypeInfo>,
    pub parent: Option<NodeId>,
    /// First token of the node came from a macro expansion.
    pub from_macro: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Ast {
    pub nodes: Vec<Node>,
}

impl Ast {
    pub fn add(&mut self, kind: NodeKind, children: Vec<Option<NodeId>>, span: Span) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            kind,
            children,
            span,
            type_info: None,
            parent: None,
            from_macro: false,
        });
        id
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.index()]
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.node(id).kind
    }

    pub fn span(&self, id: NodeId) -> Span {
        self.node(id).span
    }

    pub fn child(&self, id: NodeId, slot: usize) -> Option<NodeId> {
        self.node(id).children.get(slot).copied().flatten()
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.node(id).children.iter().filter_map(|c| *c)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).parent
    }

    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.parent(id), move |&p| self.parent(p))
    }

    /// Populate parent links; called once after parsing.
    pub fn link_parents(&mut self) {
        for i in 0..self.nodes.len() {
            let kids: Vec<NodeId> = self.nodes[i].children.iter().filter_map(|c| *c).collect();
            for k in kids {
                self.nodes[k.index()].parent = Some(NodeId(i as u32));
            }
        }
    }

    /// Pre-order walk of the subtree rooted at `id`.
    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            let kids: Vec<_> = self.children(n).collect();
            stack.extend(kids.into_iter().rev());
        }
        out
    }

    pub fn is_ancestor_or_self(&self, anc: NodeId, id: NodeId) -> bool {
        anc == id || self.ancestors(id).any(|a| a == anc)
    }

    pub fn omp(&self, id: NodeId) -> Option<&OmpDirectiveInfo> {
        match self.kind(id) {
            NodeKind::OmpDirective(info) => Some(info),
            _ => None,
        }
    }

    pub fn is_kernel(&self, id: NodeId) -> bool {
        self.omp(id).is_some_and(|d| d.kind.is_kernel())
    }

    pub fn is_loop(&self, id: NodeId) -> bool {
        matches!(
            self.kind(id),
            NodeKind::ForStmt | NodeKind::WhileStmt | NodeKind::DoStmt
        )
    }

    pub fn is_statement(&self, id: NodeId) -> bool {
        use NodeKind::*;
        matches!(
            self.kind(id),
            CompoundStmt
                | ExprStmt
                | DeclStmt
                | IfStmt
                | SwitchStmt
                | CaseLabel
                | DefaultLabel
                | ForStmt
                | WhileStmt
                | DoStmt
                | ReturnStmt
                | BreakStmt
                | ContinueStmt
                | NullStmt
                | OmpDirective(_)
        )
    }

    /// Name of a `FunctionDef`, `VarDecl`, `ParamDecl` or `DeclRef`.
    pub fn name(&self, id: NodeId) -> Option<&str> {
        match self.kind(id) {
            NodeKind::FunctionDef { name, .. }
            | NodeKind::VarDecl { name, .. }
            | NodeKind::ParamDecl { name }
            | NodeKind::DeclRef { name, .. } => Some(name),
            _ => None,
        }
    }

    pub fn function_body(&self, f: NodeId) -> Option<NodeId> {
        match self.kind(f) {
            NodeKind::FunctionDef { .. } => self.node(f).children.last().copied().flatten(),
            _ => None,
        }
    }

    pub fn function_params(&self, f: NodeId) -> Vec<NodeId> {
        let n = self.node(f);
        n.children[..n.children.len().saturating_sub(1)]
            .iter()
            .filter_map(|c| *c)
            .collect()
    }

    /// The innermost statement enclosing (or equal to) `id`.
    pub fn enclosing_statement(&self, id: NodeId) -> NodeId {
        if self.is_statement(id) {
            return id;
        }
        self.ancestors(id).find(|&a| self.is_statement(a)).unwrap_or(id)
    }

    /// The directive kind of the kernel enclosing `id`, if any.
    pub fn enclosing_kernel(&self, id: NodeId) -> Option<NodeId> {
        std::iter::once(id)
            .chain(self.ancestors(id))
            .find(|&a| self.is_kernel(a))
    }

    pub fn directive_kind(&self, id: NodeId) -> Option<DirectiveKind> {
        self.omp(id).map(|d| d.kind)
    }

    /// The function definition enclosing `id`.
    pub fn enclosing_function(&self, id: NodeId) -> Option<NodeId> {
        self.ancestors(id)
            .find(|&a| matches!(self.kind(a), NodeKind::FunctionDef { .. }))
    }

    /// Fold an integer constant expression. Names are resolved through `env`.
    pub fn eval_const(&self, id: NodeId, env: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
        let c = |slot| self.child(id, slot).and_then(|k| self.eval_const(k, env));
        match self.kind(id) {
            NodeKind::IntLiteral(v) => Some(*v),
            NodeKind::FloatLiteral(_) => None,
            NodeKind::DeclRef { name, .. } => env(name),
            NodeKind::Cast => c(0),
            NodeKind::SizeOf => {
                let t = self.node(id).type_info.as_ref()?;
                let n = t.const_elems()?;
                Some((t.base_size()? * n) as i64)
            }
            NodeKind::UnaryOp(op) => {
                let v = c(0)?;
                match op {
                    UnOp::Neg => v.checked_neg(),
                    UnOp::Plus => Some(v),
                    UnOp::Not => Some((v == 0) as i64),
                    UnOp::BitNot => Some(!v),
                    _ => None,
                }
            }
            NodeKind::Conditional => {
                if c(0)? != 0 {
                    c(1)
                } else {
                    c(2)
                }
            }
            NodeKind::BinaryOp(op) => {
                let (a, b) = (c(0)?, c(1)?);
                use BinOp::*;
                match op {
                    Add => a.checked_add(b),
                    Sub => a.checked_sub(b),
                    Mul => a.checked_mul(b),
                    Div => a.checked_div(b),
                    Rem => a.checked_rem(b),
                    Shl => u32::try_from(b).ok().and_then(|b| a.checked_shl(b)),
                    Shr => u32::try_from(b).ok().and_then(|b| a.checked_shr(b)),
                    Lt => Some((a < b) as i64),
                    Gt => Some((a > b) as i64),
                    Le => Some((a <= b) as i64),
                    Ge => Some((a >= b) as i64),
                    Eq => Some((a == b) as i64),
                    Ne => Some((a != b) as i64),
                    BitAnd => Some(a & b),
                    BitOr => Some(a | b),
                    BitXor => Some(a ^ b),
                    LogAnd => Some((a != 0 && b != 0) as i64),
                    LogOr => Some((a != 0 || b != 0) as i64),
                    Comma => Some(b),
                }
            }
            _ => None,
        }
    }

    /// Strip casts to reach the underlying expression.
    pub fn strip_casts(&self, mut id: NodeId) -> NodeId {
        while matches!(self.kind(id), NodeKind::Cast) {
            match self.child(id, 0) {
                Some(c) => id = c,
                None => break,
            }
        }
        id
    }
}

/// Parsed translation unit plus the macro table used to produce it.
#[derive(Debug, Clone)]
pub struct TranslationUnit {
    pub ast: Ast,
    pub root: NodeId,
    pub defines: std::collections::BTreeMap<String, i64>,
    pub warnings: Vec<crate::error::Diagnostic>,
}

impl TranslationUnit {
    pub fn functions(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ast
            .children(self.root)
            .filter(|&c| matches!(self.ast.kind(c), NodeKind::FunctionDef { .. }))
    }

    pub fn defined_functions(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.functions().filter(|&f| self.ast.function_body(f).is_some())
    }

    pub fn function_named(&self, name: &str) -> Option<NodeId> {
        let mut found = None;
        for f in self.functions() {
            if self.ast.name(f) == Some(name) {
                if self.ast.function_body(f).is_some() {
                    return Some(f);
                }
                found.get_or_insert(f);
            }
        }
        found
    }

    pub fn globals(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for c in self.ast.children(self.root) {
            if matches!(self.ast.kind(c), NodeKind::DeclStmt) {
                out.extend(self.ast.children(c));
            }
        }
        out
    }

    pub fn struct_members(&self, tag: &str) -> Option<&[(String, TypeInfo)]> {
        self.ast.children(self.root).find_map(|c| match self.ast.kind(c) {
            NodeKind::StructDecl { tag: t, members } if t == tag => Some(members.as_slice()),
            _ => None,
        })
    }
}
