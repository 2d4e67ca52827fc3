//! Recursive-descent parser producing the arena AST. Names are resolved
//! against lexical scopes while parsing.

use std::collections::HashMap;

use super::ast::{Ast, BaseType, BinOp, Dim, NodeId, NodeKind, Storage, TypeInfo, UnOp};
use super::lexer::{Token, TokenKind};
use super::omp::{parse_omp_pragma, DirectiveKind};
use crate::error::{Diagnostic, Error, Result};
use crate::source::{SourceFile, Span};

const UNSUPPORTED_KEYWORDS: &[&str] = &["goto", "typedef", "union", "enum"];

const TYPE_KEYWORDS: &[&str] = &[
    "int", "float", "double", "char", "void", "long", "short", "unsigned", "signed", "const", "static", "extern",
    "struct", "volatile", "register", "inline", "restrict",
];

/// Non-target directives without an associated statement.
const STANDALONE_OTHER: &[&str] = &[
    "barrier",
    "taskwait",
    "taskyield",
    "flush",
    "declare",
    "end",
    "threadprivate",
    "requires",
];

struct Specifiers {
    ty: TypeInfo,
    is_static: bool,
}

pub struct Parser<'a> {
    file: &'a SourceFile,
    toks: Vec<Token>,
    pos: usize,
    pub ast: Ast,
    scopes: Vec<HashMap<String, NodeId>>,
    structs: HashMap<String, Vec<(String, TypeInfo)>>,
    fn_ret: HashMap<String, TypeInfo>,
    /// Struct definitions seen inside declaration specifiers, emitted at file scope.
    pending_structs: Vec<NodeId>,
    /// Folded values of object-like macros; used for array dimensions.
    consts: std::collections::BTreeMap<String, i64>,
}

impl<'a> Parser<'a> {
    pub fn new(file: &'a SourceFile, toks: Vec<Token>) -> Self {
        Parser {
            file,
            toks,
            pos: 0,
            ast: Ast::default(),
            scopes: vec![HashMap::new()],
            structs: HashMap::new(),
            fn_ret: HashMap::new(),
            pending_structs: Vec::new(),
            consts: Default::default(),
        }
    }

    pub fn with_consts(mut self, consts: std::collections::BTreeMap<String, i64>) -> Self {
        self.consts = consts;
        self
    }

    // ---- token helpers ----

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Token> {
        self.toks.get(self.pos + k)
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn at_keyword(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(k))
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        self.pos += 1;
        t
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn diag_at(&self, offset: usize, msg: impl Into<String>) -> Diagnostic {
        let (l, c) = self.file.line_col(offset.min(self.file.text.len().saturating_sub(1)));
        Diagnostic::error(l, c, msg)
    }

    fn here(&self) -> usize {
        match self.peek() {
            Some(t) => t.span.start,
            None => self.file.text.len(),
        }
    }

    fn syntax(&self, msg: impl Into<String>) -> Error {
        Error::Syntax(self.diag_at(self.here(), msg))
    }

    fn expect_punct(&mut self, p: &str) -> Result<Token> {
        if self.at_punct(p) {
            Ok(self.bump())
        } else {
            let found = self
                .peek()
                .map(|t| t.lexeme.clone())
                .unwrap_or_else(|| "end of file".into());
            Err(self.syntax(format!("expected '{p}', found '{found}'")))
        }
    }

    fn expect_ident(&mut self) -> Result<Token> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => Ok(self.bump()),
            Some(t) => {
                let msg = format!("expected identifier, found '{}'", t.lexeme);
                Err(self.syntax(msg))
            }
            None => Err(self.syntax("expected identifier, found end of file")),
        }
    }

    fn prev_end(&self) -> usize {
        self.toks[self.pos.saturating_sub(1)].span.end
    }

    fn check_unsupported(&self) -> Result<()> {
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Keyword && UNSUPPORTED_KEYWORDS.contains(&t.lexeme.as_str()) {
                return Err(Error::Unsupported(
                    self.diag_at(t.span.start, format!("'{}' is not supported", t.lexeme)),
                ));
            }
        }
        Ok(())
    }

    fn node(&mut self, kind: NodeKind, children: Vec<Option<NodeId>>, start: usize) -> NodeId {
        let end = self.prev_end().max(start);
        let i = self.toks.partition_point(|t| t.span.start < start);
        let from_macro = self.toks.get(i).is_some_and(|t| t.span.start == start && t.expanded);
        let id = self.ast.add(kind, children, Span::new(start, end));
        self.ast.node_mut(id).from_macro = from_macro;
        id
    }

    fn lookup(&self, name: &str) -> Option<NodeId> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn declare(&mut self, name: &str, id: NodeId) {
        self.scopes.last_mut().expect("scope").insert(name.to_string(), id);
    }

    fn starts_type(&self) -> bool {
        self.peek()
            .is_some_and(|t| t.kind == TokenKind::Keyword && TYPE_KEYWORDS.contains(&t.lexeme.as_str()))
    }

    // ---- translation unit ----

    pub fn parse_translation_unit(&mut self) -> Result<NodeId> {
        let mut items = Vec::new();
        while self.peek().is_some() {
            self.check_unsupported()?;
            if self.peek().is_some_and(|t| t.kind == TokenKind::PragmaLine) {
                let t = self.bump();
                let info = parse_omp_pragma(&t.lexeme, t.span, t.line)?;
                items.push(Some(self.ast.add(NodeKind::OmpDirective(info), vec![], t.span)));
                continue;
            }
            if self.eat_punct(";") {
                continue;
            }
            items.extend(self.external_declaration()?.into_iter().map(Some));
        }
        let end = self.file.text.len();
        let root = self.ast.add(NodeKind::TranslationUnit, items, Span::new(0, end));
        self.ast.link_parents();
        Ok(root)
    }

    fn external_declaration(&mut self) -> Result<Vec<NodeId>> {
        let start = self.here();
        let spec = self.specifiers()?;
        if self.eat_punct(";") {
            // bare `struct T {...};`
            return Ok(self.take_pending_struct(start));
        }
        let mut out = self.take_pending_struct(start);
        let (name_tok, ty) = self.declarator(&spec.ty, false)?;
        if self.at_punct("(") {
            out.push(self.function(start, spec, name_tok, ty)?);
            return Ok(out);
        }
        out.push(self.finish_declaration(start, &spec, name_tok, ty, Storage::Global)?);
        Ok(out)
    }

    fn take_pending_struct(&mut self, _start: usize) -> Vec<NodeId> {
        std::mem::take(&mut self.pending_structs)
    }

    fn function(&mut self, start: usize, spec: Specifiers, name_tok: Token, ret: TypeInfo) -> Result<NodeId> {
        self.expect_punct("(")?;
        self.scopes.push(HashMap::new());
        let mut params = Vec::new();
        let void_only = self.at_keyword("void") && self.peek_at(1).is_some_and(|t| t.is_punct(")"));
        if void_only {
            self.bump();
        }
        while !self.at_punct(")") {
            if self.eat_punct("...") {
                continue;
            }
            let pstart = self.here();
            let pspec = self.specifiers()?;
            let (ptok, mut pty) = self.declarator(&pspec.ty, true)?;
            if !pty.dims.is_empty() {
                pty.dims.remove(0);
                pty.pointer_depth += 1;
            }
            let pname = ptok.lexeme.clone();
            let p = self.node(NodeKind::ParamDecl { name: pname.clone() }, vec![], pstart);
            self.ast.node_mut(p).type_info = Some(pty);
            if !pname.is_empty() {
                self.declare(&pname, p);
            }
            params.push(Some(p));
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        let name = name_tok.lexeme.clone();
        // registered before the body so recursive calls see the return type
        self.fn_ret.insert(name.clone(), ret.clone());
        let body = if self.at_punct("{") {
            Some(self.compound()?)
        } else {
            self.expect_punct(";")?;
            None
        };
        self.scopes.pop();
        let mut children = params;
        children.push(body);
        let f = self.node(
            NodeKind::FunctionDef {
                name,
                is_static: spec.is_static,
            },
            children,
            start,
        );
        self.ast.node_mut(f).type_info = Some(ret);
        Ok(f)
    }

    // ---- declarations ----

    fn specifiers(&mut self) -> Result<Specifiers> {
        let start = self.here();
        let mut base: Option<BaseType> = None;
        let mut unsigned = false;
        let mut is_const = false;
        let mut is_static = false;
        let mut saw_any = false;
        loop {
            self.check_unsupported()?;
            let Some(t) = self.peek() else { break };
            if t.kind != TokenKind::Keyword {
                break;
            }
            match t.lexeme.as_str() {
                "static" => is_static = true,
                "extern" | "register" | "inline" | "volatile" | "restrict" | "signed" => {}
                "const" => is_const = true,
                "unsigned" => unsigned = true,
                "void" => base = Some(BaseType::Void),
                "char" => base = Some(BaseType::Char),
                "short" => base = Some(BaseType::Short),
                "int" => {
                    if base.is_none() {
                        base = Some(BaseType::Int)
                    }
                }
                "long" => {
                    if base != Some(BaseType::Double) {
                        base = Some(BaseType::Long);
                    }
                }
                "float" => base = Some(BaseType::Float),
                "double" => base = Some(BaseType::Double),
                "struct" => {
                    self.bump();
                    let tag = self.expect_ident()?.lexeme;
                    if self.at_punct("{") {
                        self.struct_body(start, &tag)?;
                    } else if !self.structs.contains_key(&tag) {
                        // forward reference; size stays unknown until defined
                        self.structs.entry(tag.clone()).or_default();
                    }
                    base = Some(BaseType::Struct(tag));
                    saw_any = true;
                    continue;
                }
                _ => break,
            }
            saw_any = true;
            self.bump();
        }
        if !saw_any {
            let found = self
                .peek()
                .map(|t| t.lexeme.clone())
                .unwrap_or_else(|| "end of file".into());
            return Err(self.syntax(format!("expected a declaration, found '{found}'")));
        }
        let base = base.unwrap_or(BaseType::Int);
        Ok(Specifiers {
            ty: TypeInfo {
                base,
                unsigned,
                is_const,
                pointer_depth: 0,
                dims: Vec::new(),
            },
            is_static,
        })
    }

    fn struct_body(&mut self, start: usize, tag: &str) -> Result<()> {
        self.expect_punct("{")?;
        let mut members = Vec::new();
        while !self.at_punct("}") {
            let spec = self.specifiers()?;
            loop {
                let (tok, ty) = self.declarator(&spec.ty, false)?;
                members.push((tok.lexeme, ty));
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct(";")?;
        }
        self.expect_punct("}")?;
        self.structs.insert(tag.to_string(), members.clone());
        let id = self.node(
            NodeKind::StructDecl {
                tag: tag.to_string(),
                members,
            },
            vec![],
            start,
        );
        self.pending_structs.push(id);
        Ok(())
    }

    /// `*`s, a name (optional for parameters), then array suffixes.
    fn declarator(&mut self, base: &TypeInfo, abstract_ok: bool) -> Result<(Token, TypeInfo)> {
        let mut ty = base.clone();
        while self.eat_punct("*") {
            ty.pointer_depth += 1;
            while self.at_keyword("const") || self.at_keyword("restrict") || self.at_keyword("volatile") {
                self.bump();
            }
        }
        if self.at_punct("(") {
            return Err(Error::Unsupported(
                self.diag_at(self.here(), "function pointers are not supported"),
            ));
        }
        let name = if abstract_ok && !self.peek().is_some_and(|t| t.kind == TokenKind::Identifier) {
            let here = self.here();
            Token {
                kind: TokenKind::Identifier,
                lexeme: String::new(),
                span: Span::new(here, here),
                line: 0,
                expanded: false,
            }
        } else {
            self.expect_ident()?
        };
        while self.eat_punct("[") {
            if self.eat_punct("]") {
                ty.dims.push(Dim::Unsized);
                continue;
            }
            let e = self.expr()?;
            self.expect_punct("]")?;
            let consts = &self.consts;
            match self.ast.eval_const(e, &|n| consts.get(n).copied()) {
                Some(v) if v >= 0 => ty.dims.push(Dim::Const(v as u64)),
                _ => ty.dims.push(Dim::Expr(e)),
            }
        }
        Ok((name, ty))
    }

    fn finish_declaration(
        &mut self,
        start: usize,
        spec: &Specifiers,
        first_tok: Token,
        first_ty: TypeInfo,
        storage: Storage,
    ) -> Result<NodeId> {
        let mut decls = Vec::new();
        let mut cur = Some((first_tok, first_ty));
        loop {
            let (tok, ty) = match cur.take() {
                Some(x) => x,
                None => self.declarator(&spec.ty, false)?,
            };
            let dstart = tok.span.start;
            let init = if self.eat_punct("=") {
                Some(self.initializer()?)
            } else {
                None
            };
            let name = tok.lexeme.clone();
            let d = self.node(
                NodeKind::VarDecl {
                    name: name.clone(),
                    storage,
                    is_static: spec.is_static,
                },
                vec![init],
                dstart,
            );
            self.ast.node_mut(d).type_info = Some(ty);
            self.declare(&name, d);
            decls.push(Some(d));
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(self.node(NodeKind::DeclStmt, decls, start))
    }

    fn initializer(&mut self) -> Result<NodeId> {
        if self.at_punct("{") {
            let start = self.here();
            self.bump();
            let mut items = Vec::new();
            while !self.at_punct("}") {
                items.push(Some(self.initializer()?));
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct("}")?;
            return Ok(self.node(NodeKind::InitList, items, start));
        }
        self.assignment()
    }

    // ---- statements ----

    fn compound(&mut self) -> Result<NodeId> {
        let start = self.expect_punct("{")?.span.start;
        self.scopes.push(HashMap::new());
        let mut stmts = Vec::new();
        while !self.at_punct("}") {
            if self.peek().is_none() {
                return Err(self.syntax("unexpected end of file inside block"));
            }
            stmts.push(Some(self.statement()?));
        }
        self.expect_punct("}")?;
        self.scopes.pop();
        Ok(self.node(NodeKind::CompoundStmt, stmts, start))
    }

    fn statement(&mut self) -> Result<NodeId> {
        self.check_unsupported()?;
        let start = self.here();
        let Some(t) = self.peek() else {
            return Err(self.syntax("expected a statement"));
        };
        if t.kind == TokenKind::PragmaLine {
            return self.omp_statement();
        }
        if t.kind == TokenKind::Keyword {
            match t.lexeme.as_str() {
                "if" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let c = self.expr()?;
                    self.expect_punct(")")?;
                    let th = self.sub_statement()?;
                    let el = if self.at_keyword("else") {
                        self.bump();
                        Some(self.sub_statement()?)
                    } else {
                        None
                    };
                    return Ok(self.node(NodeKind::IfStmt, vec![Some(c), Some(th), el], start));
                }
                "for" => {
                    self.bump();
                    self.expect_punct("(")?;
                    self.scopes.push(HashMap::new());
                    let init = if self.eat_punct(";") {
                        None
                    } else if self.starts_type() {
                        let dstart = self.here();
                        let spec = self.specifiers()?;
                        let (tok, ty) = self.declarator(&spec.ty, false)?;
                        Some(self.finish_declaration(dstart, &spec, tok, ty, Storage::Local)?)
                    } else {
                        let e = self.expr()?;
                        self.expect_punct(";")?;
                        Some(e)
                    };
                    let cond = if self.at_punct(";") { None } else { Some(self.expr()?) };
                    self.expect_punct(";")?;
                    let inc = if self.at_punct(")") { None } else { Some(self.expr()?) };
                    self.expect_punct(")")?;
                    let body = self.sub_statement()?;
                    self.scopes.pop();
                    return Ok(self.node(NodeKind::ForStmt, vec![init, cond, inc, Some(body)], start));
                }
                "while" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let c = self.expr()?;
                    self.expect_punct(")")?;
                    let body = self.sub_statement()?;
                    return Ok(self.node(NodeKind::WhileStmt, vec![Some(c), Some(body)], start));
                }
                "do" => {
                    self.bump();
                    let body = self.sub_statement()?;
                    if !self.at_keyword("while") {
                        return Err(self.syntax("expected 'while' after do body"));
                    }
                    self.bump();
                    self.expect_punct("(")?;
                    let c = self.expr()?;
                    self.expect_punct(")")?;
                    self.expect_punct(";")?;
                    return Ok(self.node(NodeKind::DoStmt, vec![Some(body), Some(c)], start));
                }
                "switch" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let c = self.expr()?;
                    self.expect_punct(")")?;
                    let body = self.sub_statement()?;
                    return Ok(self.node(NodeKind::SwitchStmt, vec![Some(c), Some(body)], start));
                }
                "case" => {
                    self.bump();
                    let v = self.conditional()?;
                    self.expect_punct(":")?;
                    return Ok(self.node(NodeKind::CaseLabel, vec![Some(v)], start));
                }
                "default" => {
                    self.bump();
                    self.expect_punct(":")?;
                    return Ok(self.node(NodeKind::DefaultLabel, vec![], start));
                }
                "return" => {
                    self.bump();
                    let v = if self.at_punct(";") { None } else { Some(self.expr()?) };
                    self.expect_punct(";")?;
                    return Ok(self.node(NodeKind::ReturnStmt, vec![v], start));
                }
                "break" => {
                    self.bump();
                    self.expect_punct(";")?;
                    return Ok(self.node(NodeKind::BreakStmt, vec![], start));
                }
                "continue" => {
                    self.bump();
                    self.expect_punct(";")?;
                    return Ok(self.node(NodeKind::ContinueStmt, vec![], start));
                }
                "sizeof" => {}
                _ if self.starts_type() => {
                    let spec = self.specifiers()?;
                    if self.eat_punct(";") {
                        let mut out = self.take_pending_struct(start);
                        return Ok(out
                            .pop()
                            .unwrap_or_else(|| self.node(NodeKind::NullStmt, vec![], start)));
                    }
                    let pending = self.take_pending_struct(start);
                    if !pending.is_empty() {
                        return Err(Error::Unsupported(
                            self.diag_at(start, "struct definitions must be at file scope"),
                        ));
                    }
                    let (tok, ty) = self.declarator(&spec.ty, false)?;
                    return self.finish_declaration(start, &spec, tok, ty, Storage::Local);
                }
                _ => {}
            }
        }
        if t.is_punct("{") {
            return self.compound();
        }
        if t.is_punct(";") {
            self.bump();
            return Ok(self.node(NodeKind::NullStmt, vec![], start));
        }
        let e = self.expr()?;
        self.expect_punct(";")?;
        Ok(self.node(NodeKind::ExprStmt, vec![Some(e)], start))
    }

    /// Body of if/loop: a declaration there is rejected as in C.
    fn sub_statement(&mut self) -> Result<NodeId> {
        if self.starts_type() && !self.at_keyword("sizeof") {
            return Err(self.syntax("a declaration is not allowed here"));
        }
        self.statement()
    }

    fn omp_statement(&mut self) -> Result<NodeId> {
        let t = self.bump();
        let info = parse_omp_pragma(&t.lexeme, t.span, t.line)?;
        let standalone = info.kind.is_standalone()
            || (info.kind == DirectiveKind::NonTarget
                && STANDALONE_OTHER.contains(&info.name.split(' ').next().unwrap_or("")));
        let child = if standalone {
            None
        } else {
            if self.peek().is_none() || self.at_punct("}") {
                return Err(Error::Syntax(self.diag_at(
                    t.span.start,
                    format!("'{}' needs an associated statement", info.name),
                )));
            }
            Some(self.sub_statement()?)
        };
        Ok(self.node(NodeKind::OmpDirective(info), vec![child], t.span.start))
    }

    // ---- expressions ----

    pub fn expr(&mut self) -> Result<NodeId> {
        let start = self.here();
        let mut lhs = self.assignment()?;
        while self.eat_punct(",") {
            let rhs = self.assignment()?;
            lhs = self.node(NodeKind::BinaryOp(BinOp::Comma), vec![Some(lhs), Some(rhs)], start);
            let ty = self.ast.node(rhs).type_info.clone();
            self.ast.node_mut(lhs).type_info = ty;
        }
        Ok(lhs)
    }

    fn assignment(&mut self) -> Result<NodeId> {
        let start = self.here();
        let lhs = self.conditional()?;
        let Some(t) = self.peek() else { return Ok(lhs) };
        if t.kind != TokenKind::Punctuator {
            return Ok(lhs);
        }
        let op = match t.lexeme.as_str() {
            "=" => None,
            "+=" => Some(BinOp::Add),
            "-=" => Some(BinOp::Sub),
            "*=" => Some(BinOp::Mul),
            "/=" => Some(BinOp::Div),
            "%=" => Some(BinOp::Rem),
            "<<=" => Some(BinOp::Shl),
            ">>=" => Some(BinOp::Shr),
            "&=" => Some(BinOp::BitAnd),
            "|=" => Some(BinOp::BitOr),
            "^=" => Some(BinOp::BitXor),
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.assignment()?;
        let id = self.node(NodeKind::AssignOp(op), vec![Some(lhs), Some(rhs)], start);
        let ty = self.ast.node(lhs).type_info.clone();
        self.ast.node_mut(id).type_info = ty;
        Ok(id)
    }

    fn conditional(&mut self) -> Result<NodeId> {
        let start = self.here();
        let c = self.binary(0)?;
        if !self.eat_punct("?") {
            return Ok(c);
        }
        let a = self.expr()?;
        self.expect_punct(":")?;
        let b = self.conditional()?;
        let id = self.node(NodeKind::Conditional, vec![Some(c), Some(a), Some(b)], start);
        let ty = self.ast.node(a).type_info.clone();
        self.ast.node_mut(id).type_info = ty;
        Ok(id)
    }

    fn binary(&mut self, min_prec: u8) -> Result<NodeId> {
        let start = self.here();
        let mut lhs = self.unary()?;
        loop {
            let Some(t) = self.peek() else { break };
            if t.kind != TokenKind::Punctuator {
                break;
            }
            let Some(op) = BinOp::from_punct(&t.lexeme) else { break };
            let prec = precedence(op);
            if op == BinOp::Comma || prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = self.node(NodeKind::BinaryOp(op), vec![Some(lhs), Some(rhs)], start);
            let ty = self.binary_type(op, lhs);
            self.ast.node_mut(lhs).type_info = ty;
        }
        Ok(lhs)
    }

    fn binary_type(&self, op: BinOp, id: NodeId) -> Option<TypeInfo> {
        let l = self.ast.child(id, 0).and_then(|c| self.ast.node(c).type_info.clone());
        let r = self.ast.child(id, 1).and_then(|c| self.ast.node(c).type_info.clone());
        if op.is_comparison() || matches!(op, BinOp::LogAnd | BinOp::LogOr) {
            return Some(TypeInfo::scalar(BaseType::Int));
        }
        let decay = |t: TypeInfo| -> TypeInfo {
            if t.dims.is_empty() {
                t
            } else {
                let mut t = t;
                t.dims.remove(0);
                t.pointer_depth += 1;
                t
            }
        };
        match (l, r) {
            (Some(l), _) if l.is_buffer() && matches!(op, BinOp::Add | BinOp::Sub) => Some(decay(l)),
            (_, Some(r)) if r.is_buffer() && op == BinOp::Add => Some(decay(r)),
            (Some(l), Some(r)) => {
                let rank = |t: &TypeInfo| match t.base {
                    BaseType::Double => 4,
                    BaseType::Float => 3,
                    BaseType::Long => 2,
                    _ => 1,
                };
                Some(if rank(&r) > rank(&l) { r } else { l })
            }
            (l, r) => l.or(r),
        }
    }

    fn unary(&mut self) -> Result<NodeId> {
        let start = self.here();
        let Some(t) = self.peek().cloned() else {
            return Err(self.syntax("expected an expression"));
        };
        if t.is_keyword("sizeof") {
            self.bump();
            if self.at_punct("(")
                && self
                    .peek_at(1)
                    .is_some_and(|n| n.kind == TokenKind::Keyword && TYPE_KEYWORDS.contains(&n.lexeme.as_str()))
            {
                self.bump();
                let ty = self.type_name()?;
                self.expect_punct(")")?;
                let id = self.node(NodeKind::SizeOf, vec![], start);
                self.ast.node_mut(id).type_info = Some(ty);
                return Ok(id);
            }
            let e = self.unary()?;
            let id = self.node(NodeKind::SizeOf, vec![Some(e)], start);
            let ty = self.ast.node(e).type_info.clone();
            self.ast.node_mut(id).type_info = ty;
            return Ok(id);
        }
        if t.is_punct("(")
            && self
                .peek_at(1)
                .is_some_and(|n| n.kind == TokenKind::Keyword && TYPE_KEYWORDS.contains(&n.lexeme.as_str()))
        {
            self.bump();
            let ty = self.type_name()?;
            self.expect_punct(")")?;
            let e = self.unary()?;
            let id = self.node(NodeKind::Cast, vec![Some(e)], start);
            self.ast.node_mut(id).type_info = Some(ty);
            return Ok(id);
        }
        if t.kind == TokenKind::Punctuator {
            let op = match t.lexeme.as_str() {
                "-" => Some(UnOp::Neg),
                "+" => Some(UnOp::Plus),
                "!" => Some(UnOp::Not),
                "~" => Some(UnOp::BitNot),
                "*" => Some(UnOp::Deref),
                "&" => Some(UnOp::AddrOf),
                "++" => Some(UnOp::PreInc),
                "--" => Some(UnOp::PreDec),
                _ => None,
            };
            if let Some(op) = op {
                self.bump();
                let e = self.unary()?;
                let id = self.node(NodeKind::UnaryOp(op), vec![Some(e)], start);
                let mut ty = self.ast.node(e).type_info.clone();
                match op {
                    UnOp::Deref => {
                        if let Some(t) = ty.as_mut() {
                            if !t.dims.is_empty() {
                                t.dims.remove(0);
                            } else {
                                t.pointer_depth = t.pointer_depth.saturating_sub(1);
                            }
                        }
                    }
                    UnOp::AddrOf => {
                        if let Some(t) = ty.as_mut() {
                            t.pointer_depth += 1;
                        }
                    }
                    UnOp::Not => ty = Some(TypeInfo::scalar(BaseType::Int)),
                    _ => {}
                }
                self.ast.node_mut(id).type_info = ty;
                return Ok(id);
            }
        }
        self.postfix()
    }

    fn type_name(&mut self) -> Result<TypeInfo> {
        let spec = self.specifiers()?;
        let mut ty = spec.ty;
        while self.eat_punct("*") {
            ty.pointer_depth += 1;
        }
        Ok(ty)
    }

    fn postfix(&mut self) -> Result<NodeId> {
        let start = self.here();
        let mut e = self.primary()?;
        loop {
            if self.eat_punct("[") {
                let idx = self.expr()?;
                self.expect_punct("]")?;
                let base_ty = self.ast.node(e).type_info.clone();
                e = self.node(NodeKind::ArraySubscript, vec![Some(e), Some(idx)], start);
                let ty = base_ty.map(|mut t| {
                    if !t.dims.is_empty() {
                        t.dims.remove(0);
                    } else {
                        t.pointer_depth = t.pointer_depth.saturating_sub(1);
                    }
                    t
                });
                self.ast.node_mut(e).type_info = ty;
            } else if self.at_punct(".") || self.at_punct("->") {
                let arrow = self.bump().lexeme == "->";
                let field = self.expect_ident()?.lexeme;
                let ty = self.ast.node(e).type_info.as_ref().and_then(|t| match &t.base {
                    BaseType::Struct(tag) => self
                        .structs
                        .get(tag)
                        .and_then(|m| m.iter().find(|(n, _)| *n == field))
                        .map(|(_, t)| t.clone()),
                    _ => None,
                });
                e = self.node(NodeKind::MemberAccess { field, arrow }, vec![Some(e)], start);
                self.ast.node_mut(e).type_info = ty;
            } else if self.at_punct("(") {
                self.bump();
                let mut children = vec![Some(e)];
                while !self.at_punct(")") {
                    children.push(Some(self.assignment()?));
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect_punct(")")?;
                let callee = self.ast.name(e).map(str::to_string);
                let ret = callee.and_then(|n| self.fn_ret.get(&n).cloned());
                e = self.node(NodeKind::Call, children, start);
                self.ast.node_mut(e).type_info = ret;
            } else if self.at_punct("++") || self.at_punct("--") {
                let op = if self.bump().lexeme == "++" {
                    UnOp::PostInc
                } else {
                    UnOp::PostDec
                };
                let ty = self.ast.node(e).type_info.clone();
                e = self.node(NodeKind::UnaryOp(op), vec![Some(e)], start);
                self.ast.node_mut(e).type_info = ty;
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<NodeId> {
        let start = self.here();
        let Some(t) = self.peek().cloned() else {
            return Err(self.syntax("expected an expression, found end of file"));
        };
        match t.kind {
            TokenKind::Identifier => {
                self.bump();
                let decl = self.lookup(&t.lexeme);
                let id = self.node(
                    NodeKind::DeclRef {
                        name: t.lexeme.clone(),
                        decl,
                    },
                    vec![],
                    start,
                );
                let ty = decl.and_then(|d| self.ast.node(d).type_info.clone());
                self.ast.node_mut(id).type_info = ty;
                Ok(id)
            }
            TokenKind::IntLiteral => {
                self.bump();
                let v = parse_int(&t.lexeme)
                    .ok_or_else(|| Error::Syntax(self.diag_at(start, format!("bad integer literal {}", t.lexeme))))?;
                let id = self.node(NodeKind::IntLiteral(v), vec![], start);
                self.ast.node_mut(id).type_info = Some(TypeInfo::scalar(BaseType::Int));
                Ok(id)
            }
            TokenKind::FloatLiteral => {
                self.bump();
                let s = t.lexeme.trim_end_matches(['f', 'F', 'l', 'L']);
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Syntax(self.diag_at(start, format!("bad float literal {}", t.lexeme))))?;
                let id = self.node(NodeKind::FloatLiteral(v), vec![], start);
                let base = if t.lexeme.ends_with(['f', 'F']) {
                    BaseType::Float
                } else {
                    BaseType::Double
                };
                self.ast.node_mut(id).type_info = Some(TypeInfo::scalar(base));
                Ok(id)
            }
            TokenKind::StringLiteral => {
                while self.peek().is_some_and(|t| t.kind == TokenKind::StringLiteral) {
                    self.bump();
                }
                let id = self.node(NodeKind::StringLiteral, vec![], start);
                let mut ty = TypeInfo::scalar(BaseType::Char);
                ty.pointer_depth = 1;
                ty.is_const = true;
                self.ast.node_mut(id).type_info = Some(ty);
                Ok(id)
            }
            TokenKind::Punctuator if t.lexeme == "(" => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                // parentheses are not kept as nodes; widen the span instead
                let span = Span::new(start, self.prev_end());
                self.ast.node_mut(e).span = span;
                Ok(e)
            }
            TokenKind::PragmaLine => Err(Error::Syntax(self.diag_at(start, "pragma inside an expression"))),
            _ => {
                self.check_unsupported()?;
                Err(self.syntax(format!("expected an expression, found '{}'", t.lexeme)))
            }
        }
    }
}

fn precedence(op: BinOp) -> u8 {
    use BinOp::*;
    match op {
        Comma => 0,
        LogOr => 1,
        LogAnd => 2,
        BitOr => 3,
        BitXor => 4,
        BitAnd => 5,
        Eq | Ne => 6,
        Lt | Gt | Le | Ge => 7,
        Shl | Shr => 8,
        Add | Sub => 9,
        Mul | Div | Rem => 10,
    }
}

fn parse_int(lex: &str) -> Option<i64> {
    if let Some(body) = lex.strip_prefix('\'') {
        let body = body.strip_suffix('\'')?;
        let mut chars = body.chars();
        return match (chars.next()?, chars.next()) {
            ('\\', Some(c)) => Some(match c {
                'n' => 10,
                't' => 9,
                'r' => 13,
                '0' => 0,
                other => other as i64,
            }),
            (c, None) => Some(c as i64),
            _ => None,
        };
    }
    let s = lex.trim_end_matches(['u', 'U', 'l', 'L']);
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()
    } else if s.len() > 1 && s.starts_with('0') {
        i64::from_str_radix(&s[1..], 8).ok()
    } else {
        s.parse().ok()
    }
}
