//! Loop bounds extraction and placement of update directives for accesses in
//! nested loops.

use std::collections::BTreeSet;

use crate::frontend::{BinOp, NodeId, NodeKind, TranslationUnit, UnOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopBounds {
    pub idx_var: Option<NodeId>,
    pub lower: Option<i64>,
    /// Inclusive.
    pub upper: Option<i64>,
    pub step: Option<i64>,
}

impl LoopBounds {
    pub const UNKNOWN: LoopBounds = LoopBounds {
        idx_var: None,
        lower: None,
        upper: None,
        step: None,
    };

    pub fn trip_count(&self) -> Option<u64> {
        let (lo, hi, st) = (self.lower?, self.upper?, self.step?);
        if st > 0 {
            Some(if hi < lo { 0 } else { ((hi - lo) / st + 1) as u64 })
        } else if st < 0 {
            Some(if lo < hi { 0 } else { ((lo - hi) / -st + 1) as u64 })
        } else {
            None
        }
    }
}

fn decl_of(tu: &TranslationUnit, e: NodeId) -> Option<NodeId> {
    match tu.ast.kind(tu.ast.strip_casts(e)) {
        NodeKind::DeclRef { decl, .. } => *decl,
        _ => None,
    }
}

/// Variable stepped by the increment, provided the condition tests it.
pub fn indexing_var(tu: &TranslationUnit, f: NodeId) -> Option<NodeId> {
    let a = &tu.ast;
    if !matches!(a.kind(f), NodeKind::ForStmt) {
        return None;
    }
    let inc = a.child(f, 2)?;
    let var = match a.kind(inc) {
        NodeKind::UnaryOp(op) if op.is_increment() => decl_of(tu, a.child(inc, 0)?)?,
        NodeKind::AssignOp(_) => decl_of(tu, a.child(inc, 0)?)?,
        _ => return None,
    };
    let cond = a.child(f, 1)?;
    let NodeKind::BinaryOp(op) = a.kind(cond) else {
        return None;
    };
    if !op.is_comparison() {
        return None;
    }
    let l = decl_of(tu, a.child(cond, 0)?);
    let r = decl_of(tu, a.child(cond, 1)?);
    (l == Some(var) || r == Some(var)).then_some(var)
}

fn step_of(tu: &TranslationUnit, inc: NodeId, env: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
    let a = &tu.ast;
    match a.kind(inc) {
        NodeKind::UnaryOp(UnOp::PreInc | UnOp::PostInc) => Some(1),
        NodeKind::UnaryOp(UnOp::PreDec | UnOp::PostDec) => Some(-1),
        NodeKind::AssignOp(Some(BinOp::Add)) => a.eval_const(a.child(inc, 1)?, env),
        NodeKind::AssignOp(Some(BinOp::Sub)) => a.eval_const(a.child(inc, 1)?, env).map(|v| -v),
        NodeKind::AssignOp(None) => {
            // i = i + c / i = i - c
            let lhs = decl_of(tu, a.child(inc, 0)?)?;
            let rhs = a.child(inc, 1)?;
            let NodeKind::BinaryOp(op @ (BinOp::Add | BinOp::Sub)) = a.kind(rhs) else {
                return None;
            };
            if decl_of(tu, a.child(rhs, 0)?) != Some(lhs) {
                return None;
            }
            let c = a.eval_const(a.child(rhs, 1)?, env)?;
            Some(if *op == BinOp::Add { c } else { -c })
        }
        _ => None,
    }
}

/// Constant-folded bounds of a `for` loop. `env` supplies values of names
/// (macros, size bindings, known scalars).
pub fn extract_for_bounds(tu: &TranslationUnit, f: NodeId, env: &dyn Fn(&str) -> Option<i64>) -> LoopBounds {
    let a = &tu.ast;
    let Some(var) = indexing_var(tu, f) else {
        return LoopBounds::UNKNOWN;
    };
    let mut b = LoopBounds {
        idx_var: Some(var),
        ..LoopBounds::UNKNOWN
    };
    b.lower = a.child(f, 0).and_then(|init| match a.kind(init) {
        NodeKind::DeclStmt => a
            .children(init)
            .find(|&d| d == var)
            .and_then(|d| a.child(d, 0))
            .and_then(|e| a.eval_const(e, env)),
        NodeKind::AssignOp(None) if decl_of(tu, a.child(init, 0)?) == Some(var) => a.eval_const(a.child(init, 1)?, env),
        _ => None,
    });
    b.step = a.child(f, 2).and_then(|inc| step_of(tu, inc, env)).filter(|&s| s != 0);
    let cond = a.child(f, 1).expect("indexing var implies a condition");
    let NodeKind::BinaryOp(op) = a.kind(cond) else {
        unreachable!("checked by indexing_var")
    };
    let (l, r) = (a.child(cond, 0).expect("lhs"), a.child(cond, 1).expect("rhs"));
    // normalize to `var op bound`
    let (op, bound) = if decl_of(tu, l) == Some(var) {
        (*op, r)
    } else {
        let flipped = match op {
            BinOp::Lt => BinOp::Gt,
            BinOp::Gt => BinOp::Lt,
            BinOp::Le => BinOp::Ge,
            BinOp::Ge => BinOp::Le,
            other => *other,
        };
        (flipped, l)
    };
    let v = a.eval_const(bound, env);
    b.upper = match op {
        BinOp::Lt => v.map(|v| v - 1),
        BinOp::Le | BinOp::Ge => v,
        BinOp::Gt => v.map(|v| v + 1),
        BinOp::Ne => match b.step {
            Some(s) if s > 0 => v.map(|v| v - 1),
            Some(_) => v.map(|v| v + 1),
            None => None,
        },
        _ => None,
    };
    // a direction that never reaches the bound is not a counted loop
    match (op, b.step) {
        (BinOp::Lt | BinOp::Le, Some(s)) if s < 0 => b.upper = None,
        (BinOp::Gt | BinOp::Ge, Some(s)) if s > 0 => b.upper = None,
        _ => {}
    }
    b
}

/// Declared variables referenced anywhere in `exprs`.
pub fn referenced_vars(tu: &TranslationUnit, exprs: &[NodeId]) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    for &e in exprs {
        for n in tu.ast.descendants(e) {
            if let NodeKind::DeclRef { decl: Some(d), .. } = tu.ast.kind(n) {
                out.insert(*d);
            }
        }
    }
    out
}

/// Outermost enclosing loop that drives the indexing of an access.
///
/// `loops` is ordered outermost first, so the innermost loop is popped first.
/// A loop starting before byte offset `loc_lim` ends the search.
pub fn find_update_insert_loc(
    tu: &TranslationUnit,
    access: NodeId,
    subscripts: &[NodeId],
    loops: &[NodeId],
    loc_lim: usize,
) -> NodeId {
    let indexing_vars = referenced_vars(tu, subscripts);
    let mut pos = access;
    let mut loops = loops.to_vec();
    while let Some(for_stmt) = loops.pop() {
        if tu.ast.span(for_stmt).start < loc_lim {
            break;
        }
        let Some(for_idx_var) = indexing_var(tu, for_stmt) else {
            continue;
        };
        if indexing_vars.contains(&for_idx_var) {
            pos = for_stmt;
        }
    }
    pos
}

/// Retreat a hoisted anchor inward until `legal` accepts it.
///
/// `loops` is ordered outermost first and contains `pos` when `pos` is a loop;
/// `fallback` is used when no loop is legal.
pub fn finalize_update_anchor(
    pos: NodeId,
    loops: &[NodeId],
    fallback: NodeId,
    legal: &dyn Fn(NodeId) -> bool,
) -> NodeId {
    let Some(start) = loops.iter().position(|&l| l == pos) else {
        return pos;
    };
    loops[start..].iter().copied().find(|&l| legal(l)).unwrap_or(fallback)
}
