//! Lexing, macro expansion and parsing of the C subset.

pub mod ast;
pub mod lexer;
pub mod omp;
pub mod parser;
pub mod preprocess;

use std::collections::BTreeMap;

pub use ast::{Ast, BaseType, BinOp, Dim, Node, NodeId, NodeKind, Storage, TranslationUnit, TypeInfo, UnOp};
pub use omp::{Clause, DirectiveKind, MapType, OmpDirectiveInfo};

use crate::error::Result;
use crate::source::SourceFile;
use lexer::Token;

/// Tokenize, expand object-like macros and parse `file`.
pub fn parse_source(file: &SourceFile) -> Result<TranslationUnit> {
    let tokens = lexer::tokenize(file)?;
    let expanded = preprocess::expand_defines(file, tokens)?;
    let defines = fold_defines(file, &expanded.defines);
    let mut p = parser::Parser::new(file, expanded.tokens).with_consts(defines.clone());
    let root = p.parse_translation_unit()?;
    Ok(TranslationUnit {
        ast: p.ast,
        root,
        defines,
        warnings: expanded.warnings,
    })
}

/// Integer values of the macros whose replacement folds to a constant.
fn fold_defines(file: &SourceFile, defines: &BTreeMap<String, Vec<Token>>) -> BTreeMap<String, i64> {
    fn fold(file: &SourceFile, name: &str, defines: &BTreeMap<String, Vec<Token>>, depth: usize) -> Option<i64> {
        let toks = defines.get(name)?;
        if depth > 32 || toks.is_empty() {
            return None;
        }
        let mut p = parser::Parser::new(file, toks.clone());
        let e = p.expr().ok()?;
        p.ast.eval_const(e, &|n| fold(file, n, defines, depth + 1))
    }
    defines
        .keys()
        .filter_map(|k| fold(file, k, defines, 0).map(|v| (k.clone(), v)))
        .collect()
}

#[cfg(test)]
mod tests;
