//! Object-like `#define` expansion over the token stream. `#include` lines
//! are dropped with a warning; everything else preprocessor-related is
//! rejected.

use std::collections::BTreeMap;

use super::lexer::{tokenize, Token, TokenKind};
use crate::error::{Diagnostic, Error, Result};
use crate::source::SourceFile;

#[derive(Debug, Clone, Default)]
pub struct Expanded {
    pub tokens: Vec<Token>,
    /// Macro name -> replacement tokens (as lexed from the define line).
    pub defines: BTreeMap<String, Vec<Token>>,
    pub warnings: Vec<Diagnostic>,
}

const MAX_EXPANSION_DEPTH: usize = 32;

pub fn expand_defines(file: &SourceFile, tokens: Vec<Token>) -> Result<Expanded> {
    let mut out = Expanded::default();
    for tok in tokens {
        if tok.kind != TokenKind::Directive {
            if tok.kind == TokenKind::Identifier && out.defines.contains_key(&tok.lexeme) {
                let mut expansion = Vec::new();
                substitute(&tok, &out.defines, 0, &mut expansion, &tok)?;
                out.tokens.extend(expansion);
            } else {
                out.tokens.push(tok);
            }
            continue;
        }
        let (line, col) = file.line_col(tok.span.start);
        let body = tok.lexeme.trim_start_matches('#').trim_start();
        let word = body.split_whitespace().next().unwrap_or("");
        match word {
            "define" => {
                let rest = body["define".len()..].trim_start();
                let name_len = rest
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                    .unwrap_or(rest.len());
                let name = &rest[..name_len];
                if name.is_empty() {
                    return Err(Error::Syntax(Diagnostic::error(
                        line,
                        col,
                        "#define without a macro name",
                    )));
                }
                if rest[name_len..].starts_with('(') {
                    return Err(Error::Unsupported(Diagnostic::error(
                        line,
                        col,
                        format!("function-like macro {name} unsupported"),
                    )));
                }
                let replacement = SourceFile::new(file.path.clone(), rest[name_len..].to_string());
                let repl_tokens = tokenize(&replacement).map_err(|e| match e {
                    Error::Lex(mut d) => {
                        d.line = line;
                        Error::Lex(d)
                    }
                    other => other,
                })?;
                for t in &repl_tokens {
                    let ok = match t.kind {
                        TokenKind::IntLiteral | TokenKind::FloatLiteral | TokenKind::Punctuator => true,
                        TokenKind::Identifier => out.defines.contains_key(&t.lexeme) || t.lexeme == name,
                        _ => false,
                    };
                    if !ok {
                        return Err(Error::Unsupported(Diagnostic::error(
                            line,
                            col,
                            format!("macro {name}: only constant replacement lists are supported"),
                        )));
                    }
                }
                out.defines.insert(name.to_string(), repl_tokens);
            }
            "undef" => {
                let name = body["undef".len()..].trim();
                out.defines.remove(name);
            }
            "include" => {
                out.warnings
                    .push(Diagnostic::warning(line, col, format!("ignoring {}", tok.lexeme)));
            }
            "pragma" => {
                // non-OpenMP pragmas carry no meaning for this tool
                out.warnings
                    .push(Diagnostic::warning(line, col, format!("ignoring {}", tok.lexeme)));
            }
            other => {
                return Err(Error::Unsupported(Diagnostic::error(
                    line,
                    col,
                    format!("preprocessor directive #{other} unsupported"),
                )));
            }
        }
    }
    Ok(out)
}

fn substitute(
    tok: &Token,
    defines: &BTreeMap<String, Vec<Token>>,
    depth: usize,
    out: &mut Vec<Token>,
    origin: &Token,
) -> Result<()> {
    if depth > MAX_EXPANSION_DEPTH {
        return Err(Error::Unsupported(Diagnostic::error(
            origin.line,
            1,
            format!("recursive macro {}", origin.lexeme),
        )));
    }
    match defines.get(&tok.lexeme) {
        Some(repl) if tok.kind == TokenKind::Identifier => {
            // Parenthesize multi-token replacements so `N/2` keeps its meaning.
            let wrap = repl.len() > 1;
            let mk = |kind, lexeme: &str| Token {
                kind,
                lexeme: lexeme.to_string(),
                span: origin.span,
                line: origin.line,
                expanded: true,
            };
            if wrap {
                out.push(mk(TokenKind::Punctuator, "("));
            }
            for r in repl {
                substitute(r, defines, depth + 1, out, origin)?;
            }
            if wrap {
                out.push(mk(TokenKind::Punctuator, ")"));
            }
        }
        _ => out.push(Token {
            span: origin.span,
            line: origin.line,
            expanded: true,
            ..tok.clone()
        }),
    }
    Ok(())
}
