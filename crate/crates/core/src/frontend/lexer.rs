//! Tokenizer for the C subset. Preprocessor lines become single tokens;
//! `#pragma omp` lines (with `\` continuations joined) are pragma-line tokens.

use crate::error::{Diagnostic, Error, Result};
use crate::source::{SourceFile, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Identifier,
    Keyword,
    IntLiteral,
    FloatLiteral,
    StringLiteral,
    Punctuator,
    PragmaLine,
    /// Any other preprocessor line (`#define`, `#include`, ...).
    Directive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub span: Span,
    pub line: usize,
    /// Set on tokens substituted from an object-like macro; the span is the
    /// macro name's span in the original text.
    pub expanded: bool,
}

impl Token {
    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuator && self.lexeme == p
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        self.kind == TokenKind::Keyword && self.lexeme == k
    }
}

pub const KEYWORDS: &[&str] = &[
    "int", "float", "double", "char", "void", "long", "short", "unsigned", "signed", "const", "static", "extern",
    "struct", "if", "else", "switch", "case", "default", "for", "while", "do", "return", "break", "continue", "sizeof",
    "goto", "typedef", "union", "enum", "volatile", "register", "inline", "restrict",
];

const PUNCTUATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "+", "-", "*", "/", "%", "<", ">", "=", "!", "&", "|", "^", "~", "?", ":", ";", ",", ".",
    "(", ")", "[", "]", "{", "}",
];

struct Lexer<'a> {
    file: &'a SourceFile,
    bytes: &'a [u8],
    pos: usize,
    tokens: Vec<Token>,
}

pub fn tokenize(file: &SourceFile) -> Result<Vec<Token>> {
    let mut lx = Lexer {
        file,
        bytes: file.text.as_bytes(),
        pos: 0,
        tokens: Vec::new(),
    };
    lx.run()?;
    Ok(lx.tokens)
}

impl<'a> Lexer<'a> {
    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        let (line, col) = self.file.line_col(at);
        Error::Lex(Diagnostic::error(line, col, msg))
    }

    fn peek(&self, off: usize) -> u8 {
        *self.bytes.get(self.pos + off).unwrap_or(&0)
    }

    fn push(&mut self, kind: TokenKind, start: usize, lexeme: String) {
        let line = self.file.line_of(start);
        self.tokens.push(Token {
            kind,
            lexeme,
            span: Span::new(start, self.pos),
            line,
            expanded: false,
        });
    }

    fn run(&mut self) -> Result<()> {
        let mut at_line_start = true;
        while self.pos < self.bytes.len() {
            let c = self.peek(0);
            match c {
                b'\n' => {
                    at_line_start = true;
                    self.pos += 1;
                }
                b' ' | b'\t' | b'\r' | 0x0c => self.pos += 1,
                b'\\' if self.peek(1) == b'\n' => self.pos += 2,
                b'/' if self.peek(1) == b'/' => {
                    while self.pos < self.bytes.len() && self.peek(0) != b'\n' {
                        self.pos += 1;
                    }
                }
                b'/' if self.peek(1) == b'*' => {
                    let start = self.pos;
                    match self.file.text[self.pos + 2..].find("*/") {
                        Some(i) => self.pos += i + 4,
                        None => return Err(self.err(start, "unterminated comment")),
                    }
                }
                b'#' if at_line_start => {
                    self.preprocessor_line()?;
                    at_line_start = true;
                    continue;
                }
                _ => {
                    at_line_start = false;
                    self.token()?;
                }
            }
        }
        Ok(())
    }

    /// Consume a `#...` line including `\` continuations; the newline itself is left.
    fn preprocessor_line(&mut self) -> Result<()> {
        let start = self.pos;
        let mut raw = String::new();
        while self.pos < self.bytes.len() {
            let c = self.peek(0);
            if c == b'\\' && (self.peek(1) == b'\n' || (self.peek(1) == b'\r' && self.peek(2) == b'\n')) {
                self.pos += if self.peek(1) == b'\r' { 3 } else { 2 };
                raw.push(' ');
                continue;
            }
            if c == b'\n' {
                break;
            }
            if c == b'/' && self.peek(1) == b'/' {
                break;
            }
            if c == b'/' && self.peek(1) == b'*' {
                match self.file.text[self.pos + 2..].find("*/") {
                    Some(i) => {
                        self.pos += i + 4;
                        raw.push(' ');
                        continue;
                    }
                    None => return Err(self.err(self.pos, "unterminated comment")),
                }
            }
            raw.push(c as char);
            self.pos += 1;
        }
        // trailing whitespace stays outside the token span
        while self.pos > start && matches!(self.bytes[self.pos - 1], b' ' | b'\t' | b'\r') {
            self.pos -= 1;
        }
        let normalized = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        let normalized = normalized.replacen("# ", "#", 1);
        let is_omp = {
            let mut words = normalized.trim_start_matches('#').split_whitespace();
            words.next() == Some("pragma") && words.next() == Some("omp")
        };
        let kind = if is_omp {
            TokenKind::PragmaLine
        } else {
            TokenKind::Directive
        };
        self.push(kind, start, normalized);
        Ok(())
    }

    fn token(&mut self) -> Result<()> {
        let start = self.pos;
        let c = self.peek(0);
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.peek(0).is_ascii_alphanumeric() || self.peek(0) == b'_' {
                self.pos += 1;
            }
            let word = &self.file.text[start..self.pos];
            let kind = if KEYWORDS.contains(&word) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            self.push(kind, start, word.to_string());
            return Ok(());
        }
        if c.is_ascii_digit() || (c == b'.' && self.peek(1).is_ascii_digit()) {
            return self.number();
        }
        if c == b'"' {
            self.pos += 1;
            loop {
                match self.peek(0) {
                    0 | b'\n' => return Err(self.err(start, "unterminated string literal")),
                    b'\\' => self.pos += 2,
                    b'"' => {
                        self.pos += 1;
                        break;
                    }
                    _ => self.pos += 1,
                }
            }
            let lex = self.file.text[start..self.pos].to_string();
            self.push(TokenKind::StringLiteral, start, lex);
            return Ok(());
        }
        if c == b'\'' {
            self.pos += 1;
            loop {
                match self.peek(0) {
                    0 | b'\n' => return Err(self.err(start, "unterminated character literal")),
                    b'\\' => self.pos += 2,
                    b'\'' => {
                        self.pos += 1;
                        break;
                    }
                    _ => self.pos += 1,
                }
            }
            let lex = self.file.text[start..self.pos].to_string();
            self.push(TokenKind::IntLiteral, start, lex);
            return Ok(());
        }
        let rest = &self.file.text[start..];
        for p in PUNCTUATORS {
            if rest.starts_with(p) {
                self.pos += p.len();
                self.push(TokenKind::Punctuator, start, p.to_string());
                return Ok(());
            }
        }
        Err(self.err(
            start,
            format!("unexpected character '{}'", rest.chars().next().unwrap_or('?')),
        ))
    }

    fn number(&mut self) -> Result<()> {
        let start = self.pos;
        let mut is_float = false;
        if self.peek(0) == b'0' && matches!(self.peek(1), b'x' | b'X') {
            self.pos += 2;
            while self.peek(0).is_ascii_hexdigit() {
                self.pos += 1;
            }
        } else {
            while self.peek(0).is_ascii_digit() {
                self.pos += 1;
            }
            if self.peek(0) == b'.' {
                is_float = true;
                self.pos += 1;
                while self.peek(0).is_ascii_digit() {
                    self.pos += 1;
                }
            }
            if matches!(self.peek(0), b'e' | b'E') {
                let sign = matches!(self.peek(1), b'+' | b'-') as usize;
                if self.peek(1 + sign).is_ascii_digit() {
                    is_float = true;
                    self.pos += 1 + sign;
                    while self.peek(0).is_ascii_digit() {
                        self.pos += 1;
                    }
                }
            }
        }
        while matches!(self.peek(0), b'u' | b'U' | b'l' | b'L' | b'f' | b'F') {
            if matches!(self.peek(0), b'f' | b'F') {
                is_float = true;
            }
            self.pos += 1;
        }
        let kind = if is_float {
            TokenKind::FloatLiteral
        } else {
            TokenKind::IntLiteral
        };
        let lex = self.file.text[start..self.pos].to_string();
        self.push(kind, start, lex);
        Ok(())
    }
}
