//! Source text with a line index for offset <-> line/column mapping.

use std::path::Path;

use crate::error::Result;

/// Half-open byte range into the original source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, other: Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn join(self, other: Span) -> Span {
        Span {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
    /// Byte offsets of line starts; strictly increasing, first entry is 0.
    pub line_index: Vec<usize>,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut line_index = vec![0];
        line_index.extend(text.match_indices('\n').map(|(i, _)| i + 1).filter(|&i| i < text.len()));
        SourceFile {
            path: path.into(),
            text,
            line_index,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(SourceFile::new(path.display().to_string(), text))
    }

    /// 1-based line number of `offset`.
    pub fn line_of(&self, offset: usize) -> usize {
        match self.line_index.binary_search(&offset) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }

    /// 1-based (line, column) of `offset`.
    pub fn line_col(&self, offset: usize) -> (usize, usize) {
        let line = self.line_of(offset);
        let start = self.line_index[line - 1];
        (line, offset - start + 1)
    }

    pub fn line_start(&self, offset: usize) -> usize {
        self.line_index[self.line_of(offset) - 1]
    }

    /// Offset just past the newline that ends the line containing `offset`
    /// (or the end of text).
    pub fn line_end_after(&self, offset: usize) -> usize {
        match self.text[offset..].find('\n') {
            Some(i) => offset + i + 1,
            None => self.text.len(),
        }
    }

    /// Leading whitespace of the line containing `offset`.
    pub fn indent_at(&self, offset: usize) -> &str {
        let start = self.line_start(offset);
        let line = &self.text[start..];
        let n = line.len() - line.trim_start_matches([' ', '\t']).len();
        &line[..n]
    }

    /// True when only spaces/tabs precede `offset` on its line.
    pub fn starts_line(&self, offset: usize) -> bool {
        let start = self.line_start(offset);
        self.text[start..offset].chars().all(|c| c == ' ' || c == '\t')
    }

    pub fn slice(&self, span: Span) -> &str {
        &self.text[span.start..span.end]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_index_is_strictly_increasing() {
        let f = SourceFile::new("t.c", "a\nbb\n\nccc\n");
        assert_eq!(f.line_index, vec![0, 2, 5, 6]);
        assert!(f.line_index.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn line_col_mapping() {
        let f = SourceFile::new("t.c", "int a;\n  int b;\n");
        assert_eq!(f.line_col(0), (1, 1));
        assert_eq!(f.line_col(9), (2, 3));
        assert_eq!(f.indent_at(9), "  ");
        assert!(f.starts_line(9));
        assert!(!f.starts_line(13));
        assert_eq!(f.line_end_after(9), 16);
    }
}
