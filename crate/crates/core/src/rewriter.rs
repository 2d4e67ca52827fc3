//! Turn directive plans into edited source text.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use crate::dataflow::{Analysis, DataRegion, FunctionPlan, PlanKind, Position};
use crate::error::{Diagnostic, Error, Result};
use crate::frontend::ast::{NodeId, NodeKind, TranslationUnit};
use crate::frontend::omp::MapType;
use crate::frontend::parse_source;
use crate::source::{SourceFile, Span};

/// Text to add at one byte offset of the original file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub byte_offset: usize,
    pub text: String,
    /// Lines starting inside this span gain one indent unit.
    pub reindent_block: Option<Span>,
}

/// One directive line (or clause list) assembled from every plan at a point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsolidatedDirective {
    pub anchor: NodeId,
    pub position: Position,
    pub text: String,
}

/// Emitted text plus the output ranges that did not come from the input.
#[derive(Debug, Clone, Default)]
pub struct Emitted {
    pub text: String,
    pub inserted: Vec<Range<usize>>,
}

/// Reject inputs that already manage their device data.
pub fn check_precondition(tu: &TranslationUnit, file: &SourceFile) -> Result<()> {
    let a = &tu.ast;
    for n in a.descendants(tu.root) {
        let Some(info) = a.omp(n) else { continue };
        let (l, c) = file.line_col(info.span.start);
        if info.kind.is_data_directive() {
            return Err(Error::Precondition(Diagnostic::error(
                l,
                c,
                format!(
                    "input already contains '#pragma omp {}'; expected code without 'target data' or 'target update' directives",
                    info.kind.name()
                ),
            )));
        }
        if info.kind.is_kernel() && info.clauses_named("map").next().is_some() {
            return Err(Error::Precondition(Diagnostic::error(
                l,
                c,
                "input already contains a map clause on a target construct; expected code without explicit data mappings",
            )));
        }
    }
    Ok(())
}

/// Most common positive step between the indentation of consecutive code lines.
pub fn detect_indent_unit(file: &SourceFile) -> String {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut tabs = 0usize;
    let mut prev = 0usize;
    for line in file.text.lines() {
        let body = line.trim_start_matches([' ', '\t']);
        if body.is_empty() || body.starts_with("//") || body.starts_with('*') {
            continue;
        }
        let ws = &line[..line.len() - body.len()];
        if ws.starts_with('\t') {
            tabs += 1;
        }
        let width = ws.chars().map(|c| if c == '\t' { 8 } else { 1 }).sum::<usize>();
        if width > prev && !ws.starts_with('\t') {
            *counts.entry(width - prev).or_default() += 1;
        }
        prev = width;
    }
    let spaces: usize = counts.values().sum();
    if tabs > spaces {
        return "\t".into();
    }
    match counts.iter().max_by_key(|(w, c)| (**c, std::cmp::Reverse(**w))) {
        Some((&w, _)) if (1..=8).contains(&w) => " ".repeat(w),
        _ => "    ".into(),
    }
}

fn list(names: &[String]) -> String {
    names.join(",")
}

/// Group a function's plans by insertion point.
pub fn consolidate(tu: &TranslationUnit, fp: &FunctionPlan) -> Result<Vec<ConsolidatedDirective>> {
    let a = &tu.ast;
    let mut groups: BTreeMap<(NodeId, Position), BTreeMap<PlanKind, Vec<NodeId>>> = BTreeMap::new();
    for p in &fp.plans {
        if p.position == Position::ClauseOnRegion {
            continue;
        }
        let anchor = match p.position {
            Position::Before | Position::After => lift_anchor(tu, p.anchor),
            _ => p.anchor,
        };
        let slot = groups
            .entry((anchor, p.position))
            .or_default()
            .entry(p.kind)
            .or_default();
        for &v in &p.vars {
            if !slot.contains(&v) {
                slot.push(v);
            }
        }
    }
    let names = |vs: &[NodeId]| -> Vec<String> {
        let mut vs = vs.to_vec();
        vs.sort_by_key(|&v| a.span(v).start);
        vs.iter().map(|&v| a.name(v).unwrap_or_default().to_string()).collect()
    };
    let mut out = Vec::new();
    for ((anchor, position), kinds) in groups {
        if position == Position::ClauseOnKernel {
            let fp_vars = kinds.get(&PlanKind::Firstprivate).cloned().unwrap_or_default();
            out.push(ConsolidatedDirective {
                anchor,
                position,
                text: format!("firstprivate({})", list(&names(&fp_vars))),
            });
            continue;
        }
        let to = kinds.get(&PlanKind::UpdateTo).cloned().unwrap_or_default();
        let from = kinds.get(&PlanKind::UpdateFrom).cloned().unwrap_or_default();
        if let Some(&v) = to.iter().find(|v| from.contains(v)) {
            return Err(Error::Internal(format!(
                "conflicting update directions for '{}' at one insertion point",
                a.name(v).unwrap_or_default()
            )));
        }
        if let Some(k) = kinds
            .keys()
            .find(|k| !matches!(k, PlanKind::UpdateTo | PlanKind::UpdateFrom))
        {
            return Err(Error::Internal(format!(
                "plan kind {} cannot be placed {}",
                k.name(),
                position.name()
            )));
        }
        let mut text = String::from("target update");
        if !to.is_empty() {
            text += &format!(" to({})", list(&names(&to)));
        }
        if !from.is_empty() {
            text += &format!(" from({})", list(&names(&from)));
        }
        out.push(ConsolidatedDirective { anchor, position, text });
    }
    Ok(out)
}

/// Clause list for a data region: one map clause per map type.
pub fn region_clauses(region: &DataRegion) -> String {
    let mut parts: Vec<(MapType, Vec<String>)> = Vec::new();
    for (_, name, t) in &region.maps {
        match parts.last_mut() {
            Some((lt, names)) if lt == t => names.push(name.clone()),
            _ => parts.push((*t, vec![name.clone()])),
        }
    }
    parts
        .iter()
        .map(|(t, n)| format!("map({}:{})", t.as_str(), list(n)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A directive goes before `#pragma omp parallel for`, not between it and its loop.
fn lift_anchor(tu: &TranslationUnit, mut s: NodeId) -> NodeId {
    while let Some(p) = tu.ast.parent(s) {
        if !matches!(tu.ast.kind(p), NodeKind::OmpDirective(_)) {
            break;
        }
        s = p;
    }
    s
}

fn loop_body(tu: &TranslationUnit, l: NodeId) -> Option<NodeId> {
    let slot = match tu.ast.kind(l) {
        NodeKind::ForStmt => 3,
        NodeKind::WhileStmt => 1,
        NodeKind::DoStmt => 0,
        _ => return None,
    };
    tu.ast.child(l, slot)
}

/// Offset just past the last code byte of a pragma line.
fn pragma_code_end(file: &SourceFile, span: Span) -> usize {
    let b = file.text.as_bytes();
    let (mut i, mut end) = (span.start, span.start);
    while i < span.end {
        match b[i] {
            b'/' if b.get(i + 1) == Some(&b'/') => break,
            b'/' if b.get(i + 1) == Some(&b'*') => {
                i = file.text[i + 2..].find("*/").map(|k| i + k + 4).unwrap_or(span.end);
                continue;
            }
            b'\\' if matches!(b.get(i + 1), Some(b'\n' | b'\r')) => {}
            c if !c.is_ascii_whitespace() => end = i + 1,
            _ => {}
        }
        i += 1;
    }
    end
}

/// True when the rest of the line after `off` holds only blanks and comments.
fn rest_is_blank(file: &SourceFile, off: usize) -> bool {
    let line_end = file.text[off..].find('\n').map(|i| off + i).unwrap_or(file.text.len());
    let mut rest = file.text[off..line_end].trim();
    while let Some(r) = rest.strip_prefix("/*") {
        match r.find("*/") {
            Some(k) => rest = r[k + 2..].trim_start(),
            None => return true,
        }
    }
    rest.is_empty() || rest.starts_with("//")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Close,
    Open,
}

/// Something to emit at an offset; sorted by (offset, phase, key).
#[derive(Debug, Clone)]
struct Item {
    offset: usize,
    phase: Phase,
    key: (i64, i64, u8),
    /// Directive lines (without indentation or newline), or raw inline text.
    lines: Vec<String>,
    indent: String,
    raw: bool,
}

struct Planner<'a> {
    tu: &'a TranslationUnit,
    file: &'a SourceFile,
    unit: String,
    blocks: Vec<Span>,
    items: Vec<Item>,
}

impl Planner<'_> {
    fn span(&self, n: NodeId) -> Span {
        self.tu.ast.span(n)
    }

    fn depth(&self, off: usize, exclude: Option<Span>) -> usize {
        self.blocks
            .iter()
            .filter(|b| Some(**b) != exclude && b.start <= off && off < b.end)
            .count()
    }

    fn indent(&self, off: usize, exclude: Option<Span>) -> String {
        format!(
            "{}{}",
            self.file.indent_at(off),
            self.unit.repeat(self.depth(off, exclude))
        )
    }

    fn refuse_macro(&self, n: NodeId) -> Result<()> {
        if self.tu.ast.node(n).from_macro {
            let (l, c) = self.file.line_col(self.span(n).start);
            return Err(Error::Unsupported(Diagnostic::error(
                l,
                c,
                "cannot insert a directive next to a statement that comes from a macro expansion",
            )));
        }
        Ok(())
    }

    fn before_point(&self, s: NodeId) -> usize {
        let start = self.span(s).start;
        if self.file.starts_line(start) {
            self.file.line_start(start)
        } else {
            start
        }
    }

    fn after_point(&self, s: NodeId) -> usize {
        let end = self.span(s).end;
        if rest_is_blank(self.file, end) {
            self.file.line_end_after(end)
        } else {
            end
        }
    }

    fn open(&mut self, s: Span, kind: u8, offset: usize, lines: Vec<String>, indent: String) {
        let key = (s.start as i64, -(s.end as i64), kind);
        self.items.push(Item {
            offset,
            phase: Phase::Open,
            key,
            lines,
            indent,
            raw: false,
        });
    }

    fn close(&mut self, s: Span, kind: u8, offset: usize, lines: Vec<String>, indent: String) {
        let key = (-(s.start as i64), 0, kind);
        self.items.push(Item {
            offset,
            phase: Phase::Close,
            key,
            lines,
            indent,
            raw: false,
        });
    }

    /// Braces around `s`, reindenting it.
    fn wrap(&mut self, s: NodeId) {
        let sp = self.span(s);
        let ind = self.indent(sp.start, Some(sp));
        let at = self.before_point(s);
        self.open(sp, 1, at, vec!["{".into()], ind.clone());
        let at = self.after_point(s);
        self.close(sp, 1, at, vec!["}".into()], ind);
    }

    fn needs_braces(&self, s: NodeId) -> bool {
        !self
            .tu
            .ast
            .parent(s)
            .is_some_and(|p| matches!(self.tu.ast.kind(p), NodeKind::CompoundStmt))
    }

    fn function(&mut self, fp: &FunctionPlan, kernels: usize) -> Result<()> {
        let a = &self.tu.ast;
        let dirs = consolidate(self.tu, fp)?;
        let has_updates = dirs.iter().any(|d| d.position != Position::ClauseOnKernel);
        let mut kernel_clauses: BTreeMap<NodeId, Vec<String>> = BTreeMap::new();
        for d in &dirs {
            if d.position == Position::ClauseOnKernel {
                kernel_clauses.entry(d.anchor).or_default().push(d.text.clone());
            }
        }

        // Statements already inside new braces.
        let mut covered: BTreeSet<(NodeId, Position)> = BTreeSet::new();
        let mut region_wrap = None;
        if let Some(r) = fp.region.as_ref().filter(|r| !r.maps.is_empty()) {
            let clauses = region_clauses(r);
            let single =
                r.begin == r.end && kernels == 1 && !has_updates && a.omp(r.begin).is_some_and(|i| i.kind.is_kernel());
            if single {
                kernel_clauses.entry(r.begin).or_default().insert(0, clauses);
            } else {
                self.refuse_macro(r.begin)?;
                let wrap = r.begin != r.end
                    || dirs.iter().any(|d| {
                        (d.anchor == r.begin && d.position == Position::Before)
                            || (d.anchor == r.end && d.position == Position::After)
                    });
                let header = format!("#pragma omp target data {clauses}");
                let span = Span::new(self.span(r.begin).start, self.span(r.end).end);
                if wrap {
                    self.blocks.push(span);
                    covered.insert((r.begin, Position::Before));
                    covered.insert((r.end, Position::After));
                }
                region_wrap = Some((r.begin, r.end, span, header, wrap));
            }
        }

        // Unbraced statements that need a block for a new directive.
        let mut wraps: BTreeSet<NodeId> = BTreeSet::new();
        for d in &dirs {
            match d.position {
                Position::Before | Position::After => {
                    if !covered.contains(&(d.anchor, d.position)) && self.needs_braces(d.anchor) {
                        wraps.insert(d.anchor);
                    }
                }
                Position::BeginOfBody | Position::EndOfBody => {
                    let Some(body) = loop_body(self.tu, d.anchor) else {
                        return Err(Error::Internal(format!("{} anchor is not a loop", d.position.name())));
                    };
                    if !matches!(a.kind(body), NodeKind::CompoundStmt) {
                        wraps.insert(body);
                    }
                }
                _ => {}
            }
        }
        for &w in &wraps {
            self.refuse_macro(w)?;
            let sp = self.span(w);
            self.blocks.push(sp);
        }
        for &w in &wraps {
            self.wrap(w);
        }

        if let Some((b, e, span, header, wrap)) = region_wrap {
            let ind = self.indent(span.start, Some(span));
            let at = self.before_point(b);
            if wrap {
                self.open(span, 0, at, vec![header, "{".into()], ind.clone());
                let at = self.after_point(e);
                self.close(span, 1, at, vec!["}".into()], ind);
            } else {
                self.open(span, 0, at, vec![header], ind);
            }
        }

        for d in &dirs {
            let line = format!("#pragma omp {}", d.text);
            match d.position {
                Position::Before => {
                    self.refuse_macro(d.anchor)?;
                    let sp = self.span(d.anchor);
                    let at = self.before_point(d.anchor);
                    let ind = self.indent(sp.start, None);
                    self.open(sp, 2, at, vec![line], ind);
                }
                Position::After => {
                    self.refuse_macro(d.anchor)?;
                    let sp = self.span(d.anchor);
                    let at = self.after_point(d.anchor);
                    let ind = self.indent(sp.start, None);
                    self.close(sp, 0, at, vec![line], ind);
                }
                Position::BeginOfBody | Position::EndOfBody => {
                    let body = loop_body(self.tu, d.anchor).expect("checked above");
                    let sp = self.span(body);
                    self.body_point(body, sp, d.position == Position::BeginOfBody, line);
                }
                _ => {}
            }
        }

        for (k, clauses) in kernel_clauses {
            let Some(info) = a.omp(k) else {
                return Err(Error::Internal("clause anchor is not a directive".into()));
            };
            let at = pragma_code_end(self.file, info.span);
            let text = format!(" {}", clauses.join(" "));
            self.items.push(Item {
                offset: at,
                phase: Phase::Open,
                key: (0, 0, 0),
                lines: vec![text],
                indent: String::new(),
                raw: true,
            });
        }
        Ok(())
    }

    fn body_point(&mut self, body: NodeId, sp: Span, begin: bool, line: String) {
        let a = &self.tu.ast;
        if !matches!(a.kind(body), NodeKind::CompoundStmt) {
            // the body is wrapped in new braces
            let ind = self.indent(sp.start, None);
            if begin {
                let at = self.before_point(body);
                self.open(sp, 2, at, vec![line], ind);
            } else {
                let at = self.after_point(body);
                self.close(sp, 0, at, vec![line], ind);
            }
            return;
        }
        let first = a.children(body).next();
        let ind = match first {
            Some(c) => self.indent(self.span(c).start, None),
            None => format!("{}{}", self.indent(sp.start, None), self.unit),
        };
        if begin {
            let brace = sp.start + 1;
            let at = if rest_is_blank(self.file, brace) {
                self.file.line_end_after(brace)
            } else {
                brace
            };
            self.open(sp, 2, at, vec![line], ind);
        } else {
            let brace = sp.end - 1;
            let at = if self.file.starts_line(brace) {
                self.file.line_start(brace)
            } else {
                brace
            };
            self.close(sp, 0, at, vec![line], ind);
        }
    }
}

/// Plan every insertion for an analysis.
pub fn place(tu: &TranslationUnit, file: &SourceFile, analysis: &Analysis) -> Result<Vec<Insertion>> {
    let mut p = Planner {
        tu,
        file,
        unit: detect_indent_unit(file),
        blocks: Vec::new(),
        items: Vec::new(),
    };
    for (fp, cfg) in analysis.functions.iter().zip(&analysis.cfgs) {
        p.function(fp, cfg.kernels.len())?;
    }
    let mut items = p.items;
    items.sort_by_key(|x| (x.offset, x.phase, x.key));
    let mut out: Vec<Insertion> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let off = items[i].offset;
        let mut j = i;
        while j < items.len() && items[j].offset == off {
            j += 1;
        }
        let group = &items[i..j];
        let mut text = String::new();
        let at_line_start = off == 0 || file.text.as_bytes()[off - 1] == b'\n';
        for it in group.iter().filter(|it| it.raw) {
            text += &it.lines.concat();
        }
        let lines: Vec<String> = group
            .iter()
            .filter(|it| !it.raw)
            .flat_map(|it| it.lines.iter().map(move |l| format!("{}{l}", it.indent)))
            .collect();
        if !lines.is_empty() {
            if at_line_start {
                for l in &lines {
                    text += l;
                    text.push('\n');
                }
            } else {
                text.push('\n');
                text += &lines.join("\n");
                text.push('\n');
                if off < file.text.len() {
                    text += &group
                        .iter()
                        .rev()
                        .find(|it| !it.raw)
                        .map(|it| it.indent.clone())
                        .unwrap_or_default();
                }
            }
        }
        out.push(Insertion {
            byte_offset: off,
            text,
            reindent_block: None,
        });
        i = j;
    }
    for b in p.blocks {
        out.push(Insertion {
            byte_offset: b.start,
            text: String::new(),
            reindent_block: Some(b),
        });
    }
    out.sort_by_key(|x| (x.byte_offset, x.reindent_block.is_some()));
    Ok(out)
}

/// Apply insertions to the original text.
pub fn emit(file: &SourceFile, insertions: &[Insertion], unit: &str) -> Result<Emitted> {
    let text = &file.text;
    let blocks: Vec<Span> = insertions.iter().filter_map(|i| i.reindent_block).collect();
    for (i, x) in blocks.iter().enumerate() {
        for y in &blocks[i + 1..] {
            let disjoint = x.end <= y.start || y.end <= x.start;
            if !disjoint && !x.contains(*y) && !y.contains(*x) {
                return Err(Error::Internal(format!("overlapping reindent blocks {x:?} and {y:?}")));
            }
        }
    }
    // (offset, inserted text); indentation follows inserted lines at a line start.
    let mut points: Vec<(usize, u8, String)> = Vec::new();
    for ins in insertions {
        if ins.byte_offset > text.len() || !text.is_char_boundary(ins.byte_offset) {
            return Err(Error::Internal(format!(
                "insertion offset {} out of range",
                ins.byte_offset
            )));
        }
        if !ins.text.is_empty() {
            points.push((ins.byte_offset, 0, ins.text.clone()));
        }
    }
    let mut line_start = 0;
    while line_start < text.len() {
        let line_end = text[line_start..]
            .find('\n')
            .map(|i| line_start + i)
            .unwrap_or(text.len());
        if !text[line_start..line_end].trim().is_empty() {
            let depth = blocks
                .iter()
                .filter(|b| b.start < line_start && line_start < b.end)
                .count();
            let first_line = blocks
                .iter()
                .filter(|b| file.starts_line(b.start) && file.line_start(b.start) == line_start)
                .count();
            let n = depth + first_line;
            if n > 0 {
                points.push((line_start, 1, unit.repeat(n)));
            }
        }
        line_start = line_end + 1;
    }
    points.sort_by_key(|p| (p.0, p.1));
    let mut out = Emitted::default();
    let mut pos = 0;
    for (off, _, t) in points {
        out.text.push_str(&text[pos..off]);
        let s = out.text.len();
        out.text.push_str(&t);
        out.inserted.push(s..out.text.len());
        pos = off;
    }
    out.text.push_str(&text[pos..]);
    Ok(out)
}

/// Full rewrite of one file; the result re-parses.
pub fn rewrite(tu: &TranslationUnit, file: &SourceFile, analysis: &Analysis) -> Result<Emitted> {
    check_precondition(tu, file)?;
    let insertions = place(tu, file, analysis)?;
    let out = emit(file, &insertions, &detect_indent_unit(file))?;
    let check = SourceFile::new(file.path.clone(), out.text.clone());
    if let Err(e) = parse_source(&check) {
        return Err(Error::Internal(format!("rewritten output does not parse: {e}")));
    }
    Ok(out)
}

/// Default output path: `<input>.ompdart.c`.
pub fn default_output_path(input: &std::path::Path) -> std::path::PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    input.with_file_name(format!("{stem}.ompdart.c"))
}
