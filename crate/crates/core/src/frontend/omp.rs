//! OpenMP pragma-line parsing: directive kind by longest name prefix, then
//! `name` / `name(args)` clauses.

use std::fmt;

use crate::error::{Diagnostic, Error, Result};
use crate::source::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectiveKind {
    Target,
    TargetParallel,
    TargetParallelFor,
    TargetParallelForSimd,
    TargetParallelLoop,
    TargetSimd,
    TargetTeams,
    TargetTeamsDistribute,
    TargetTeamsDistributeParallelFor,
    TargetTeamsDistributeParallelForSimd,
    TargetTeamsDistributeSimd,
    TargetTeamsLoop,
    TargetData,
    TargetEnterData,
    TargetExitData,
    TargetUpdate,
    NonTarget,
}

/// Directive names, longest first so prefix matching picks the longest.
const DIRECTIVE_NAMES: &[(&str, DirectiveKind)] = &[
    (
        "target teams distribute parallel for simd",
        DirectiveKind::TargetTeamsDistributeParallelForSimd,
    ),
    (
        "target teams distribute parallel for",
        DirectiveKind::TargetTeamsDistributeParallelFor,
    ),
    ("target teams distribute simd", DirectiveKind::TargetTeamsDistributeSimd),
    ("target teams distribute", DirectiveKind::TargetTeamsDistribute),
    ("target parallel for simd", DirectiveKind::TargetParallelForSimd),
    ("target teams loop", DirectiveKind::TargetTeamsLoop),
    ("target parallel for", DirectiveKind::TargetParallelFor),
    ("target parallel loop", DirectiveKind::TargetParallelLoop),
    ("target enter data", DirectiveKind::TargetEnterData),
    ("target exit data", DirectiveKind::TargetExitData),
    ("target parallel", DirectiveKind::TargetParallel),
    ("target teams", DirectiveKind::TargetTeams),
    ("target simd", DirectiveKind::TargetSimd),
    ("target update", DirectiveKind::TargetUpdate),
    ("target data", DirectiveKind::TargetData),
    ("target", DirectiveKind::Target),
];

impl DirectiveKind {
    pub fn name(self) -> &'static str {
        DIRECTIVE_NAMES
            .iter()
            .find(|(_, k)| *k == self)
            .map(|(n, _)| *n)
            .unwrap_or("non-target")
    }

    /// One of the target constructs that launches a device kernel.
    pub fn is_kernel(self) -> bool {
        !self.is_data_directive() && self != DirectiveKind::NonTarget
    }

    /// True for directives that carry no associated statement.
    pub fn is_standalone(self) -> bool {
        matches!(
            self,
            DirectiveKind::TargetUpdate | DirectiveKind::TargetEnterData | DirectiveKind::TargetExitData
        )
    }

    pub fn is_data_directive(self) -> bool {
        matches!(
            self,
            DirectiveKind::TargetData
                | DirectiveKind::TargetEnterData
                | DirectiveKind::TargetExitData
                | DirectiveKind::TargetUpdate
        )
    }
}

impl fmt::Display for DirectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub name: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmpDirectiveInfo {
    pub kind: DirectiveKind,
    /// Directive words as written (`parallel for`, `declare target`, ...).
    pub name: String,
    pub clauses: Vec<Clause>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MapType {
    To,
    From,
    ToFrom,
    Alloc,
    Release,
    Delete,
}

impl MapType {
    pub fn parse(s: &str) -> Option<MapType> {
        Some(match s {
            "to" => MapType::To,
            "from" => MapType::From,
            "tofrom" => MapType::ToFrom,
            "alloc" => MapType::Alloc,
            "release" => MapType::Release,
            "delete" => MapType::Delete,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MapType::To => "to",
            MapType::From => "from",
            MapType::ToFrom => "tofrom",
            MapType::Alloc => "alloc",
            MapType::Release => "release",
            MapType::Delete => "delete",
        }
    }

    pub fn copies_in(self) -> bool {
        matches!(self, MapType::To | MapType::ToFrom)
    }

    pub fn copies_out(self) -> bool {
        matches!(self, MapType::From | MapType::ToFrom)
    }
}

/// A variable list item with its root variable name (`a[0:n]` -> `a`).
pub fn list_item_root(item: &str) -> &str {
    let item = item.trim();
    let end = item
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(item.len());
    &item[..end]
}

impl Clause {
    /// Interpret a `map` clause: `(modifiers, type: list)`; the type defaults to tofrom.
    pub fn map_parts(&self) -> (MapType, bool, Vec<String>) {
        let joined = self.args.join(",");
        let (head, list) = match find_top_level(&joined, ':') {
            Some(i) => (&joined[..i], &joined[i + 1..]),
            None => ("", joined.as_str()),
        };
        let mut ty = MapType::ToFrom;
        let mut always = false;
        for w in head.split([',', ' ']).filter(|w| !w.is_empty()) {
            if w == "always" {
                always = true;
            } else if let Some(t) = MapType::parse(w) {
                ty = t;
            }
        }
        let vars = split_top_level(list, ',')
            .into_iter()
            .map(|s| list_item_root(s).to_string())
            .filter(|s| !s.is_empty())
            .collect();
        (ty, always, vars)
    }

    /// Root names of a plain variable list (`firstprivate(a, b)`), or of the
    /// list after `op:` for `reduction`.
    pub fn var_list(&self) -> Vec<String> {
        let joined = self.args.join(",");
        let list = if self.name == "reduction" || self.name == "to" || self.name == "from" {
            match find_top_level(&joined, ':') {
                Some(i) if self.name == "reduction" || !joined[..i].contains('[') => &joined[i + 1..],
                _ => joined.as_str(),
            }
        } else {
            joined.as_str()
        };
        split_top_level(list, ',')
            .into_iter()
            .map(|s| list_item_root(s).to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }
}

impl OmpDirectiveInfo {
    pub fn clauses_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Clause> + 'a {
        self.clauses.iter().filter(move |c| c.name == name)
    }

    /// Variables named in any clause with the given name.
    pub fn vars_in(&self, name: &str) -> Vec<String> {
        let mut out = Vec::new();
        for c in self.clauses_named(name) {
            if name == "map" {
                out.extend(c.map_parts().2);
            } else {
                out.extend(c.var_list());
            }
        }
        out
    }

    pub fn collapse(&self) -> usize {
        self.clauses_named("collapse")
            .filter_map(|c| c.args.first().and_then(|a| a.trim().parse().ok()))
            .next()
            .unwrap_or(1)
    }
}

fn find_top_level(s: &str, needle: char) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if c == needle && depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() {
        out.push(last);
    }
    out
}

/// Parse a normalized `#pragma omp ...` line. `line` is used for diagnostics.
pub fn parse_omp_pragma(pragma_text: &str, span: Span, line: usize) -> Result<OmpDirectiveInfo> {
    let err = |msg: String| Error::Syntax(Diagnostic::error(line, 1, msg));
    let rest = pragma_text
        .trim()
        .strip_prefix('#')
        .map(str::trim_start)
        .and_then(|s| s.strip_prefix("pragma"))
        .map(str::trim_start)
        .and_then(|s| s.strip_prefix("omp"))
        .ok_or_else(|| err(format!("not an OpenMP pragma: {pragma_text}")))?;
    let rest = rest.trim();

    // Directive words are the leading identifiers that are not followed by '('.
    let mut words = Vec::new();
    let mut cursor = rest;
    loop {
        let t = cursor.trim_start();
        let end = t
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(t.len());
        if end == 0 {
            break;
        }
        let after = t[end..].trim_start();
        if after.starts_with('(') || (!words.is_empty() && is_clause_name(&t[..end])) {
            break;
        }
        words.push(&t[..end]);
        cursor = &t[end..];
    }
    let name = words.join(" ");
    let kind = DIRECTIVE_NAMES
        .iter()
        .find(|(n, _)| {
            let nw: Vec<_> = n.split(' ').collect();
            words.len() >= nw.len() && words[..nw.len()] == nw[..]
        })
        .map(|(_, k)| *k)
        .unwrap_or(DirectiveKind::NonTarget);
    let name_len = DIRECTIVE_NAMES
        .iter()
        .find(|(_, k)| *k == kind)
        .map(|(n, _)| n.split(' ').count());
    // Words beyond the matched directive name are argument-less clauses (e.g. `nowait`).
    let mut clauses = Vec::new();
    if let Some(n) = name_len {
        for w in &words[n..] {
            clauses.push(Clause {
                name: w.to_string(),
                args: Vec::new(),
            });
        }
    }

    let mut s = cursor.trim_start();
    while !s.is_empty() {
        if let Some(r) = s.strip_prefix(',') {
            s = r.trim_start();
            continue;
        }
        let end = s
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(s.len());
        if end == 0 {
            return Err(err(format!("malformed clause near '{s}'")));
        }
        let cname = &s[..end];
        let after = s[end..].trim_start();
        if let Some(body) = after.strip_prefix('(') {
            let mut depth = 1i32;
            let mut close = None;
            for (i, c) in body.char_indices() {
                match c {
                    '(' => depth += 1,
                    ')' => {
                        depth -= 1;
                        if depth == 0 {
                            close = Some(i);
                            break;
                        }
                    }
                    _ => {}
                }
            }
            let close = close.ok_or_else(|| err(format!("unbalanced parentheses in clause '{cname}'")))?;
            let args = split_top_level(&body[..close], ',')
                .into_iter()
                .map(str::to_string)
                .collect();
            clauses.push(Clause {
                name: cname.to_string(),
                args,
            });
            s = body[close + 1..].trim_start();
        } else {
            clauses.push(Clause {
                name: cname.to_string(),
                args: Vec::new(),
            });
            s = after;
        }
        if s.starts_with(')') {
            return Err(err("unbalanced ')' in pragma".to_string()));
        }
    }
    Ok(OmpDirectiveInfo {
        kind,
        name,
        clauses,
        span,
    })
}

fn is_clause_name(w: &str) -> bool {
    matches!(
        w,
        "nowait" | "untied" | "mergeable" | "nogroup" | "inbranch" | "notinbranch"
    )
}
