#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use dart_omp::bounds::find_update_insert_loc;
use dart_omp::dataflow::{analyze, Analysis, Options};
use dart_omp::frontend::ast::{NodeKind, TranslationUnit};
use dart_omp::frontend::parse_source;
use dart_omp::rewriter::{rewrite, Emitted};
use dart_omp::simulator::{simulate, SimConfig, SimMode, TransferLog};
use dart_omp::{Result, SourceFile};

/// Corpus programs the tool rewrites.
pub const TRANSFORMABLE: &[&str] = &[
    "loop_kernel",
    "two_kernels",
    "host_sum_loop",
    "half_bounds",
    "callee_read",
    "backprop",
    "single_kernel",
    "chain",
    "loop_carried",
    "interproc",
    "const_pointer",
    "war_waw",
    "while_flag",
    "do_converge",
    "switch_phase",
    "lulesh",
];

/// Corpus programs the tool must refuse.
pub const REJECTED: &[&str] = &["already_mapped", "late_decl", "nested_from_buggy", "nested_from_fixed"];

pub fn corpus_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/corpus")
        .join(format!("{name}.c"))
}

pub fn golden_path(name: &str, ext: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.{ext}"))
}

/// Corpus file with a short display path, so rendered diagnostics are stable.
pub fn corpus(name: &str) -> SourceFile {
    let text = std::fs::read_to_string(corpus_path(name)).unwrap();
    SourceFile::new(format!("{name}.c"), text)
}

pub fn sizes() -> BTreeMap<String, i64> {
    [
        ("M", 5),
        ("hid", 16),
        ("num_blocks", 8),
        ("partial_sum", 128),
        ("input_units", 128),
        ("input_weights", 2048),
        ("hidden_units", 17),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub struct Transformed {
    pub tu: TranslationUnit,
    pub analysis: Analysis,
    pub emitted: Emitted,
}

pub fn transform_with(file: &SourceFile, opts: &Options) -> Result<Transformed> {
    let tu = parse_source(file)?;
    let analysis = analyze(&tu, file, opts)?;
    let emitted = rewrite(&tu, file, &analysis)?;
    Ok(Transformed { tu, analysis, emitted })
}

pub fn transform(file: &SourceFile) -> Result<Transformed> {
    transform_with(file, &Options::default())
}

pub fn sim(file: &SourceFile, mode: SimMode, sizes: &BTreeMap<String, i64>) -> TransferLog {
    let tu = parse_source(file).unwrap();
    simulate(
        &tu,
        file,
        &SimConfig {
            sizes: sizes.clone(),
            mode,
            ..SimConfig::default()
        },
    )
    .unwrap()
}

/// Implicit log of the input and annotated log of its transformed output.
pub fn implicit_vs_transformed(
    name: &str,
    opts: &Options,
    sizes: &BTreeMap<String, i64>,
) -> (TransferLog, TransferLog) {
    let file = corpus(name);
    let t = transform_with(&file, opts).unwrap();
    let out = SourceFile::new(format!("{name}.ompdart.c"), t.emitted.text);
    (
        sim(&file, SimMode::Implicit, sizes),
        sim(&out, SimMode::Annotated, sizes),
    )
}

/// Text left after deleting every inserted range.
pub fn strip_inserted(e: &Emitted) -> String {
    let mut out = String::new();
    let mut at = 0;
    for r in &e.inserted {
        out.push_str(&e.text[at..r.start]);
        at = r.end;
    }
    out.push_str(&e.text[at..]);
    out
}

/// A random `for` nest around one array read.
#[derive(Debug, Clone)]
pub struct Nest {
    /// Per level, outermost first: does the loop have a recognisable index variable.
    pub valid: Vec<bool>,
    /// Levels whose index variable appears in the subscript.
    pub subscript: BTreeSet<usize>,
    /// Subscript also mentions a non-loop variable.
    pub extra: bool,
    pub lim: Lim,
}

#[derive(Debug, Clone, Copy)]
pub enum Lim {
    Zero,
    AtLevel(usize),
    InsideLevel(usize),
    End,
}

pub struct RenderedNest {
    pub src: String,
    pub starts: Vec<usize>,
    pub lim: usize,
}

pub fn render(n: &Nest) -> RenderedNest {
    let mut src = String::from("void f(float *a, int n, int m) {\n  float s = 0;\n");
    let mut starts = Vec::new();
    for (k, &ok) in n.valid.iter().enumerate() {
        src.push_str(&"  ".repeat(k + 1));
        starts.push(src.len());
        let cond = if ok { format!("i{k}") } else { "m".to_string() };
        src.push_str(&format!("for (int i{k} = 0; {cond} < n; i{k}++) {{\n"));
    }
    let mut terms: Vec<String> = n.subscript.iter().map(|k| format!("i{k}")).collect();
    if n.extra {
        terms.push("m".into());
    }
    if terms.is_empty() {
        terms.push("3".into());
    }
    src.push_str(&"  ".repeat(n.valid.len() + 1));
    src.push_str(&format!("s += a[{}];\n", terms.join(" + ")));
    for k in (0..n.valid.len()).rev() {
        src.push_str(&"  ".repeat(k + 1));
        src.push_str("}\n");
    }
    src.push_str("}\n");
    let lim = match n.lim {
        Lim::Zero => 0,
        Lim::AtLevel(k) => starts[k.min(starts.len() - 1)],
        Lim::InsideLevel(k) => starts[k.min(starts.len() - 1)] + 1,
        Lim::End => src.len(),
    };
    RenderedNest { src, starts, lim }
}

/// Transcription of the insertion-point procedure on the nest model.
/// `None` stands for the access itself, `Some(k)` for the loop at level `k`.
pub fn insert_loc_oracle(n: &Nest, r: &RenderedNest) -> Option<usize> {
    let indexing_vars = &n.subscript;
    let mut pos = None;
    let mut loops: Vec<usize> = (0..n.valid.len()).collect();
    while let Some(for_stmt) = loops.pop() {
        if r.starts[for_stmt] < r.lim {
            break;
        }
        let for_idx_var = if n.valid[for_stmt] { Some(for_stmt) } else { None };
        let Some(v) = for_idx_var else { continue };
        if indexing_vars.contains(&v) {
            pos = Some(for_stmt);
        }
    }
    pos
}

/// The library's answer on the parsed nest, in the oracle's terms.
pub fn insert_loc_impl(r: &RenderedNest) -> Option<usize> {
    let tu = parse_source(&SourceFile::new("nest.c", r.src.clone())).unwrap();
    let a = &tu.ast;
    let all = a.descendants(tu.root);
    let loops: Vec<_> = all
        .iter()
        .copied()
        .filter(|&x| matches!(a.kind(x), NodeKind::ForStmt))
        .collect();
    let sub = all
        .iter()
        .copied()
        .find(|&x| matches!(a.kind(x), NodeKind::ArraySubscript))
        .unwrap();
    let idx = a.child(sub, 1).unwrap();
    let pos = find_update_insert_loc(&tu, sub, &[idx], &loops, r.lim);
    if pos == sub {
        return None;
    }
    let start = a.span(pos).start;
    Some(
        r.starts
            .iter()
            .position(|&s| s == start)
            .expect("result is one of the nest's loops"),
    )
}

pub fn random_nest(rng: &mut impl rand::Rng) -> Nest {
    let depth = rng.gen_range(1..=4);
    let valid = (0..depth).map(|_| rng.gen_bool(0.8)).collect();
    let subscript = (0..depth).filter(|_| rng.gen_bool(0.5)).collect();
    let lim = match rng.gen_range(0..4) {
        0 => Lim::Zero,
        1 => Lim::AtLevel(rng.gen_range(0..depth)),
        2 => Lim::InsideLevel(rng.gen_range(0..depth)),
        _ => Lim::End,
    };
    Nest {
        valid,
        subscript,
        extra: rng.gen_bool(0.3),
        lim,
    }
}

/// Read-only scalars consumed by each kernel, in source order, read off the corpus sources.
pub const FIRSTPRIVATE: &[(&str, &[&str])] = &[
    ("backprop", &["hid,num_blocks", "hid,num_blocks"]),
    ("chain", &["scale"]),
    ("const_pointer", &["f,n", "d"]),
    ("callee_read", &["r"]),
    ("single_kernel", &["a,n"]),
    ("switch_phase", &["step"]),
    (
        "lulesh",
        &[
            "numElem",
            "numNode",
            "numNode",
            "numNode,deltatime",
            "numElem",
            "numElem",
            "numElem",
            "numElem",
            "numNode",
            "numNode",
        ],
    ),
    ("loop_kernel", &[]),
    ("war_waw", &[]),
];

/// Contents of every `firstprivate(...)` clause, in text order.
pub fn firstprivate_lists(text: &str) -> Vec<&str> {
    text.match_indices("firstprivate(")
        .map(|(i, m)| {
            let rest = &text[i + m.len()..];
            &rest[..rest.find(')').unwrap()]
        })
        .collect()
}

pub fn pragma_lines(s: &str) -> Vec<&str> {
    s.lines()
        .map(str::trim)
        .filter(|l| l.starts_with("#pragma omp"))
        .collect()
}
