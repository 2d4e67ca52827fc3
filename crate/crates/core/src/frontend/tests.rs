use super::*;
use crate::error::Error;

fn parse(src: &str) -> TranslationUnit {
    parse_source(&SourceFile::new("t.c", src)).unwrap_or_else(|e| panic!("{}", e.render("t.c")))
}

fn find(tu: &TranslationUnit, pred: impl Fn(&NodeKind) -> bool) -> Vec<NodeId> {
    tu.ast
        .descendants(tu.root)
        .into_iter()
        .filter(|&n| pred(tu.ast.kind(n)))
        .collect()
}

#[test]
fn loop_nest_shape_parses() {
    let src = "#define N 100\nint main() {\n  int a[N];\n  for (int i = 0; i < 10; i++) {\n    #pragma omp target teams distribute parallel for\n    for (int j = 0; j < N; j++)\n      a[j] += j;\n  }\n  return a[0];\n}\n";
    let tu = parse(src);
    let decls = find(&tu, |k| matches!(k, NodeKind::VarDecl { name, .. } if name == "a"));
    assert_eq!(decls.len(), 1);
    let ty = tu.ast.node(decls[0]).type_info.clone().unwrap();
    assert_eq!(ty.dims, vec![Dim::Const(100)]);
    let kernels: Vec<_> = find(&tu, |k| matches!(k, NodeKind::OmpDirective(_)));
    assert_eq!(kernels.len(), 1);
    assert!(tu.ast.is_kernel(kernels[0]));
    let body = tu.ast.child(kernels[0], 0).unwrap();
    assert!(matches!(tu.ast.kind(body), NodeKind::ForStmt));
    assert_eq!(tu.defines.get("N"), Some(&100));
}

#[test]
fn decl_refs_resolve_to_innermost_scope() {
    let tu = parse("int x;\nvoid f(int x) { { int x; x = 1; } x = 2; }\nint g() { return x; }");
    let refs = find(&tu, |k| matches!(k, NodeKind::DeclRef { name, .. } if name == "x"));
    assert_eq!(refs.len(), 3);
    let kinds: Vec<_> = refs
        .iter()
        .map(|&r| match tu.ast.kind(r) {
            NodeKind::DeclRef { decl: Some(d), .. } => tu.ast.kind(*d).clone(),
            other => panic!("{other:?}"),
        })
        .collect();
    assert!(matches!(
        kinds[0],
        NodeKind::VarDecl {
            storage: Storage::Local,
            ..
        }
    ));
    assert!(matches!(kinds[1], NodeKind::ParamDecl { .. }));
    assert!(matches!(
        kinds[2],
        NodeKind::VarDecl {
            storage: Storage::Global,
            ..
        }
    ));
}

#[test]
fn array_params_decay() {
    let tu = parse("void f(float a[], double b[4][8], const int *c) {}");
    let params: Vec<_> = find(&tu, |k| matches!(k, NodeKind::ParamDecl { .. }));
    let tys: Vec<_> = params
        .iter()
        .map(|&p| tu.ast.node(p).type_info.clone().unwrap())
        .collect();
    assert_eq!(tys[0].pointer_depth, 1);
    assert!(tys[0].dims.is_empty());
    assert_eq!(tys[1].pointer_depth, 1);
    assert_eq!(tys[1].dims, vec![Dim::Const(8)]);
    assert!(tys[2].is_const && tys[2].is_pointer());
}

#[test]
fn multi_declarators_share_one_decl_stmt() {
    let tu = parse("int main() { int i = 0, *p, a[3]; return i; }");
    let ds = find(&tu, |k| matches!(k, NodeKind::DeclStmt));
    assert_eq!(tu.ast.children(ds[0]).count(), 3);
}

#[test]
fn precedence_and_assoc() {
    let tu = parse("int f() { return 1 + 2 * 3 - 4; }");
    let ret = find(&tu, |k| matches!(k, NodeKind::ReturnStmt))[0];
    let e = tu.ast.child(ret, 0).unwrap();
    assert_eq!(tu.ast.eval_const(e, &|_| None), Some(3));
    assert!(matches!(tu.ast.kind(e), NodeKind::BinaryOp(BinOp::Sub)));
}

#[test]
fn spans_cover_statements() {
    let src = "int main() {\n  int x = 1;\n  x += 2;\n  return x;\n}\n";
    let tu = parse(src);
    let f = SourceFile::new("t.c", src);
    let es = find(&tu, |k| matches!(k, NodeKind::ExprStmt))[0];
    assert_eq!(f.slice(tu.ast.span(es)), "x += 2;");
    let ds = find(&tu, |k| matches!(k, NodeKind::DeclStmt))[0];
    assert_eq!(f.slice(tu.ast.span(ds)), "int x = 1;");
}

#[test]
fn parents_are_linked() {
    let tu = parse("int main() { int a[2]; a[0] = 1; return 0; }");
    for n in tu.ast.descendants(tu.root) {
        for c in tu.ast.children(n) {
            assert_eq!(tu.ast.parent(c), Some(n));
        }
    }
}

#[test]
fn standalone_directives_have_no_child() {
    let tu = parse("int main() { int a[4];\n#pragma omp target update from(a)\n a[0] = 1; return 0; }");
    let d = find(&tu, |k| matches!(k, NodeKind::OmpDirective(_)))[0];
    assert!(tu.ast.child(d, 0).is_none());
}

#[test]
fn struct_members_and_access() {
    let tu = parse("struct P { double x; int n[4]; };\nstruct P g;\nint main() { g.n[1] = 3; return g.n[1]; }");
    assert_eq!(tu.struct_members("P").unwrap().len(), 2);
    let sub = find(&tu, |k| matches!(k, NodeKind::ArraySubscript))[0];
    assert_eq!(tu.ast.node(sub).type_info.as_ref().unwrap().base, BaseType::Int);
}

#[test]
fn unsupported_constructs() {
    for src in [
        "int main() { goto x; }",
        "typedef int T;",
        "union U { int a; };",
        "enum E { A };",
    ] {
        let e = parse_source(&SourceFile::new("t.c", src)).unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)), "{src}: {e}");
    }
}

#[test]
fn syntax_errors_carry_location() {
    let e = parse_source(&SourceFile::new("t.c", "int main() {\n  int x = ;\n}\n")).unwrap_err();
    let d = e.diagnostic().unwrap();
    assert_eq!(d.line, 2);
    assert!(matches!(e, Error::Syntax(_)));
}

#[test]
fn unbound_names_are_unresolved() {
    let tu = parse("void f(float *a) { for (int i = 0; i < n; i++) a[i] = 0; }");
    let r = find(&tu, |k| matches!(k, NodeKind::DeclRef { name, .. } if name == "n"))[0];
    assert!(matches!(tu.ast.kind(r), NodeKind::DeclRef { decl: None, .. }));
}

#[test]
fn macro_origin_is_flagged() {
    let tu = parse("#define ONE 1\nint main() { ONE; return 0; }");
    let es = find(&tu, |k| matches!(k, NodeKind::ExprStmt))[0];
    assert!(tu.ast.node(es).from_macro);
}

#[test]
fn casts_sizeof_conditional() {
    let tu = parse("#include <stdlib.h>\nint main() { float *p = (float *) malloc(10 * sizeof(float)); int m = 1 ? 2 : 3; free(p); return m; }");
    assert_eq!(find(&tu, |k| matches!(k, NodeKind::Cast)).len(), 1);
    let so = find(&tu, |k| matches!(k, NodeKind::SizeOf))[0];
    assert_eq!(tu.ast.eval_const(so, &|_| None), Some(4));
    assert_eq!(tu.warnings.len(), 1);
}
