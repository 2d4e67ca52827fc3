mod common;

use std::path::Path;

use common::*;
use dart_omp::cli::main_with;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("dart-omp").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn copy_in(dir: &Path, name: &str) -> String {
    let dst = dir.join(format!("{name}.c"));
    std::fs::copy(corpus_path(name), &dst).unwrap();
    dst.display().to_string()
}

#[test]
fn transform_writes_default_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = copy_in(dir.path(), "loop_kernel");
    let (code, out, err) = run(&["transform", &input]);
    assert_eq!(code, 0, "{err}");
    let written = dir.path().join("loop_kernel.ompdart.c");
    assert!(out.contains(&format!("wrote {}", written.display())), "{out}");
    let expected = std::fs::read_to_string(golden_path("loop_kernel", "ompdart.c")).unwrap();
    assert_eq!(std::fs::read_to_string(written).unwrap(), expected);
}

#[test]
fn transform_honours_output_flag() {
    let dir = tempfile::tempdir().unwrap();
    let input = copy_in(dir.path(), "chain");
    let dest = dir.path().join("out.c");
    let (code, _, err) = run(&["transform", &input, "-o", dest.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(std::fs::read_to_string(dest)
        .unwrap()
        .contains("#pragma omp target data"));
}

#[test]
fn rerunning_on_output_fails_with_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let input = copy_in(dir.path(), "two_kernels");
    assert_eq!(run(&["transform", &input]).0, 0);
    let again = dir.path().join("two_kernels.ompdart.c");
    let (code, _, err) = run(&["transform", again.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(
        err.contains("input already contains '#pragma omp target data'"),
        "{err}"
    );
    assert!(!dir.path().join("two_kernels.ompdart.ompdart.c").exists());
}

#[test]
fn precondition_and_placement_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["already_mapped", "late_decl"] {
        let input = copy_in(dir.path(), name);
        let (code, out, err) = run(&["transform", &input]);
        assert_eq!(code, 1, "{name}");
        assert!(out.is_empty());
        let golden = std::fs::read_to_string(golden_path(name, "err")).unwrap();
        let expected = golden.replacen(&format!("{name}.c"), &input, 1);
        assert_eq!(err, expected);
        assert!(!dir.path().join(format!("{name}.ompdart.c")).exists());
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.c");
    let (code, _, err) = run(&["report", missing.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["transform"]).0, 1);
    assert_eq!(run(&["report", "x.c", "--size", "N"]).0, 1);
    assert_eq!(run(&["report", "x.c", "--hoist", "sideways"]).0, 1);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("transform"));
}

#[test]
fn report_does_not_write() {
    let dir = tempfile::tempdir().unwrap();
    let input = copy_in(dir.path(), "backprop");
    let (code, out, _) = run(&["report", &input]);
    assert_eq!(code, 0);
    assert!(out.contains("update_from(partial_sum)"), "{out}");
    assert!(!dir.path().join("backprop.ompdart.c").exists());
}

#[test]
fn simulate_and_compare_loop_kernel() {
    let input = corpus_path("loop_kernel").display().to_string();
    let (code, out, _) = run(&["simulate", &input, "--mode", "implicit"]);
    assert_eq!(code, 0);
    assert!(out.contains("HtoD          100          40000"), "{out}");
    let (code, out, _) = run(&["compare", &input]);
    assert_eq!(code, 0);
    assert!(out.contains("HtoD bytes ratio 100.00x"), "{out}");
    assert!(out.contains("DtoH bytes ratio 100.00x"), "{out}");
}

#[test]
fn compare_on_annotated_input_uses_it_as_written() {
    let input = corpus_path("nested_from_buggy").display().to_string();
    let (code, out, _) = run(&["compare", &input, "--size", "M=4"]);
    assert_eq!(code, 0);
    assert!(out.contains("stale reads: 4"), "{out}");
}

#[test]
fn dumps_are_printed() {
    let input = corpus_path("loop_kernel").display().to_string();
    let (code, out, _) = run(&["report", &input, "--dump-cfg", "--dump-accesses"]);
    assert_eq!(code, 0);
    assert!(out.contains("function main"), "{out}");
}
