use std::fs;
use std::path::PathBuf;

use tablepipe_core::codegen::{emit, normalize_whitespace, BackendDialect, EmitOptions};
use tablepipe_core::dsl::{parse_program, PipelineProgram};

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../testdata/golden")
        .join(name);
    fs::read_to_string(p).unwrap()
}

fn program(id: &str, sources: &[&str]) -> PipelineProgram {
    parse_program(&golden(&format!("{id}_program.json")))
        .unwrap()
        .with_sources(sources.iter().map(|s| s.to_string()).collect())
}

fn check(id: &str, sources: &[&str]) {
    let p = program(id, sources);
    let code = emit(&p, BackendDialect::DataframeChain, &EmitOptions::default()).text;
    let want = golden(&format!("{id}_code.txt"));
    assert_eq!(
        normalize_whitespace(&code),
        normalize_whitespace(&want),
        "emitted:\n{code}"
    );
}

#[test]
fn listing_golden() {
    check("listing", &["table_1"]);
}

#[test]
fn e001_golden() {
    check("E001", &["table_1"]);
}

#[test]
fn m001_golden() {
    check("M001", &["table_1"]);
}

#[test]
fn h001_golden() {
    check("H001", &["table_1", "table_2"]);
}

#[test]
fn listing_layout_matches_exactly() {
    let p = program("listing", &["table_1"]);
    let code = emit(&p, BackendDialect::DataframeChain, &EmitOptions::default()).text;
    assert_eq!(code, golden("listing_code.txt").trim_end());
}

#[test]
fn annotations_are_trailing_comments() {
    let p = program("M001", &["table_1"]);
    let opts = EmitOptions {
        annotate: true,
        schema: None,
    };
    let code = emit(&p, BackendDialect::DataframeChain, &opts).text;
    assert!(code.contains("# op 1: filter"));
    assert!(code.contains("# op 4: sort"));
}

#[test]
fn sql_m001_uses_ctes() {
    let p = program("M001", &["table_1"]);
    let sql = emit(&p, BackendDialect::Sql, &EmitOptions::default()).text;
    assert!(sql.starts_with("WITH\n"));
    assert!(sql.contains("step_1 AS (\n        SELECT * FROM \"table_1\" WHERE \"Year\" <> 2013"));
    assert!(sql.contains("MIN(\"Number of Contestants\") AS \"Number of Contestants\""));
    assert!(sql.trim_end().ends_with("SELECT * FROM step_4;"));
}

#[test]
fn sql_unsupported_step_becomes_comment() {
    let p = parse_program(
        r#"[{"op":"topk","params":{"k":2}},{"op":"explode","params":{"column":"x","split_comma":true}}]"#,
    )
    .unwrap()
    .with_sources(vec!["table_1".into()]);
    let sql = emit(&p, BackendDialect::Sql, &EmitOptions::default()).text;
    assert!(sql.contains("-- explode: unsupported in SQL backend"));
    assert!(sql.contains("SELECT * FROM \"table_1\" LIMIT 2"));
}
