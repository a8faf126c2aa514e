use std::path::PathBuf;

use proptest::prelude::*;
use tablepipe_core::dsl::{parse_program, PipelineProgram};
use tablepipe_core::interp::{run, ErrorCategory};
use tablepipe_core::table::{
    ingest_csv, Column, ColumnType, CurationOptions, Table, TableSet, Value,
};

fn golden(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/golden").join(file)
}

fn load(file: &str, name: &str) -> Table {
    ingest_csv(golden(file), name, &CurationOptions::default()).unwrap()
}

fn program(file: &str) -> PipelineProgram {
    parse_program(&std::fs::read_to_string(golden(file)).unwrap()).unwrap()
}

/// Ordered comparison: text exact, reals within 1e-5.
fn assert_same_rows(actual: &Table, expected: &Table) {
    let names = |t: &Table| t.columns().iter().map(|c| c.name.clone()).collect::<Vec<_>>();
    assert_eq!(names(actual), names(expected));
    assert_eq!(actual.num_rows(), expected.num_rows(), "{actual:?}");
    for (ra, re) in actual.rows().iter().zip(expected.rows()) {
        for (a, e) in ra.iter().zip(re) {
            match (a.as_f64(), e.as_f64()) {
                (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-5, "{a:?} vs {e:?}"),
                _ => assert_eq!(a, e),
            }
        }
    }
}

#[test]
fn e001_sort_reproduces_published_order() {
    let inputs = TableSet::from_tables([load("E001_input.csv", "table_1")]).unwrap();
    let out = run(&inputs, &program("E001_program.json")).unwrap();
    assert_same_rows(&out, &load("E001_output.csv", "expected"));
}

#[test]
fn m001_chain_yields_two_rows() {
    let inputs = TableSet::from_tables([load("M001_input.csv", "table_1")]).unwrap();
    let out = run(&inputs, &program("M001_program.json")).unwrap();
    assert_same_rows(&out, &load("M001_output.csv", "expected"));
    assert_eq!(
        out.rows()[0],
        vec![
            Value::Text("Pontifical Catholic University of Chile".into()),
            Value::Int(69)
        ]
    );
}

#[test]
fn h001_join_chain_matches_means() {
    let inputs = TableSet::from_tables([
        load("H001_ship_missions.csv", "table_1"),
        load("H001_ships.csv", "table_2"),
    ])
    .unwrap();
    let out = run(&inputs, &program("H001_program.json")).unwrap();
    assert_same_rows(&out, &load("H001_output.csv", "expected"));
    assert_eq!(out.rows()[0][1], Value::Int(7));
    assert_eq!(out.rows()[0][2], Value::Real(4.875));
    assert_eq!(out.rows()[1][2], Value::Real(5.25));
    assert_eq!(out.name(), "table_1_table_2_join");
}

fn region_sales() -> TableSet {
    let t = Table::new(
        "table_1",
        vec![
            Column::new("region", ColumnType::Text),
            Column::new("sales", ColumnType::Real),
        ],
        vec![
            vec![Value::Text("N".into()), Value::Real(1.0)],
            vec![Value::Text("S".into()), Value::Real(2.0)],
            vec![Value::Text("N".into()), Value::Real(3.0)],
        ],
    )
    .unwrap();
    TableSet::from_tables([t]).unwrap()
}

#[test]
fn groupby_sum_then_sort_descending() {
    let out = run(&region_sales(), &program("listing_program.json")).unwrap();
    assert_eq!(
        out.rows(),
        &[
            vec![Value::Text("N".into()), Value::Real(4.0)],
            vec![Value::Text("S".into()), Value::Real(2.0)],
        ]
    );
}

fn run_json(data: &TableSet, json: &str) -> Result<Table, tablepipe_core::interp::RuntimeError> {
    run(data, &parse_program(json).unwrap())
}

#[test]
fn error_categories() {
    let data = region_sales();
    let e = run_json(&data, r#"[{"op":"groupby","params":{"by":"sales","agg":{"region":"sum"}}}]"#)
        .unwrap_err();
    assert_eq!(e.category, ErrorCategory::TypeError);
    let e = run_json(&data, r#"[{"op":"select","params":{"columns":["nope"]}}]"#).unwrap_err();
    assert_eq!(e.category, ErrorCategory::ColumnOrIndexError);
    let e = run_json(&data, r#"[{"op":"groupby","params":{"by":"region","agg":{"sales":"median"}}}]"#)
        .unwrap_err();
    assert_eq!(e.category, ErrorCategory::AttributeError);
    let e = run_json(&data, r#"[{"op":"topk","params":{"k":1}},{"op":"sort","params":{"table":"ghost","by":"sales"}}]"#)
        .unwrap_err();
    assert_eq!(e.category, ErrorCategory::ColumnOrIndexError);
    assert_eq!(e.op_index, 1);
    let e = run_json(&data, r#"[{"op":"cast","params":{"column":"region","dtype":"int"}}]"#)
        .unwrap_err();
    assert_eq!(e.category, ErrorCategory::TypeError);
}

#[test]
fn null_handling_in_filter_groupby_and_sort() {
    let t = Table::new(
        "table_1",
        vec![
            Column::new("k", ColumnType::Text),
            Column::new("v", ColumnType::Integer),
        ],
        vec![
            vec![Value::Null, Value::Int(1)],
            vec![Value::Text("a".into()), Value::Null],
            vec![Value::Text("a".into()), Value::Int(5)],
            vec![Value::Null, Value::Int(2)],
        ],
    )
    .unwrap();
    let data = TableSet::from_tables([t]).unwrap();
    let f = run_json(&data, r#"[{"op":"filter","params":{"condition":"v != 5"}}]"#).unwrap();
    assert_eq!(f.num_rows(), 2);
    let g = run_json(
        &data,
        r#"[{"op":"groupby","params":{"by":"k","agg":{"v":"count"}}}]"#,
    )
    .unwrap();
    assert_eq!(
        g.rows(),
        &[
            vec![Value::Text("a".into()), Value::Int(1)],
            vec![Value::Null, Value::Int(2)],
        ]
    );
    for asc in ["true", "false"] {
        let s = run_json(
            &data,
            &format!(r#"[{{"op":"sort","params":{{"by":"v","ascending":{asc}}}}}]"#),
        )
        .unwrap();
        assert_eq!(s.rows()[3][1], Value::Null);
    }
}

#[test]
fn pivot_unpivot_transpose_wide_to_long() {
    let t = Table::new(
        "table_1",
        vec![
            Column::new("id", ColumnType::Integer),
            Column::new("kind", ColumnType::Text),
            Column::new("x1", ColumnType::Integer),
            Column::new("x2", ColumnType::Real),
        ],
        vec![
            vec![Value::Int(1), Value::Text("a".into()), Value::Int(10), Value::Real(1.5)],
            vec![Value::Int(2), Value::Text("b".into()), Value::Int(20), Value::Null],
            vec![Value::Int(1), Value::Text("b".into()), Value::Int(30), Value::Real(2.5)],
        ],
    )
    .unwrap();
    let data = TableSet::from_tables([t]).unwrap();
    let p = run_json(
        &data,
        r#"[{"op":"pivot","params":{"index":"id","columns":"kind","values":"x1","aggfunc":"sum"}}]"#,
    )
    .unwrap();
    assert_eq!(
        p.columns().iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
        ["id", "a", "b"]
    );
    assert_eq!(p.rows()[1], vec![Value::Int(2), Value::Null, Value::Int(20)]);

    let u = run_json(
        &data,
        r#"[{"op":"unpivot","params":{"id_vars":["id"],"value_vars":["x1","x2"]}}]"#,
    )
    .unwrap();
    assert_eq!(u.num_rows(), 6);
    assert_eq!(u.columns()[2].ty, ColumnType::Real);
    assert_eq!(u.rows()[0], vec![Value::Int(1), Value::Text("x1".into()), Value::Real(10.0)]);

    let tr = run_json(&data, r#"[{"op":"transpose"}]"#).unwrap();
    assert_eq!(tr.num_rows(), 4);
    assert_eq!(
        tr.columns().iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
        ["index", "0", "1", "2"]
    );
    assert!(tr.columns().iter().all(|c| c.ty == ColumnType::Text));

    let w = run_json(
        &data,
        r#"[{"op":"wide_to_long","params":{"stubnames":["x"],"i":["id"],"j":"n"}}]"#,
    )
    .unwrap();
    assert_eq!(w.num_rows(), 6);
    assert_eq!(w.rows()[3], vec![Value::Int(1), Value::Text("2".into()), Value::Real(1.5)]);
}

#[test]
fn join_kinds_and_union() {
    let l = Table::new(
        "table_1",
        vec![Column::new("id", ColumnType::Integer), Column::new("v", ColumnType::Text)],
        vec![
            vec![Value::Int(1), Value::Text("a".into())],
            vec![Value::Int(2), Value::Text("b".into())],
            vec![Value::Null, Value::Text("n".into())],
        ],
    )
    .unwrap();
    let r = Table::new(
        "table_2",
        vec![Column::new("id", ColumnType::Integer), Column::new("v", ColumnType::Text)],
        vec![
            vec![Value::Int(2), Value::Text("x".into())],
            vec![Value::Int(3), Value::Text("y".into())],
            vec![Value::Null, Value::Text("m".into())],
        ],
    )
    .unwrap();
    let data = TableSet::from_tables([l, r]).unwrap();
    let count = |how: &str| {
        run_json(&data, &format!(r#"[{{"op":"join","params":{{"on":"id","how":"{how}"}}}}]"#))
            .unwrap()
            .num_rows()
    };
    assert_eq!(count("inner"), 1);
    assert_eq!(count("left"), 3);
    assert_eq!(count("right"), 3);
    assert_eq!(count("outer"), 5);
    let j = run_json(&data, r#"[{"op":"join","params":{"on":"id","how":"outer"}}]"#).unwrap();
    assert_eq!(
        j.columns().iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
        ["id", "v_x", "v_y"]
    );
    assert!(j.rows().contains(&vec![Value::Int(3), Value::Null, Value::Text("y".into())]));
    let u = run_json(&data, r#"[{"op":"union","params":{"how":"all"}}]"#).unwrap();
    assert_eq!(u.num_rows(), 6);
    assert_eq!(u.name(), "table_1_table_2_union");
}

fn small_table() -> impl Strategy<Value = Table> {
    let row = (
        prop_oneof![Just(Value::Null), (0i64..5).prop_map(Value::Int)],
        prop_oneof![
            Just(Value::Null),
            prop::sample::select(vec!["a", "b", "c"]).prop_map(|s| Value::Text(s.into()))
        ],
    );
    prop::collection::vec(row, 0..30).prop_map(|rows| {
        Table::new(
            "table_1",
            vec![Column::new("n", ColumnType::Integer), Column::new("s", ColumnType::Text)],
            rows.into_iter().map(|(a, b)| vec![a, b]).collect(),
        )
        .unwrap()
    })
}

fn one(t: &Table) -> TableSet {
    TableSet::from_tables([t.clone()]).unwrap()
}

proptest! {
    #[test]
    fn filter_twice_equals_conjunction(t in small_table(), k in 0i64..5, s in prop::sample::select(vec!["a", "b", "c"])) {
        let data = one(&t);
        let twice = run_json(&data, &format!(
            r#"[{{"op":"filter","params":{{"condition":"n >= {k}"}}}},{{"op":"filter","params":{{"condition":"s != '{s}'"}}}}]"#
        )).unwrap();
        let both = run_json(&data, &format!(
            r#"[{{"op":"filter","params":{{"condition":"n >= {k} and s != '{s}'"}}}}]"#
        )).unwrap();
        prop_assert_eq!(twice.rows(), both.rows());
    }

    #[test]
    fn sort_is_stable(t in small_table()) {
        let data = one(&t);
        let sorted = run_json(&data, r#"[{"op":"sort","params":{"by":"s"}}]"#).unwrap();
        // rows with equal keys keep input order: compare against a stable reference sort
        let mut indexed: Vec<(usize, &Vec<Value>)> = t.rows().iter().enumerate().collect();
        indexed.sort_by(|a, b| match (a.1[1].is_null(), b.1[1].is_null()) {
            (true, true) => a.0.cmp(&b.0),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => a.1[1].total_cmp(&b.1[1]).then(a.0.cmp(&b.0)),
        });
        let expected: Vec<Vec<Value>> = indexed.into_iter().map(|(_, r)| r.clone()).collect();
        prop_assert_eq!(sorted.rows(), expected.as_slice());
    }

    #[test]
    fn union_all_adds_row_counts(a in small_table(), b in small_table()) {
        let data = TableSet::from_tables([a.clone(), b.with_name("table_2")]).unwrap();
        let u = run_json(&data, r#"[{"op":"union","params":{"how":"all"}}]"#).unwrap();
        prop_assert_eq!(u.num_rows(), a.num_rows() + data.get("table_2").unwrap().num_rows());
    }

    #[test]
    fn deduplicate_never_grows(t in small_table(), last in any::<bool>()) {
        let keep = if last { "last" } else { "first" };
        let d = run_json(&one(&t), &format!(r#"[{{"op":"deduplicate","params":{{"keep":"{keep}"}}}}]"#)).unwrap();
        prop_assert!(d.num_rows() <= t.num_rows());
    }
}
