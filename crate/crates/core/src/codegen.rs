//! Template compiler from pipeline programs to code text.
//!
//! Two dialects: a method-chained dataframe style and SQL built from
//! chained CTEs. Emission is a pure function of the program (and, for SQL,
//! the optional input schemas used to spell out column lists).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsl::{
    AggFunc, CastType, CmpOp, Condition, DropHow, JoinHow, Keep, Literal, OperatorCall,
    OperatorKind, PipelineProgram, QuoteStyle, UnionHow,
};
use crate::spm::{self, Catalog, JoinSource, SchemaState};
use crate::table::{format_real, Column};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendDialect {
    DataframeChain,
    Sql,
}

impl BackendDialect {
    pub fn extension(self) -> &'static str {
        match self {
            BackendDialect::DataframeChain => "py",
            BackendDialect::Sql => "sql",
        }
    }

    /// Kinds with a real template. The rest degrade to a comment line.
    pub fn supports(self, kind: OperatorKind) -> bool {
        match self {
            BackendDialect::DataframeChain => true,
            BackendDialect::Sql => !matches!(
                kind,
                OperatorKind::Pivot
                    | OperatorKind::Explode
                    | OperatorKind::Transpose
                    | OperatorKind::WideToLong
            ),
        }
    }
}

impl std::str::FromStr for BackendDialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dataframe" | "dataframe-chain" | "pandas" => Ok(BackendDialect::DataframeChain),
            "sql" => Ok(BackendDialect::Sql),
            other => Err(format!("unknown dialect '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EmitOptions {
    /// Append `op N: kind` provenance comments.
    pub annotate: bool,
    /// Input schemas; SQL needs them for ops that enumerate columns.
    pub schema: Option<SchemaState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmittedCode {
    pub dialect: BackendDialect,
    pub text: String,
}

pub fn emit(p: &PipelineProgram, dialect: BackendDialect, opts: &EmitOptions) -> EmittedCode {
    let text = match dialect {
        BackendDialect::DataframeChain => emit_dataframe(p, opts),
        BackendDialect::Sql => emit_sql(p, opts),
    };
    EmittedCode { dialect, text }
}

pub fn quote_column(name: &str, dialect: BackendDialect) -> String {
    match dialect {
        BackendDialect::DataframeChain => py_str(name),
        BackendDialect::Sql => format!("\"{}\"", name.replace('"', "\"\"")),
    }
}

/// Drop whitespace that sits outside quoted strings.
pub fn normalize_whitespace(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in code.chars() {
        match quote {
            Some(q) => {
                out.push(c);
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None if c.is_whitespace() => {}
            None => {
                if c == '\'' || c == '"' {
                    quote = Some(c);
                }
                out.push(c);
            }
        }
    }
    out
}

fn py_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn py_list(items: &[String]) -> String {
    let inner: Vec<String> = items.iter().map(|s| py_str(s)).collect();
    format!("[{}]", inner.join(", "))
}

/// A scalar string for one item, a list otherwise.
fn py_one_or_list(items: &[String]) -> String {
    match items {
        [one] => py_str(one),
        _ => py_list(items),
    }
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

const PY_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if",
    "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try",
    "while", "with", "yield",
];

fn is_py_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !PY_KEYWORDS.contains(&s)
}

fn py_var(name: &str) -> String {
    let mut v: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if !is_py_ident(&v) {
        v.insert(0, '_');
    }
    v
}

fn agg_name(f: &AggFunc) -> &str {
    f.as_str()
}

fn dtype_name(t: CastType) -> &'static str {
    match t {
        CastType::Int => "int64",
        CastType::Float => "float64",
        CastType::Str => "str",
        CastType::Bool => "bool",
    }
}

/// Method pieces for one single-table op, each starting with `.`.
fn df_pieces(call: &OperatorCall) -> Vec<String> {
    match call {
        OperatorCall::Filter(p) => {
            vec![format!(
                ".query({})",
                py_str(&p.condition.render(QuoteStyle::Double, "True", "False"))
            )]
        }
        OperatorCall::Dropna(p) => {
            let how = match p.how {
                DropHow::Any => "any",
                DropHow::All => "all",
            };
            match &p.subset {
                Some(s) => vec![format!(".dropna(subset={}, how='{how}')", py_list(s))],
                None => vec![format!(".dropna(how='{how}')")],
            }
        }
        OperatorCall::Deduplicate(p) => {
            let keep = match p.keep {
                Keep::First => "first",
                Keep::Last => "last",
            };
            match &p.subset {
                Some(s) => vec![format!(
                    ".drop_duplicates(subset={}, keep='{keep}')",
                    py_list(s)
                )],
                None => vec![format!(".drop_duplicates(keep='{keep}')")],
            }
        }
        OperatorCall::Cast(p) => vec![format!(
            ".astype({{{}: '{}'}})",
            py_str(&p.column),
            dtype_name(p.dtype)
        )],
        OperatorCall::Groupby(p) => {
            let single = p.by.len() == 1 && p.agg.len() == 1;
            let (col, f) = p.agg.first().expect("groupby has aggregates");
            if single && is_py_ident(&p.by[0]) && is_py_ident(col) {
                vec![
                    format!(".groupby({})[{}]", py_str(&p.by[0]), py_str(col)),
                    format!(".{}()", agg_name(f)),
                    ".reset_index()".to_string(),
                ]
            } else {
                let aggs: Vec<String> = p
                    .agg
                    .iter()
                    .map(|(c, f)| format!("{}: {}", py_str(c), py_str(agg_name(f))))
                    .collect();
                vec![
                    format!(".groupby({}, as_index=False)", py_one_or_list(&p.by)),
                    format!(".agg({{{}}})", aggs.join(", ")),
                ]
            }
        }
        OperatorCall::Pivot(p) => vec![
            format!(
                ".pivot_table(index={}, columns={}, values={}, aggfunc={})",
                py_one_or_list(&p.index),
                py_str(&p.columns),
                py_str(&p.values),
                py_str(agg_name(&p.aggfunc))
            ),
            ".reset_index()".to_string(),
        ],
        OperatorCall::Unpivot(p) => vec![format!(
            ".melt(id_vars={}, value_vars={}, var_name={}, value_name={})",
            py_list(&p.id_vars),
            py_list(&p.value_vars),
            py_str(&p.var_name),
            py_str(&p.value_name)
        )],
        OperatorCall::Explode(p) => {
            let mut v = Vec::new();
            if p.split_comma {
                let q = py_str(&p.column);
                let split = format!("lambda df: df[{q}].str.split(',')");
                v.push(if is_py_ident(&p.column) {
                    format!(".assign({}={split})", p.column)
                } else {
                    format!(".assign(**{{{q}: {split}}})")
                });
            }
            v.push(format!(".explode({})", py_str(&p.column)));
            v
        }
        OperatorCall::Transpose(_) => {
            vec![".transpose()".to_string(), ".reset_index()".to_string()]
        }
        OperatorCall::WideToLong(p) => vec![
            format!(
                ".pipe(lambda d: pd.wide_to_long(d, stubnames={}, i={}, j={}, sep={}, suffix={}))",
                py_list(&p.stubnames),
                py_list(&p.i),
                py_str(&p.j),
                py_str(&p.sep),
                py_str(&p.suffix)
            ),
            ".reset_index()".to_string(),
        ],
        OperatorCall::Sort(p) => {
            if p.by.len() == 1 {
                vec![format!(
                    ".sort_values(by={}, ascending={})",
                    py_str(&p.by[0]),
                    py_bool(p.ascending[0])
                )]
            } else {
                let asc: Vec<&str> = p.ascending.iter().map(|&b| py_bool(b)).collect();
                vec![format!(
                    ".sort_values(by={}, ascending=[{}])",
                    py_list(&p.by),
                    asc.join(", ")
                )]
            }
        }
        OperatorCall::Topk(p) => vec![format!(".head({})", p.k)],
        OperatorCall::Select(p) => vec![format!(".loc[:, {}]", py_list(&p.columns))],
        OperatorCall::Rename(p) => {
            let pairs: Vec<String> = p
                .rename_map
                .iter()
                .map(|(a, b)| format!("{}: {}", py_str(a), py_str(b)))
                .collect();
            vec![format!(".rename(columns={{{}}})", pairs.join(", "))]
        }
        OperatorCall::Join(_) | OperatorCall::Union(_) => {
            unreachable!("multi-table ops start a new expression")
        }
    }
}

fn df_source_expr(call: &OperatorCall, l: &str, r: &str) -> (String, Vec<String>) {
    match call {
        OperatorCall::Join(p) => {
            let how = p.how.as_str();
            let keys = match (&p.on, &p.left_on, &p.right_on) {
                (Some(on), _, _) => format!("on={}", py_one_or_list(on)),
                (None, Some(lo), Some(ro)) => format!(
                    "left_on={}, right_on={}",
                    py_one_or_list(lo),
                    py_one_or_list(ro)
                ),
                _ => String::new(),
            };
            (
                format!(
                    "{}.merge({}, {keys}, how='{how}', suffixes=({}, {}))",
                    py_var(l),
                    py_var(r),
                    py_str(&p.suffixes[0]),
                    py_str(&p.suffixes[1])
                ),
                Vec::new(),
            )
        }
        OperatorCall::Union(p) => {
            let base = format!(
                "pd.concat([{}, {}], ignore_index=True)",
                py_var(l),
                py_var(r)
            );
            let rest = match p.how {
                UnionHow::All => Vec::new(),
                UnionHow::Distinct => vec![".drop_duplicates()".to_string()],
            };
            (base, rest)
        }
        _ => unreachable!(),
    }
}

struct Segment {
    var: String,
    head: String,
    pieces: Vec<String>,
}

fn annotate_last(pieces: &mut [String], idx: usize, kind: OperatorKind, on: bool) {
    if on {
        if let Some(last) = pieces.last_mut() {
            let _ = write!(last, "  # op {}: {}", idx + 1, kind);
        }
    }
}

fn emit_dataframe(p: &PipelineProgram, opts: &EmitOptions) -> String {
    let mut catalog = match &opts.schema {
        Some(s) => s.catalog.clone(),
        None => Catalog::from_names(p.source_tables.iter().map(String::as_str)),
    };
    let multi = p.ops.iter().any(|o| o.kind().is_multi_table());

    if !multi {
        let mut pieces = Vec::new();
        for (i, call) in p.ops.iter().enumerate() {
            let mut ps = df_pieces(call);
            annotate_last(&mut ps, i, call.kind(), opts.annotate);
            pieces.extend(ps);
        }
        let mut out = String::from("df");
        for (i, piece) in pieces.iter().enumerate() {
            if i > 0 {
                out.push_str("\n    ");
            }
            out.push_str(piece);
        }
        return out;
    }

    let mut segments: Vec<Segment> = Vec::new();
    for (i, call) in p.ops.iter().enumerate() {
        if call.kind().is_multi_table() {
            let (l, r) = catalog
                .resolve_pair(call)
                .unwrap_or_else(|_| ("table_1".into(), "table_2".into()));
            let name = Catalog::result_name(call, &l, &r);
            let (head, mut pieces) = df_source_expr(call, &l, &r);
            if opts.annotate {
                if pieces.is_empty() {
                    segments.push(Segment {
                        var: py_var(&name),
                        head: format!("{head}  # op {}: {}", i + 1, call.kind()),
                        pieces,
                    });
                    catalog.record(&name, &[&l, &r]);
                    continue;
                }
                annotate_last(&mut pieces, i, call.kind(), true);
            }
            segments.push(Segment {
                var: py_var(&name),
                head,
                pieces,
            });
            catalog.record(&name, &[&l, &r]);
        } else {
            let target = catalog
                .resolve_target(call.target_table())
                .map(str::to_string)
                .unwrap_or_else(|_| catalog.current.clone());
            let var = py_var(&target);
            let mut ps = df_pieces(call);
            annotate_last(&mut ps, i, call.kind(), opts.annotate);
            match segments.last_mut() {
                Some(seg) if seg.var == var => seg.pieces.extend(ps),
                _ => segments.push(Segment {
                    var: var.clone(),
                    head: var,
                    pieces: ps,
                }),
            }
            catalog.record(&target, &[&target]);
        }
    }
    let last = segments.len() - 1;
    let mut out = String::new();
    for (si, seg) in segments.iter().enumerate() {
        let var = if si == last { "df" } else { seg.var.as_str() };
        let _ = write!(out, "{var} = (\n    {}", seg.head);
        for piece in &seg.pieces {
            let _ = write!(out, "\n    {piece}");
        }
        out.push_str("\n)");
        if si != last {
            out.push('\n');
        }
    }
    out
}

fn sql_ident(name: &str) -> String {
    quote_column(name, BackendDialect::Sql)
}

fn sql_literal(lit: &Literal) -> String {
    match lit {
        Literal::Int(i) => i.to_string(),
        Literal::Real(r) => format_real(*r),
        Literal::Bool(b) => if *b { "TRUE" } else { "FALSE" }.to_string(),
        Literal::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

fn sql_condition(c: &Condition) -> String {
    let child = |c: &Condition| match c {
        Condition::Compare { .. } => sql_condition(c),
        _ => format!("({})", sql_condition(c)),
    };
    match c {
        Condition::Compare {
            column,
            op,
            literal,
        } => {
            let sym = match op {
                CmpOp::Ne => "<>",
                CmpOp::Eq => "=",
                other => other.symbol(),
            };
            format!("{} {sym} {}", sql_ident(column), sql_literal(literal))
        }
        Condition::And(a, b) => format!("{} AND {}", child(a), child(b)),
        Condition::Or(a, b) => format!("{} OR {}", child(a), child(b)),
    }
}

fn sql_cols(cols: &[&str]) -> String {
    cols.iter().map(|c| sql_ident(c)).collect::<Vec<_>>().join(", ")
}

fn sql_type(t: CastType) -> &'static str {
    match t {
        CastType::Int => "INTEGER",
        CastType::Float => "REAL",
        CastType::Str => "TEXT",
        CastType::Bool => "BOOLEAN",
    }
}

enum SqlStep {
    Query(String),
    Comment(String),
}

/// Left and right CTE names with their schemas, when known.
type SqlPair<'a> = (&'a str, &'a str, Option<&'a [Column]>, Option<&'a [Column]>);

fn sql_body(
    call: &OperatorCall,
    src: &str,
    cols: Option<&[Column]>,
    pair: Option<SqlPair<'_>>,
) -> SqlStep {
    let kind = call.kind();
    let need_cols = || SqlStep::Comment(format!("-- {kind}: column list unknown, step skipped"));
    let names = |cs: &[Column]| cs.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
    match call {
        OperatorCall::Filter(p) => SqlStep::Query(format!(
            "SELECT * FROM {src} WHERE {}",
            sql_condition(&p.condition)
        )),
        OperatorCall::Dropna(p) => {
            let subset = match (&p.subset, cols) {
                (Some(s), _) => s.clone(),
                (None, Some(c)) => names(c),
                (None, None) => return need_cols(),
            };
            let pred = match p.how {
                DropHow::Any => subset
                    .iter()
                    .map(|c| format!("{} IS NOT NULL", sql_ident(c)))
                    .collect::<Vec<_>>()
                    .join(" AND "),
                DropHow::All => format!(
                    "NOT ({})",
                    subset
                        .iter()
                        .map(|c| format!("{} IS NULL", sql_ident(c)))
                        .collect::<Vec<_>>()
                        .join(" AND ")
                ),
            };
            SqlStep::Query(format!("SELECT * FROM {src} WHERE {pred}"))
        }
        OperatorCall::Deduplicate(p) => {
            if p.subset.is_none() && p.keep == Keep::First {
                return SqlStep::Query(format!("SELECT DISTINCT * FROM {src}"));
            }
            let Some(cs) = cols else { return need_cols() };
            let all = names(cs);
            let keys = p.subset.clone().unwrap_or_else(|| all.clone());
            let refs: Vec<&str> = all.iter().map(String::as_str).collect();
            let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
            let dir = if p.keep == Keep::Last { "DESC" } else { "ASC" };
            SqlStep::Query(format!(
                "SELECT {} FROM (SELECT *, ROW_NUMBER() OVER (PARTITION BY {} ORDER BY _pos {dir}) AS _rn \
                 FROM (SELECT *, ROW_NUMBER() OVER () AS _pos FROM {src})) WHERE _rn = 1 ORDER BY _pos",
                sql_cols(&refs),
                sql_cols(&key_refs)
            ))
        }
        OperatorCall::Cast(p) => {
            let Some(cs) = cols else { return need_cols() };
            let list: Vec<String> = cs
                .iter()
                .map(|c| {
                    if c.name == p.column {
                        format!(
                            "CAST({} AS {}) AS {}",
                            sql_ident(&c.name),
                            sql_type(p.dtype),
                            sql_ident(&c.name)
                        )
                    } else {
                        sql_ident(&c.name)
                    }
                })
                .collect();
            SqlStep::Query(format!("SELECT {} FROM {src}", list.join(", ")))
        }
        OperatorCall::Join(p) => {
            let Some((ls, rs, Some(lc), Some(rc))) = pair else {
                return need_cols();
            };
            let Ok(layout) = spm::join_layout("l", lc, "r", rc, p) else {
                return need_cols();
            };
            let list: Vec<String> = layout
                .columns
                .iter()
                .zip(&layout.sources)
                .map(|(c, s)| {
                    let expr = match *s {
                        JoinSource::Left(i) => format!("l.{}", sql_ident(&lc[i].name)),
                        JoinSource::Right(i) => format!("r.{}", sql_ident(&rc[i].name)),
                        JoinSource::Key(li, ri) => format!(
                            "COALESCE(l.{}, r.{})",
                            sql_ident(&lc[li].name),
                            sql_ident(&rc[ri].name)
                        ),
                    };
                    format!("{expr} AS {}", sql_ident(&c.name))
                })
                .collect();
            let on: Vec<String> = layout
                .key_indices
                .iter()
                .map(|&(li, ri)| {
                    format!(
                        "l.{} = r.{}",
                        sql_ident(&lc[li].name),
                        sql_ident(&rc[ri].name)
                    )
                })
                .collect();
            let how = match p.how {
                JoinHow::Inner => "INNER JOIN",
                JoinHow::Left => "LEFT JOIN",
                JoinHow::Right => "RIGHT JOIN",
                JoinHow::Outer => "FULL OUTER JOIN",
            };
            SqlStep::Query(format!(
                "SELECT {} FROM {ls} AS l {how} {rs} AS r ON {}",
                list.join(", "),
                on.join(" AND ")
            ))
        }
        OperatorCall::Union(p) => {
            let Some((ls, rs, _, _)) = pair else { return need_cols() };
            let op = match p.how {
                UnionHow::All => "UNION ALL",
                UnionHow::Distinct => "UNION",
            };
            SqlStep::Query(format!("SELECT * FROM {ls} {op} SELECT * FROM {rs}"))
        }
        OperatorCall::Groupby(p) => {
            let by: Vec<&str> = p.by.iter().map(String::as_str).collect();
            let aggs: Vec<String> = p
                .agg
                .iter()
                .map(|(c, f)| {
                    let func = match f {
                        AggFunc::Mean => "AVG",
                        AggFunc::Sum => "SUM",
                        AggFunc::Min => "MIN",
                        AggFunc::Max => "MAX",
                        AggFunc::Count => "COUNT",
                        AggFunc::Other(o) => o.as_str(),
                    };
                    format!("{func}({}) AS {}", sql_ident(c), sql_ident(c))
                })
                .collect();
            let order: Vec<String> = by
                .iter()
                .map(|c| format!("{} ASC NULLS LAST", sql_ident(c)))
                .collect();
            SqlStep::Query(format!(
                "SELECT {}, {} FROM {src} GROUP BY {} ORDER BY {}",
                sql_cols(&by),
                aggs.join(", "),
                sql_cols(&by),
                order.join(", ")
            ))
        }
        OperatorCall::Unpivot(p) => {
            let ids: Vec<&str> = p.id_vars.iter().map(String::as_str).collect();
            let parts: Vec<String> = p
                .value_vars
                .iter()
                .map(|v| {
                    let mut sel: Vec<String> = ids.iter().map(|c| sql_ident(c)).collect();
                    sel.push(format!(
                        "{} AS {}",
                        sql_literal(&Literal::Text(v.clone())),
                        sql_ident(&p.var_name)
                    ));
                    sel.push(format!("{} AS {}", sql_ident(v), sql_ident(&p.value_name)));
                    format!("SELECT {} FROM {src}", sel.join(", "))
                })
                .collect();
            SqlStep::Query(parts.join(" UNION ALL "))
        }
        OperatorCall::Sort(p) => {
            let keys: Vec<String> = p
                .by
                .iter()
                .zip(&p.ascending)
                .map(|(c, &a)| {
                    format!("{} {} NULLS LAST", sql_ident(c), if a { "ASC" } else { "DESC" })
                })
                .collect();
            SqlStep::Query(format!("SELECT * FROM {src} ORDER BY {}", keys.join(", ")))
        }
        OperatorCall::Topk(p) => SqlStep::Query(format!("SELECT * FROM {src} LIMIT {}", p.k)),
        OperatorCall::Select(p) => {
            let cs: Vec<&str> = p.columns.iter().map(String::as_str).collect();
            SqlStep::Query(format!("SELECT {} FROM {src}", sql_cols(&cs)))
        }
        OperatorCall::Rename(p) => {
            let Some(cs) = cols else { return need_cols() };
            let list: Vec<String> = cs
                .iter()
                .map(|c| match p.rename_map.get(&c.name) {
                    Some(new) => format!("{} AS {}", sql_ident(&c.name), sql_ident(new)),
                    None => sql_ident(&c.name),
                })
                .collect();
            SqlStep::Query(format!("SELECT {} FROM {src}", list.join(", ")))
        }
        OperatorCall::Pivot(_)
        | OperatorCall::Explode(_)
        | OperatorCall::Transpose(_)
        | OperatorCall::WideToLong(_) => {
            SqlStep::Comment(format!("-- {kind}: unsupported in SQL backend"))
        }
    }
}

fn emit_sql(p: &PipelineProgram, opts: &EmitOptions) -> String {
    let mut state = opts.schema.clone().unwrap_or_else(|| SchemaState {
        catalog: Catalog::from_names(p.source_tables.iter().map(String::as_str)),
        tables: Default::default(),
    });
    // Which CTE (or base table) currently holds each logical table.
    let mut source: indexmap::IndexMap<String, String> = state
        .catalog
        .names()
        .map(|n| (n.to_string(), sql_ident(n)))
        .collect();
    let src_of = |source: &indexmap::IndexMap<String, String>, n: &str| {
        source.get(n).cloned().unwrap_or_else(|| sql_ident(n))
    };
    let mut items: Vec<(bool, String)> = Vec::new();
    for (i, call) in p.ops.iter().enumerate() {
        let concrete = |st: &SchemaState, n: &str| st.get(n).and_then(|s| s.concrete());
        let (target, step) = if call.kind().is_multi_table() {
            let (l, r) = state
                .catalog
                .resolve_pair(call)
                .unwrap_or_else(|_| ("table_1".into(), "table_2".into()));
            let lc = concrete(&state, &l);
            let rc = concrete(&state, &r);
            let (ls, rs) = (src_of(&source, &l), src_of(&source, &r));
            let step = sql_body(call, "", None, Some((&ls, &rs, lc.as_deref(), rc.as_deref())));
            (Catalog::result_name(call, &l, &r), step)
        } else {
            let t = state
                .catalog
                .resolve_target(call.target_table())
                .map(str::to_string)
                .unwrap_or_else(|_| state.catalog.current.clone());
            let cols = concrete(&state, &t);
            let src = src_of(&source, &t);
            (t, sql_body(call, &src, cols.as_deref(), None))
        };
        let note = if opts.annotate {
            format!("-- op {}: {}\n    ", i + 1, call.kind())
        } else {
            String::new()
        };
        match step {
            SqlStep::Query(q) => {
                let cte = format!("step_{}", i + 1);
                items.push((true, format!("{note}{cte} AS (\n        {q}\n    )")));
                source.insert(target.clone(), cte);
            }
            SqlStep::Comment(c) => items.push((false, c)),
        }
        state = match spm::propagate(call, &state) {
            Ok(s) => s,
            Err(_) => {
                // Keep names flowing without schemas.
                let mut s = state.clone();
                s.tables.shift_remove(&target);
                s.catalog.record(&target, &[&target]);
                s
            }
        };
    }
    if !items.iter().any(|(q, _)| *q) {
        return items
            .into_iter()
            .map(|(_, c)| c)
            .collect::<Vec<_>>()
            .join("\n");
    }
    let last_query = items.iter().rposition(|(q, _)| *q).expect("has a query");
    let mut out = String::from("WITH\n");
    for (idx, (is_query, text)) in items.iter().enumerate() {
        out.push_str("    ");
        out.push_str(text);
        if *is_query && idx < last_query {
            out.push(',');
        }
        out.push('\n');
    }
    let final_src = src_of(&source, &state.catalog.current);
    let _ = write!(out, "SELECT * FROM {final_src};");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;

    fn df(json: &str) -> String {
        let p = parse_program(json).unwrap();
        emit(&p, BackendDialect::DataframeChain, &EmitOptions::default()).text
    }

    #[test]
    fn quoting() {
        let d = BackendDialect::DataframeChain;
        assert_eq!(quote_column("Amount Paid", d), "'Amount Paid'");
        assert_eq!(quote_column("region", d), "'region'");
        assert_eq!(quote_column("O'Brien", d), r"'O\'Brien'");
        assert_eq!(quote_column("Amount Paid", BackendDialect::Sql), "\"Amount Paid\"");
        assert_eq!(quote_column("a\"b", BackendDialect::Sql), "\"a\"\"b\"");
    }

    #[test]
    fn whitespace_normalization_keeps_quoted_spaces() {
        assert_eq!(
            normalize_whitespace("df .query( 'a b'  )\n   .head(2)"),
            "df.query('a b').head(2)"
        );
        assert_eq!(normalize_whitespace(r#"x = 'it\'s  ok'  "#), r"x='it\'s  ok'");
    }

    #[test]
    fn transpose_sql_is_single_comment() {
        let p = parse_program(r#"[{"op":"transpose","params":{}}]"#).unwrap();
        let out = emit(&p, BackendDialect::Sql, &EmitOptions::default());
        assert_eq!(out.text, "-- transpose: unsupported in SQL backend");
    }

    #[test]
    fn filter_query_escapes() {
        let code = df(r#"[{"op":"filter","params":{"condition":"`Full Name` == \"O'Neil\""}}]"#);
        assert_eq!(code, r#"df.query('`Full Name` == "O\'Neil"')"#);
    }

    #[test]
    fn explode_with_split() {
        let code = df(r#"[{"op":"explode","params":{"column":"tags","split_comma":true}}]"#);
        assert_eq!(
            code,
            "df.assign(tags=lambda df: df['tags'].str.split(','))\n    .explode('tags')"
        );
    }

    #[test]
    fn emission_is_deterministic() {
        let json = r#"[{"op":"select","params":{"columns":["a","b"]}},{"op":"topk","params":{"k":3}}]"#;
        assert_eq!(df(json), df(json));
        assert_eq!(df(json), "df.loc[:, ['a', 'b']]\n    .head(3)");
    }

    #[test]
    fn every_kind_has_a_template_in_both_dialects() {
        for kind in OperatorKind::ALL {
            // Supported kinds produce code; the rest are declared comments.
            let _ = BackendDialect::Sql.supports(kind);
            assert!(BackendDialect::DataframeChain.supports(kind));
        }
        let unsupported: Vec<_> = OperatorKind::ALL
            .iter()
            .filter(|k| !BackendDialect::Sql.supports(**k))
            .map(|k| k.name())
            .collect();
        assert_eq!(unsupported, ["pivot", "explode", "transpose", "wide_to_long"]);
    }
}
