use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;

use super::{ErrorCategory, OpError};
use crate::dsl::{
    AggFunc, CastType, CmpOp, Condition, DropHow, JoinHow, JoinParams, Keep, Literal,
    OperatorCall, UnionHow,
};
use crate::spm::{self, agg_output_type, JoinSource};
use crate::table::{is_decimal, Column, ColumnType, Table, Value};

type OpResult<T> = Result<T, OpError>;

fn build(name: &str, columns: Vec<Column>, rows: Vec<Vec<Value>>) -> OpResult<Table> {
    Table::new(name, columns, rows).map_err(|e| OpError::new(ErrorCategory::Other, e.to_string()))
}

fn index_of(t: &Table, name: &str) -> OpResult<usize> {
    t.column_index(name).ok_or_else(|| {
        OpError::new(
            ErrorCategory::ColumnOrIndexError,
            format!("column '{name}' not found in table '{}'", t.name()),
        )
    })
}

fn indices(t: &Table, names: &[String]) -> OpResult<Vec<usize>> {
    names.iter().map(|n| index_of(t, n)).collect()
}

fn project(row: &[Value], idx: &[usize]) -> Vec<Value> {
    idx.iter().map(|&i| row[i].clone()).collect()
}

pub(super) fn single(t: &Table, call: &OperatorCall, max_cells: usize) -> OpResult<Table> {
    let name = t.name();
    match call {
        OperatorCall::Filter(p) => {
            let rows = t
                .rows()
                .iter()
                .filter(|r| eval_condition(t, r, &p.condition))
                .cloned()
                .collect();
            build(name, t.columns().to_vec(), rows)
        }
        OperatorCall::Dropna(p) => {
            let idx = match &p.subset {
                Some(s) => indices(t, s)?,
                None => (0..t.num_columns()).collect(),
            };
            let rows = t
                .rows()
                .iter()
                .filter(|r| {
                    let nulls = idx.iter().filter(|&&i| r[i].is_null()).count();
                    match p.how {
                        DropHow::Any => nulls == 0,
                        DropHow::All => idx.is_empty() || nulls < idx.len(),
                    }
                })
                .cloned()
                .collect();
            build(name, t.columns().to_vec(), rows)
        }
        OperatorCall::Deduplicate(p) => {
            let idx = match &p.subset {
                Some(s) => indices(t, s)?,
                None => (0..t.num_columns()).collect(),
            };
            let keys: Vec<Vec<Value>> = t.rows().iter().map(|r| project(r, &idx)).collect();
            let mut keep = vec![false; keys.len()];
            let mut seen = HashSet::new();
            let order: Box<dyn Iterator<Item = usize>> = match p.keep {
                Keep::First => Box::new(0..keys.len()),
                Keep::Last => Box::new((0..keys.len()).rev()),
            };
            for i in order {
                if seen.insert(&keys[i]) {
                    keep[i] = true;
                }
            }
            let rows = t
                .rows()
                .iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(r, _)| r.clone())
                .collect();
            build(name, t.columns().to_vec(), rows)
        }
        OperatorCall::Cast(p) => {
            let ci = index_of(t, &p.column)?;
            let mut rows = t.rows().to_vec();
            for r in &mut rows {
                r[ci] = cast_value(&r[ci], p.dtype).map_err(|m| {
                    OpError::new(
                        ErrorCategory::TypeError,
                        format!("cannot cast column '{}' to {}: {m}", p.column, p.dtype.as_str()),
                    )
                })?;
            }
            let mut cols = t.columns().to_vec();
            cols[ci].ty = p.dtype.column_type();
            build(name, cols, rows)
        }
        OperatorCall::Groupby(p) => {
            let by = indices(t, &p.by)?;
            let mut groups: IndexMap<Vec<Value>, Vec<usize>> = IndexMap::new();
            for (ri, r) in t.rows().iter().enumerate() {
                groups.entry(project(r, &by)).or_default().push(ri);
            }
            let mut keys: Vec<Vec<Value>> = groups.keys().cloned().collect();
            keys.sort_by(|a, b| cmp_tuple(a, b));
            let mut cols: Vec<Column> = by.iter().map(|&i| t.columns()[i].clone()).collect();
            let mut aggs = Vec::new();
            for (col, f) in &p.agg {
                let ci = index_of(t, col)?;
                let ty = t.columns()[ci].ty;
                spm::check_agg(f, col, ty).map_err(|v| OpError::new(v.kind.into(), v.message))?;
                cols.push(Column::new(col.clone(), agg_output_type(f, ty)));
                aggs.push((ci, f, ty));
            }
            let mut rows = Vec::with_capacity(keys.len());
            for k in keys {
                let members = &groups[&k];
                let mut row = k.clone();
                for (ci, f, ty) in &aggs {
                    let vals = members.iter().map(|&ri| &t.rows()[ri][*ci]);
                    row.push(aggregate(f, *ty, vals)?);
                }
                rows.push(row);
            }
            build(name, cols, rows)
        }
        OperatorCall::Pivot(p) => {
            let idx = indices(t, &p.index)?;
            let ci = index_of(t, &p.columns)?;
            let vi = index_of(t, &p.values)?;
            let vty = t.columns()[vi].ty;
            spm::check_agg(&p.aggfunc, &p.values, vty)
                .map_err(|v| OpError::new(v.kind.into(), v.message))?;
            let mut cells: HashMap<(Vec<Value>, Value), Vec<usize>> = HashMap::new();
            let mut index_keys: Vec<Vec<Value>> = Vec::new();
            let mut col_keys: Vec<Value> = Vec::new();
            for (ri, r) in t.rows().iter().enumerate() {
                let k = project(r, &idx);
                if k.iter().any(Value::is_null) || r[ci].is_null() {
                    continue;
                }
                if !index_keys.contains(&k) {
                    index_keys.push(k.clone());
                }
                if !col_keys.contains(&r[ci]) {
                    col_keys.push(r[ci].clone());
                }
                cells.entry((k, r[ci].clone())).or_default().push(ri);
            }
            index_keys.sort_by(|a, b| cmp_tuple(a, b));
            col_keys.sort_by(|a, b| a.total_cmp(b));
            let out_ty = agg_output_type(&p.aggfunc, vty);
            let mut cols: Vec<Column> = idx.iter().map(|&i| t.columns()[i].clone()).collect();
            for v in &col_keys {
                cols.push(Column::new(v.render(), out_ty));
            }
            if cols.len() > max_cells {
                return Err(OpError::new(ErrorCategory::Other, "pivot too wide"));
            }
            let mut seen = HashSet::new();
            for c in &cols {
                if !seen.insert(c.name.as_str()) {
                    return Err(OpError::new(
                        ErrorCategory::SemanticGuard,
                        format!("pivot produces duplicate column '{}'", c.name),
                    ));
                }
            }
            let mut rows = Vec::with_capacity(index_keys.len());
            for k in index_keys {
                let mut row = k.clone();
                for cv in &col_keys {
                    match cells.get(&(k.clone(), cv.clone())) {
                        Some(members) => {
                            let vals = members.iter().map(|&ri| &t.rows()[ri][vi]);
                            row.push(aggregate(&p.aggfunc, vty, vals)?);
                        }
                        None => row.push(Value::Null),
                    }
                }
                rows.push(row);
            }
            build(name, cols, rows)
        }
        OperatorCall::Unpivot(p) => {
            let schema = spm::TableSchema::from_columns(t.columns());
            let cols = spm::unpivot_columns(name, &schema, p)
                .map_err(|v| OpError::new(v.kind.into(), v.message))?;
            let ids = indices(t, &p.id_vars)?;
            let vals = indices(t, &p.value_vars)?;
            let vty = cols.last().expect("value column").ty;
            let mut rows = Vec::with_capacity(t.num_rows() * vals.len());
            for (vn, &vi) in p.value_vars.iter().zip(&vals) {
                for r in t.rows() {
                    let mut row = project(r, &ids);
                    row.push(Value::Text(vn.clone()));
                    row.push(r[vi].widen_to(vty));
                    rows.push(row);
                }
            }
            build(name, cols, rows)
        }
        OperatorCall::Explode(p) => {
            let ci = index_of(t, &p.column)?;
            let mut rows = Vec::new();
            for r in t.rows() {
                match (&r[ci], p.split_comma) {
                    (Value::Text(s), true) => {
                        for frag in s.split(',') {
                            let frag = frag.trim();
                            let mut row = r.clone();
                            row[ci] = if frag.is_empty() {
                                Value::Null
                            } else {
                                Value::Text(frag.to_string())
                            };
                            rows.push(row);
                        }
                    }
                    _ => rows.push(r.clone()),
                }
                if rows.len().saturating_mul(t.num_columns()) > max_cells {
                    return Err(OpError::new(ErrorCategory::Other, "cell budget exceeded"));
                }
            }
            build(name, t.columns().to_vec(), rows)
        }
        OperatorCall::Transpose(_) => {
            let mut cols = vec![Column::new("index", ColumnType::Text)];
            for i in 0..t.num_rows() {
                cols.push(Column::new(i.to_string(), ColumnType::Text));
            }
            let rows = t
                .columns()
                .iter()
                .enumerate()
                .map(|(ci, c)| {
                    let mut row = vec![Value::Text(c.name.clone())];
                    row.extend(t.rows().iter().map(|r| r[ci].widen_to(ColumnType::Text)));
                    row
                })
                .collect();
            build(name, cols, rows)
        }
        OperatorCall::WideToLong(p) => {
            let layout = spm::wide_layout(name, t.columns(), p)
                .map_err(|v| OpError::new(v.kind.into(), v.message))?;
            let mut rows = Vec::new();
            for (si, suffix) in layout.suffixes.iter().enumerate() {
                for r in t.rows() {
                    let mut row = project(r, &layout.i_indices);
                    row.push(Value::Text(suffix.clone()));
                    for (ty, per_suffix) in &layout.stubs {
                        row.push(match per_suffix[si] {
                            Some(ci) => r[ci].widen_to(*ty),
                            None => Value::Null,
                        });
                    }
                    rows.push(row);
                }
            }
            build(name, layout.columns, rows)
        }
        OperatorCall::Sort(p) => {
            let keys = indices(t, &p.by)?;
            let mut rows = t.rows().to_vec();
            rows.sort_by(|a, b| {
                for (&k, &asc) in keys.iter().zip(&p.ascending) {
                    let ord = match (a[k].is_null(), b[k].is_null()) {
                        (true, true) => Ordering::Equal,
                        (true, false) => Ordering::Greater,
                        (false, true) => Ordering::Less,
                        (false, false) => {
                            let o = a[k].total_cmp(&b[k]);
                            if asc {
                                o
                            } else {
                                o.reverse()
                            }
                        }
                    };
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
                Ordering::Equal
            });
            build(name, t.columns().to_vec(), rows)
        }
        OperatorCall::Topk(p) => {
            let rows = t.rows().iter().take(p.k).cloned().collect();
            build(name, t.columns().to_vec(), rows)
        }
        OperatorCall::Select(p) => {
            let idx = indices(t, &p.columns)?;
            let cols = idx.iter().map(|&i| t.columns()[i].clone()).collect();
            let rows = t.rows().iter().map(|r| project(r, &idx)).collect();
            build(name, cols, rows)
        }
        OperatorCall::Rename(p) => {
            for old in p.rename_map.keys() {
                index_of(t, old)?;
            }
            let cols = t
                .columns()
                .iter()
                .map(|c| match p.rename_map.get(&c.name) {
                    Some(n) => Column::new(n.clone(), c.ty),
                    None => c.clone(),
                })
                .collect();
            build(name, cols, t.rows().to_vec())
        }
        OperatorCall::Join(_) | OperatorCall::Union(_) => Err(OpError::new(
            ErrorCategory::SemanticGuard,
            "two-table operator applied to a single table",
        )),
    }
}

pub(super) fn join(
    l: &Table,
    r: &Table,
    p: &JoinParams,
    out_name: &str,
    max_cells: usize,
) -> OpResult<Table> {
    let layout = spm::join_layout(l.name(), l.columns(), r.name(), r.columns(), p)
        .map_err(|v| OpError::new(v.kind.into(), v.message))?;
    let lk: Vec<usize> = layout.key_indices.iter().map(|k| k.0).collect();
    let rk: Vec<usize> = layout.key_indices.iter().map(|k| k.1).collect();
    let key = |row: &[Value], idx: &[usize]| -> Option<Vec<Value>> {
        let k = project(row, idx);
        if k.iter().any(Value::is_null) {
            None
        } else {
            Some(k)
        }
    };
    let mut right_index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, row) in r.rows().iter().enumerate() {
        if let Some(k) = key(row, &rk) {
            right_index.entry(k).or_default().push(i);
        }
    }
    let mut left_index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, row) in l.rows().iter().enumerate() {
        if let Some(k) = key(row, &lk) {
            left_index.entry(k).or_default().push(i);
        }
    }
    let width = layout.columns.len();
    let emit = |lrow: Option<&Vec<Value>>, rrow: Option<&Vec<Value>>| -> Vec<Value> {
        layout
            .sources
            .iter()
            .map(|s| match *s {
                JoinSource::Left(i) => lrow.map_or(Value::Null, |r| r[i].clone()),
                JoinSource::Right(i) => rrow.map_or(Value::Null, |r| r[i].clone()),
                JoinSource::Key(li, ri) => match (lrow, rrow) {
                    (Some(a), _) => a[li].clone(),
                    (None, Some(b)) => b[ri].clone(),
                    (None, None) => Value::Null,
                },
            })
            .collect()
    };
    let mut rows: Vec<Vec<Value>> = Vec::new();
    let check = |n: usize| -> OpResult<()> {
        if n.saturating_mul(width) > max_cells {
            Err(OpError::new(ErrorCategory::Other, "cell budget exceeded in join"))
        } else {
            Ok(())
        }
    };
    let no_match: Vec<usize> = Vec::new();
    match p.how {
        JoinHow::Inner | JoinHow::Left | JoinHow::Outer => {
            let mut right_used = vec![false; r.num_rows()];
            for lrow in l.rows() {
                let matches = key(lrow, &lk)
                    .and_then(|k| right_index.get(&k))
                    .unwrap_or(&no_match);
                if matches.is_empty() {
                    if p.how != JoinHow::Inner {
                        rows.push(emit(Some(lrow), None));
                    }
                } else {
                    for &ri in matches {
                        right_used[ri] = true;
                        rows.push(emit(Some(lrow), Some(&r.rows()[ri])));
                    }
                }
                check(rows.len())?;
            }
            if p.how == JoinHow::Outer {
                for (ri, rrow) in r.rows().iter().enumerate() {
                    if !right_used[ri] {
                        rows.push(emit(None, Some(rrow)));
                    }
                }
            }
        }
        JoinHow::Right => {
            for rrow in r.rows() {
                let matches = key(rrow, &rk)
                    .and_then(|k| left_index.get(&k))
                    .unwrap_or(&no_match);
                if matches.is_empty() {
                    rows.push(emit(None, Some(rrow)));
                } else {
                    for &li in matches {
                        rows.push(emit(Some(&l.rows()[li]), Some(rrow)));
                    }
                }
                check(rows.len())?;
            }
        }
    }
    build(out_name, layout.columns, rows)
}

pub(super) fn union(l: &Table, r: &Table, p: &crate::dsl::UnionParams, out_name: &str) -> OpResult<Table> {
    if l.columns() != r.columns() {
        return Err(OpError::new(
            ErrorCategory::SemanticGuard,
            "union requires identical column names and types",
        ));
    }
    let mut rows: Vec<Vec<Value>> = l.rows().iter().chain(r.rows()).cloned().collect();
    if p.how == UnionHow::Distinct {
        let mut seen = HashSet::new();
        rows.retain(|row| seen.insert(row.clone()));
    }
    build(out_name, l.columns().to_vec(), rows)
}

fn cmp_tuple(a: &[Value], b: &[Value]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn aggregate<'a>(
    f: &AggFunc,
    ty: ColumnType,
    vals: impl Iterator<Item = &'a Value>,
) -> OpResult<Value> {
    let present: Vec<&Value> = vals.filter(|v| !v.is_null()).collect();
    Ok(match f {
        AggFunc::Count => Value::Int(present.len() as i64),
        AggFunc::Sum => match ty {
            ColumnType::Integer => {
                let mut acc: i64 = 0;
                for v in &present {
                    if let Value::Int(i) = v {
                        acc = acc.checked_add(*i).ok_or_else(|| {
                            OpError::new(ErrorCategory::Other, "integer overflow in sum")
                        })?;
                    }
                }
                Value::Int(acc)
            }
            _ => Value::Real(present.iter().filter_map(|v| v.as_f64()).sum()),
        },
        AggFunc::Mean => {
            if present.is_empty() {
                Value::Null
            } else {
                let nums: Vec<f64> = present.iter().filter_map(|v| v.as_f64()).collect();
                Value::Real(nums.iter().sum::<f64>() / nums.len() as f64)
            }
        }
        AggFunc::Min => present
            .iter()
            .min_by(|a, b| a.total_cmp(b))
            .map_or(Value::Null, |v| (*v).clone()),
        AggFunc::Max => present
            .iter()
            .max_by(|a, b| a.total_cmp(b))
            .map_or(Value::Null, |v| (*v).clone()),
        AggFunc::Other(name) => {
            return Err(OpError::new(
                ErrorCategory::AttributeError,
                format!("unknown aggregate function '{name}'"),
            ))
        }
    })
}

pub fn eval_condition(t: &Table, row: &[Value], c: &Condition) -> bool {
    match c {
        Condition::And(a, b) => eval_condition(t, row, a) && eval_condition(t, row, b),
        Condition::Or(a, b) => eval_condition(t, row, a) || eval_condition(t, row, b),
        Condition::Compare {
            column,
            op,
            literal,
        } => match t.column_index(column) {
            Some(i) => compare(&row[i], *op, literal),
            None => false,
        },
    }
}

/// `cell op literal`. Nulls and mismatched kinds compare false.
pub fn compare(cell: &Value, op: CmpOp, lit: &Literal) -> bool {
    let ord = match (cell, lit) {
        (Value::Int(a), Literal::Int(b)) => a.cmp(b),
        (Value::Int(_) | Value::Real(_), Literal::Int(_) | Literal::Real(_)) => {
            let a = cell.as_f64().expect("numeric");
            let b = match lit {
                Literal::Int(i) => *i as f64,
                Literal::Real(r) => *r,
                _ => unreachable!(),
            };
            match a.partial_cmp(&b) {
                Some(o) => o,
                None => return false,
            }
        }
        (Value::Text(a), Literal::Text(b)) => a.as_str().cmp(b.as_str()),
        (Value::Bool(a), Literal::Bool(b)) => a.cmp(b),
        _ => return false,
    };
    op.holds(ord)
}

/// Convert one cell to `to`. Nulls stay null.
pub fn cast_value(v: &Value, to: CastType) -> Result<Value, String> {
    Ok(match (v, to) {
        (Value::Null, _) => Value::Null,
        (Value::Int(i), CastType::Int) => Value::Int(*i),
        (Value::Int(i), CastType::Float) => Value::Real(*i as f64),
        (Value::Int(i), CastType::Bool) => Value::Bool(*i != 0),
        (Value::Real(r), CastType::Int) => {
            if !r.is_finite() || r.trunc() < i64::MIN as f64 || r.trunc() >= i64::MAX as f64 {
                return Err(format!("{r} is out of integer range"));
            }
            Value::Int(r.trunc() as i64)
        }
        (Value::Real(r), CastType::Float) => Value::Real(*r),
        (Value::Real(r), CastType::Bool) => Value::Bool(*r != 0.0),
        (Value::Bool(b), CastType::Int) => Value::Int(i64::from(*b)),
        (Value::Bool(b), CastType::Float) => Value::Real(if *b { 1.0 } else { 0.0 }),
        (Value::Bool(b), CastType::Bool) => Value::Bool(*b),
        (Value::Bool(b), CastType::Str) => Value::Text(if *b { "True" } else { "False" }.into()),
        (other, CastType::Str) => Value::Text(other.render()),
        (Value::Text(s), CastType::Int) => Value::Int(
            s.trim()
                .parse::<i64>()
                .map_err(|_| format!("invalid integer literal '{s}'"))?,
        ),
        (Value::Text(s), CastType::Float) => {
            let s2 = s.trim();
            if !is_decimal(s2) {
                return Err(format!("could not convert string to float: '{s}'"));
            }
            Value::Real(s2.parse::<f64>().map_err(|e| e.to_string())?)
        }
        (Value::Text(s), CastType::Bool) => match s.trim() {
            "true" | "True" => Value::Bool(true),
            "false" | "False" => Value::Bool(false),
            _ => return Err(format!("'{s}' is not a boolean")),
        },
    })
}
