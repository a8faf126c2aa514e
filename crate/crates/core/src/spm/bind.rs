use std::collections::HashSet;

use indexmap::IndexMap;
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;

use super::{join_layout, validate, SchemaState};
use crate::dsl::{
    AggFunc, CastParams, CastType, CmpOp, Condition, DeduplicateParams, DropHow, DropnaParams,
    ExplodeParams, FilterParams, GroupbyParams, JoinHow, JoinParams, Keep, Literal,
    OperatorCall, OperatorKind, PivotParams, RenameParams, SelectParams, SortParams,
    TopkParams, TransposeParams, UnionHow, UnionParams, UnpivotParams, WideToLongParams,
};
use crate::interp::{cast_value, eval_condition};
use crate::table::{ColumnType, Table, TableSet, Value};

/// Largest table the binder will transpose.
pub const TRANSPOSE_MAX_ROWS: usize = 64;
const PIVOT_MAX_COLUMNS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum BindingOutcome {
    Bound(OperatorCall),
    Unbindable(String),
}

impl BindingOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, BindingOutcome::Bound(_))
    }

    pub fn bound(&self) -> Option<&OperatorCall> {
        match self {
            BindingOutcome::Bound(c) => Some(c),
            BindingOutcome::Unbindable(_) => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            BindingOutcome::Bound(_) => None,
            BindingOutcome::Unbindable(r) => Some(r),
        }
    }
}

/// Sample a parameterization of `kind` for the current table of `state`.
/// Column choices come from the schema, literals and keys from `data`.
pub fn validate_and_bind<R: Rng + ?Sized>(
    kind: OperatorKind,
    state: &SchemaState,
    rng: &mut R,
    data: &TableSet,
) -> BindingOutcome {
    let Some(table) = data.get(state.current()) else {
        return BindingOutcome::Unbindable(format!("table '{}' has no data", state.current()));
    };
    let bound = match kind {
        OperatorKind::Filter => bind_filter(table, rng),
        OperatorKind::Dropna => bind_dropna(table, rng),
        OperatorKind::Deduplicate => bind_dedup(table, rng),
        OperatorKind::Cast => bind_cast(table, rng),
        OperatorKind::Join => bind_join(state, table, data, rng),
        OperatorKind::Union => bind_union(state, table, data, rng),
        OperatorKind::Groupby => bind_groupby(table, rng),
        OperatorKind::Pivot => bind_pivot(table, rng),
        OperatorKind::Unpivot => bind_unpivot(table, rng),
        OperatorKind::Explode => bind_explode(table, rng),
        OperatorKind::Transpose => bind_transpose(table),
        OperatorKind::WideToLong => bind_wide_to_long(table, rng),
        OperatorKind::Sort => bind_sort(table, rng),
        OperatorKind::Topk => bind_topk(table, rng),
        OperatorKind::Select => bind_select(table, rng),
        OperatorKind::Rename => bind_rename(table, rng),
    };
    match bound {
        Err(reason) => BindingOutcome::Unbindable(reason),
        Ok(call) => match validate(&call, state) {
            Ok(()) => BindingOutcome::Bound(call),
            Err(v) => BindingOutcome::Unbindable(v.message),
        },
    }
}

type Bind = Result<OperatorCall, String>;

fn names(t: &Table) -> Vec<String> {
    t.columns().iter().map(|c| c.name.clone()).collect()
}

/// Between `lo` and `hi` distinct items, kept in their original order.
fn subset<R: Rng + ?Sized>(rng: &mut R, items: &[String], lo: usize, hi: usize) -> Vec<String> {
    let hi = hi.min(items.len());
    let lo = lo.min(hi);
    let n = rng.random_range(lo..=hi);
    let mut idx = index::sample(rng, items.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

fn literal_of(v: &Value) -> Option<Literal> {
    match v {
        Value::Int(i) => Some(Literal::Int(*i)),
        Value::Real(r) if r.is_finite() => Some(Literal::Real(*r)),
        Value::Text(s) => Some(Literal::Text(s.clone())),
        Value::Bool(b) => Some(Literal::Bool(*b)),
        _ => None,
    }
}

fn comparison<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Option<Condition> {
    let candidates: Vec<usize> = (0..t.num_columns())
        .filter(|&i| t.column_values(i).any(|v| literal_of(v).is_some()))
        .collect();
    let &ci = candidates.choose(rng)?;
    let observed: Vec<&Value> = t
        .column_values(ci)
        .filter(|v| literal_of(v).is_some())
        .collect();
    let lit = literal_of(observed.choose(rng)?)?;
    let ops: &[CmpOp] = match t.columns()[ci].ty {
        ColumnType::Boolean => &[CmpOp::Eq, CmpOp::Ne],
        ColumnType::Text => &[CmpOp::Eq, CmpOp::Ne, CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Gt],
        _ => &CmpOp::ALL,
    };
    let op = *ops.choose(rng)?;
    Some(Condition::compare(t.columns()[ci].name.clone(), op, lit))
}

const FILTER_TRIES: usize = 8;

fn filter_condition<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Option<Condition> {
    let first = comparison(t, rng)?;
    Some(if rng.random_bool(0.2) {
        match comparison(t, rng) {
            Some(second) if rng.random_bool(0.5) => first.and(second),
            Some(second) => first.or(second),
            None => first,
        }
    } else {
        first
    })
}

/// Conditions are redrawn until one keeps at least one row.
fn bind_filter<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    for _ in 0..FILTER_TRIES {
        let condition = filter_condition(t, rng).ok_or("no column with observed values")?;
        if t.rows().iter().any(|r| eval_condition(t, r, &condition)) {
            return Ok(OperatorCall::Filter(FilterParams {
                table: None,
                condition,
            }));
        }
    }
    Err("no filter condition keeps any row".into())
}

fn bind_dropna<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let subset = rng
        .random_bool(0.5)
        .then(|| self::subset(rng, &names(t), 1, 3));
    let how = if rng.random_bool(0.5) {
        DropHow::Any
    } else {
        DropHow::All
    };
    Ok(OperatorCall::Dropna(DropnaParams {
        table: None,
        subset,
        how,
    }))
}

fn bind_dedup<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let subset = rng
        .random_bool(0.5)
        .then(|| self::subset(rng, &names(t), 1, 3));
    let keep = if rng.random_bool(0.5) {
        Keep::First
    } else {
        Keep::Last
    };
    Ok(OperatorCall::Deduplicate(DeduplicateParams {
        table: None,
        subset,
        keep,
    }))
}

fn bind_cast<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let mut candidates = Vec::new();
    for (ci, c) in t.columns().iter().enumerate() {
        for dtype in CastType::ALL {
            if dtype.column_type() == c.ty {
                continue;
            }
            if t.column_values(ci).all(|v| cast_value(v, dtype).is_ok()) {
                candidates.push((c.name.clone(), dtype));
            }
        }
    }
    let (column, dtype) = candidates.choose(rng).cloned().ok_or("no castable column")?;
    Ok(OperatorCall::Cast(CastParams {
        table: None,
        column,
        dtype,
    }))
}

fn value_set(t: &Table, ci: usize) -> HashSet<&Value> {
    t.column_values(ci).filter(|v| !v.is_null()).collect()
}

fn bind_join<R: Rng + ?Sized>(state: &SchemaState, l: &Table, data: &TableSet, rng: &mut R) -> Bind {
    let left_lineage = state.catalog.lineage.get(l.name()).cloned().unwrap_or_default();
    let partners: Vec<&str> = state
        .catalog
        .partner_candidates(l.name())
        .into_iter()
        .filter(|p| {
            state
                .catalog
                .lineage
                .get(*p)
                .is_some_and(|lin| lin.is_disjoint(&left_lineage))
        })
        .collect();
    if partners.is_empty() {
        return Err("join needs a second, unrelated live table".into());
    }
    let mut candidates = Vec::new();
    for (pi, p) in partners.iter().enumerate() {
        let Some(r) = data.get(p) else { continue };
        for (li, lc) in l.columns().iter().enumerate() {
            let lv = value_set(l, li);
            for (ri, rc) in r.columns().iter().enumerate() {
                if lc.ty != rc.ty {
                    continue;
                }
                if value_set(r, ri).iter().any(|v| lv.contains(v)) {
                    candidates.push((pi, li, ri));
                }
            }
        }
    }
    candidates.shuffle(rng);
    let how = *JoinHow::ALL.choose(rng).expect("non-empty");
    let suffixes = if rng.random_bool(0.5) {
        ["_x".to_string(), "_y".to_string()]
    } else {
        ["_left".to_string(), "_right".to_string()]
    };
    for (pi, li, ri) in candidates {
        let r = data.get(partners[pi]).expect("partner has data");
        let (ln, rn) = (&l.columns()[li].name, &r.columns()[ri].name);
        let (on, left_on, right_on) = if ln == rn {
            (Some(vec![ln.clone()]), None, None)
        } else {
            (None, Some(vec![ln.clone()]), Some(vec![rn.clone()]))
        };
        let params = JoinParams {
            left_table: None,
            right_table: (pi != 0).then(|| partners[pi].to_string()),
            on,
            left_on,
            right_on,
            how,
            suffixes: suffixes.clone(),
        };
        if join_layout(l.name(), l.columns(), r.name(), r.columns(), &params).is_ok() {
            return Ok(OperatorCall::Join(params));
        }
    }
    Err("no key-compatible column pair with overlapping values".into())
}

fn bind_union<R: Rng + ?Sized>(state: &SchemaState, l: &Table, data: &TableSet, rng: &mut R) -> Bind {
    let left_lineage = state.catalog.lineage.get(l.name()).cloned().unwrap_or_default();
    let partners = state.catalog.partner_candidates(l.name());
    let compatible: Vec<(usize, &str)> = partners
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            state
                .catalog
                .lineage
                .get(**p)
                .is_some_and(|lin| lin.is_disjoint(&left_lineage))
                && data.get(p).is_some_and(|r| r.columns() == l.columns())
        })
        .map(|(i, p)| (i, *p))
        .collect();
    let &(pi, p) = compatible
        .choose(rng)
        .ok_or("union needs a live table with an identical schema")?;
    let how = if rng.random_bool(0.5) {
        UnionHow::All
    } else {
        UnionHow::Distinct
    };
    Ok(OperatorCall::Union(UnionParams {
        left_table: None,
        right_table: (pi != 0).then(|| p.to_string()),
        how,
    }))
}

fn aggs_for(ty: ColumnType) -> &'static [AggFunc] {
    const NUMERIC: [AggFunc; 5] = AggFunc::KNOWN;
    const OTHER: [AggFunc; 3] = [AggFunc::Min, AggFunc::Max, AggFunc::Count];
    if ty.is_numeric() {
        &NUMERIC
    } else {
        &OTHER
    }
}

fn bind_groupby<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let all = names(t);
    if all.len() < 2 {
        return Err("groupby needs at least two columns".into());
    }
    let mut shuffled = all.clone();
    shuffled.shuffle(rng);
    let nby = rng.random_range(1..=2.min(all.len() - 1));
    let by_set: Vec<String> = shuffled[..nby].to_vec();
    let by: Vec<String> = all.iter().filter(|c| by_set.contains(c)).cloned().collect();
    let rest: Vec<String> = all.iter().filter(|c| !by.contains(c)).cloned().collect();
    let chosen = subset(rng, &rest, 1, 2);
    let mut agg = IndexMap::new();
    for c in chosen {
        let ty = t.column(&c).expect("column exists").ty;
        let f = aggs_for(ty).choose(rng).expect("non-empty").clone();
        agg.insert(c, f);
    }
    Ok(OperatorCall::Groupby(GroupbyParams {
        table: None,
        by,
        agg,
    }))
}

fn bind_pivot<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let cols = t.columns();
    let mut candidates = Vec::new();
    for (ii, ic) in cols.iter().enumerate() {
        for ci in 0..cols.len() {
            if ci == ii {
                continue;
            }
            let keys: Vec<String> = {
                let mut seen = Vec::new();
                for r in t.rows() {
                    if r[ii].is_null() || r[ci].is_null() {
                        continue;
                    }
                    let k = r[ci].render();
                    if !seen.contains(&k) {
                        seen.push(k);
                    }
                }
                seen
            };
            if keys.is_empty() || keys.len() > PIVOT_MAX_COLUMNS || keys.contains(&ic.name) {
                continue;
            }
            for (vi, _) in cols.iter().enumerate() {
                if vi != ii && vi != ci {
                    candidates.push((ii, ci, vi));
                }
            }
        }
    }
    let &(ii, ci, vi) = candidates.choose(rng).ok_or("no pivotable column triple")?;
    let aggfunc = aggs_for(cols[vi].ty).choose(rng).expect("non-empty").clone();
    Ok(OperatorCall::Pivot(PivotParams {
        table: None,
        index: vec![cols[ii].name.clone()],
        columns: cols[ci].name.clone(),
        values: cols[vi].name.clone(),
        aggfunc,
    }))
}

fn bind_unpivot<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let all = names(t);
    if all.len() < 2 {
        return Err("unpivot needs at least two columns".into());
    }
    let id_vars = subset(rng, &all, 0, (all.len() - 1).min(2));
    let rest: Vec<String> = all.iter().filter(|c| !id_vars.contains(c)).cloned().collect();
    let value_vars = subset(rng, &rest, 1, 3);
    const NAMES: [(&str, &str); 3] = [
        ("variable", "value"),
        ("attribute", "measurement"),
        ("field", "entry"),
    ];
    let &(var, val) = NAMES
        .iter()
        .filter(|(a, b)| !id_vars.iter().any(|c| c == a || c == b))
        .collect::<Vec<_>>()
        .choose(rng)
        .ok_or("no free names for the melted columns")?;
    Ok(OperatorCall::Unpivot(UnpivotParams {
        table: None,
        id_vars,
        value_vars,
        var_name: var.to_string(),
        value_name: val.to_string(),
    }))
}

fn bind_explode<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let text: Vec<usize> = (0..t.num_columns())
        .filter(|&i| t.columns()[i].ty == ColumnType::Text)
        .collect();
    let with_commas: Vec<usize> = text
        .iter()
        .copied()
        .filter(|&i| {
            t.column_values(i)
                .any(|v| matches!(v, Value::Text(s) if s.contains(',')))
        })
        .collect();
    let pool = if with_commas.is_empty() { &text } else { &with_commas };
    let &ci = pool.choose(rng).ok_or("no text column to explode")?;
    Ok(OperatorCall::Explode(ExplodeParams {
        table: None,
        column: t.columns()[ci].name.clone(),
        split_comma: true,
    }))
}

fn bind_transpose(t: &Table) -> Bind {
    if t.num_rows() == 0 || t.num_rows() > TRANSPOSE_MAX_ROWS {
        return Err(format!(
            "transpose needs between 1 and {TRANSPOSE_MAX_ROWS} rows"
        ));
    }
    Ok(OperatorCall::Transpose(TransposeParams::default()))
}

fn bind_wide_to_long<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let re = regex::Regex::new(r"^(.*?[^\d _-])([ _-]?)(\d+)$").expect("static pattern");
    let all = names(t);
    let mut groups: IndexMap<(String, String), Vec<String>> = IndexMap::new();
    for n in &all {
        if let Some(m) = re.captures(n) {
            groups
                .entry((m[1].to_string(), m[2].to_string()))
                .or_default()
                .push(n.clone());
        }
    }
    groups.retain(|(stub, _), _| !all.contains(stub));
    let keys: Vec<(String, String)> = groups.keys().cloned().collect();
    let (stub, sep) = keys.choose(rng).cloned().ok_or("no stub-suffixed columns")?;
    let stubbed: Vec<&String> = groups
        .iter()
        .filter(|((_, s), _)| *s == sep)
        .flat_map(|(_, v)| v)
        .collect();
    let mut stubnames = vec![stub.clone()];
    let others: Vec<String> = groups
        .keys()
        .filter(|(s, sp)| *sp == sep && *s != stub)
        .map(|(s, _)| s.clone())
        .collect();
    if let Some(o) = others.choose(rng) {
        if rng.random_bool(0.5) {
            stubnames.push(o.clone());
        }
    }
    let pattern = |s: &str| format!("^{}{}\\d+$", regex::escape(s), regex::escape(&sep));
    let matchers: Vec<regex::Regex> = stubnames
        .iter()
        .map(|s| regex::Regex::new(&pattern(s)).expect("escaped pattern"))
        .collect();
    let id_pool: Vec<String> = all
        .iter()
        .filter(|n| !stubbed.contains(n) && !matchers.iter().any(|m| m.is_match(n)))
        .cloned()
        .collect();
    let i = id_pool.choose(rng).cloned().ok_or("no id column left")?;
    let j = ["var", "suffix", "period"]
        .iter()
        .find(|j| **j != i && !stubnames.iter().any(|s| s == *j))
        .expect("three distinct candidates")
        .to_string();
    Ok(OperatorCall::WideToLong(WideToLongParams {
        table: None,
        stubnames,
        i: vec![i],
        j,
        sep,
        suffix: "\\d+".into(),
    }))
}

fn bind_sort<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let mut by = names(t);
    if by.is_empty() {
        return Err("no columns to sort by".into());
    }
    by.shuffle(rng);
    by.truncate(rng.random_range(1..=3.min(by.len())));
    let ascending = by.iter().map(|_| rng.random_bool(0.5)).collect();
    Ok(OperatorCall::Sort(SortParams {
        table: None,
        by,
        ascending,
    }))
}

fn bind_topk<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    if t.num_rows() == 0 {
        return Err("topk needs at least one row".into());
    }
    Ok(OperatorCall::Topk(TopkParams {
        table: None,
        k: rng.random_range(1..=t.num_rows()),
    }))
}

fn bind_select<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let mut columns = subset(rng, &names(t), 1, t.num_columns());
    if columns.is_empty() {
        return Err("no columns to select".into());
    }
    if rng.random_bool(0.3) {
        columns.shuffle(rng);
    }
    Ok(OperatorCall::Select(SelectParams {
        table: None,
        columns,
    }))
}

fn bind_rename<R: Rng + ?Sized>(t: &Table, rng: &mut R) -> Bind {
    let all = names(t);
    let chosen = subset(rng, &all, 1, 2);
    if chosen.is_empty() {
        return Err("no columns to rename".into());
    }
    let mut taken: HashSet<String> = all.iter().cloned().collect();
    let mut rename_map = IndexMap::new();
    for c in chosen {
        let options = [
            format!("{c}_new"),
            format!("new_{c}"),
            format!("{c} renamed"),
            c.to_uppercase(),
            format!("{c}_2"),
        ];
        let free: Vec<&String> = options.iter().filter(|o| !taken.contains(*o)).collect();
        if let Some(n) = free.choose(rng) {
            taken.insert((*n).clone());
            rename_map.insert(c, (*n).clone());
        }
    }
    if rename_map.is_empty() {
        return Err("no free target names".into());
    }
    Ok(OperatorCall::Rename(RenameParams {
        table: None,
        rename_map,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ingest_csv_reader, CurationOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m001() -> Table {
        let csv = "Name,Number of Contestants,Number of Approved,Year\n\
            University of Chile,253,125,2014\n\
            Pontifical Catholic University of Chile,202,118,2014\n\
            University of Concepción,108,46,2013\n\
            University of Chile,74,33,2015\n\
            Pontifical Catholic University of Chile,69,31,2015\n";
        ingest_csv_reader(csv.as_bytes(), "table_1", &CurationOptions::default()).unwrap()
    }

    #[test]
    fn filter_literals_are_observed_values() {
        let t = m001();
        let data = TableSet::from_tables([t.clone()]).unwrap();
        let state = SchemaState::from_tables(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let out = validate_and_bind(OperatorKind::Filter, &state, &mut rng, &data);
            let Some(OperatorCall::Filter(f)) = out.bound() else {
                panic!("{out:?}")
            };
            for (col, _, lit) in f.condition.comparisons() {
                let ci = t.column_index(col).unwrap();
                let observed: Vec<Option<Literal>> =
                    t.column_values(ci).map(literal_of).collect();
                assert!(observed.contains(&Some(lit.clone())), "{lit:?} not in {col}");
            }
        }
    }

    #[test]
    fn join_unbindable_with_one_table() {
        let data = TableSet::from_tables([m001()]).unwrap();
        let state = SchemaState::from_tables(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = validate_and_bind(OperatorKind::Join, &state, &mut rng, &data);
        assert!(!out.is_valid());
        assert!(!out.reason().unwrap().is_empty());
    }

    #[test]
    fn sort_binds_existing_columns() {
        let t = m001();
        let data = TableSet::from_tables([t.clone()]).unwrap();
        let state = SchemaState::from_tables(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            match validate_and_bind(OperatorKind::Sort, &state, &mut rng, &data) {
                BindingOutcome::Bound(OperatorCall::Sort(s)) => {
                    assert!(s.by.iter().all(|c| t.column_index(c).is_some()));
                    assert_eq!(s.by.len(), s.ascending.len());
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn binding_is_reproducible() {
        let data = TableSet::from_tables([m001()]).unwrap();
        let state = SchemaState::from_tables(&data);
        for kind in OperatorKind::ALL {
            let a = validate_and_bind(kind, &state, &mut ChaCha8Rng::seed_from_u64(9), &data);
            let b = validate_and_bind(kind, &state, &mut ChaCha8Rng::seed_from_u64(9), &data);
            assert_eq!(a, b, "{kind}");
        }
    }
}
