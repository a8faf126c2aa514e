//! Schema propagation: per-operator schema transforms, validity checks and
//! parameter binding for synthesis.

mod bind;

use std::collections::{BTreeSet, HashSet};

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::dsl::{
    AggFunc, Condition, JoinParams, Literal, OperatorCall, UnpivotParams,
    WideToLongParams,
};
use crate::table::{Column, ColumnType, TableSet};

pub use bind::{validate_and_bind, BindingOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    MissingTable,
    MissingColumn,
    Type,
    UnknownAggregate,
    Incompatible,
}

/// The first failed check of a call against a schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Violation {
            kind,
            message: message.into(),
        }
    }

    fn missing_column(table: &str, col: &str) -> Self {
        Violation::new(
            ViolationKind::MissingColumn,
            format!("column '{col}' not found in table '{table}'"),
        )
    }

    fn ty(message: impl Into<String>) -> Self {
        Violation::new(ViolationKind::Type, message)
    }

    fn incompatible(message: impl Into<String>) -> Self {
        Violation::new(ViolationKind::Incompatible, message)
    }
}

/// One schema entry: a concrete column, or a data-determined family of
/// columns whose names are only known after execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "field", rename_all = "lowercase")]
pub enum Field {
    Column(Column),
    Family {
        #[serde(rename = "type")]
        ty: ColumnType,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableSchema {
    pub fields: Vec<Field>,
}

/// Result of looking a column name up in a schema that may hold families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Known(ColumnType),
    Deferred(ColumnType),
    Missing,
}

impl Lookup {
    pub fn ty(self) -> Option<ColumnType> {
        match self {
            Lookup::Known(t) | Lookup::Deferred(t) => Some(t),
            Lookup::Missing => None,
        }
    }
}

impl TableSchema {
    pub fn from_columns(cols: &[Column]) -> Self {
        TableSchema {
            fields: cols.iter().cloned().map(Field::Column).collect(),
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.fields.iter().filter_map(|f| match f {
            Field::Column(c) => Some(c),
            Field::Family { .. } => None,
        })
    }

    pub fn has_family(&self) -> bool {
        self.fields.iter().any(|f| matches!(f, Field::Family { .. }))
    }

    fn family_type(&self) -> Option<ColumnType> {
        self.fields.iter().find_map(|f| match f {
            Field::Family { ty } => Some(*ty),
            Field::Column(_) => None,
        })
    }

    pub fn lookup(&self, name: &str) -> Lookup {
        if let Some(c) = self.columns().find(|c| c.name == name) {
            return Lookup::Known(c.ty);
        }
        match self.family_type() {
            Some(t) => Lookup::Deferred(t),
            None => Lookup::Missing,
        }
    }

    /// Concrete column list, if the schema holds no families.
    pub fn concrete(&self) -> Option<Vec<Column>> {
        if self.has_family() {
            None
        } else {
            Some(self.columns().cloned().collect())
        }
    }

    /// Whether a realized column list is what this schema predicts. Known
    /// columns must appear with the same types in the same relative order;
    /// any other realized column must carry a family type.
    pub fn covers(&self, realized: &[Column]) -> bool {
        let family_types: HashSet<ColumnType> = self
            .fields
            .iter()
            .filter_map(|f| match f {
                Field::Family { ty } => Some(*ty),
                Field::Column(_) => None,
            })
            .collect();
        let known: Vec<&Column> = self.columns().collect();
        let mut ki = 0;
        for col in realized {
            if ki < known.len() && known[ki] == col {
                ki += 1;
            } else if !family_types.contains(&col.ty) || known.iter().any(|k| k.name == col.name)
            {
                return false;
            }
        }
        ki == known.len()
    }
}

/// Live table names, the current table, and which source tables each live
/// table derives from. Shared by the schema state and the interpreter so
/// both resolve implicit table references identically.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Catalog {
    pub current: String,
    pub lineage: IndexMap<String, BTreeSet<String>>,
}

impl Catalog {
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let lineage: IndexMap<String, BTreeSet<String>> = names
            .into_iter()
            .map(|n| (n.to_string(), BTreeSet::from([n.to_string()])))
            .collect();
        let current = lineage.keys().next().cloned().unwrap_or_default();
        Catalog { current, lineage }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.lineage.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.lineage.keys().map(String::as_str)
    }

    /// Table a single-table operator acts on.
    pub fn resolve_target<'a>(&'a self, explicit: Option<&'a str>) -> Result<&'a str, Violation> {
        let name = explicit.unwrap_or(&self.current);
        if self.contains(name) {
            Ok(name)
        } else {
            Err(Violation::new(
                ViolationKind::MissingTable,
                format!("table '{name}' is not live"),
            ))
        }
    }

    /// Live tables a join or union with `left` may default its right side to,
    /// in preference order.
    pub fn partner_candidates(&self, left: &str) -> Vec<&str> {
        let empty = BTreeSet::new();
        let left_lineage = self.lineage.get(left).unwrap_or(&empty);
        let mut disjoint = Vec::new();
        let mut other = Vec::new();
        for (name, lin) in &self.lineage {
            if name == left {
                continue;
            }
            if lin.is_disjoint(left_lineage) {
                disjoint.push(name.as_str());
            } else {
                other.push(name.as_str());
            }
        }
        disjoint.extend(other);
        disjoint
    }

    /// Tables a join or union combines.
    pub fn resolve_pair(&self, call: &OperatorCall) -> Result<(String, String), Violation> {
        let (l, r) = call
            .table_pair()
            .ok_or_else(|| Violation::incompatible("not a two-table operator"))?;
        let left = self.resolve_target(l)?.to_string();
        let right = match r {
            Some(r) => self.resolve_target(Some(r))?.to_string(),
            None => self
                .partner_candidates(&left)
                .first()
                .map(|s| s.to_string())
                .ok_or_else(|| {
                    Violation::new(
                        ViolationKind::MissingTable,
                        format!("{} needs a second live table", call.kind()),
                    )
                })?,
        };
        if left == right {
            return Err(Violation::incompatible(format!(
                "{} of table '{left}' with itself",
                call.kind()
            )));
        }
        Ok((left, right))
    }

    pub fn result_name(call: &OperatorCall, left: &str, right: &str) -> String {
        let suffix = if matches!(call, OperatorCall::Join(_)) {
            "join"
        } else {
            "union"
        };
        format!("{left}_{right}_{suffix}")
    }

    /// Record the outcome of `call`, which produced or replaced `result`.
    pub fn record(&mut self, result: &str, inputs: &[&str]) {
        let mut lin = BTreeSet::new();
        for i in inputs {
            if let Some(l) = self.lineage.get(*i) {
                lin.extend(l.iter().cloned());
            }
        }
        if lin.is_empty() {
            lin.insert(result.to_string());
        }
        self.lineage.insert(result.to_string(), lin);
        self.current = result.to_string();
    }
}

/// The running schema, one entry per live table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaState {
    pub catalog: Catalog,
    pub tables: IndexMap<String, TableSchema>,
}

impl SchemaState {
    pub fn from_tables(data: &TableSet) -> Self {
        SchemaState {
            catalog: Catalog::from_names(data.names()),
            tables: data
                .iter()
                .map(|t| (t.name().to_string(), TableSchema::from_columns(t.columns())))
                .collect(),
        }
    }

    pub fn single(name: &str, cols: &[Column]) -> Self {
        SchemaState {
            catalog: Catalog::from_names([name]),
            tables: IndexMap::from([(name.to_string(), TableSchema::from_columns(cols))]),
        }
    }

    pub fn current(&self) -> &str {
        &self.catalog.current
    }

    pub fn current_schema(&self) -> Option<&TableSchema> {
        self.tables.get(&self.catalog.current)
    }

    pub fn get(&self, name: &str) -> Option<&TableSchema> {
        self.tables.get(name)
    }

    fn schema_of(&self, name: &str) -> Result<&TableSchema, Violation> {
        self.tables.get(name).ok_or_else(|| {
            Violation::new(
                ViolationKind::MissingTable,
                format!("table '{name}' is not live"),
            )
        })
    }

    /// Replace the predicted schema of one table with its realized columns.
    pub fn realize(&mut self, name: &str, cols: &[Column]) {
        self.tables
            .insert(name.to_string(), TableSchema::from_columns(cols));
    }
}

fn require_columns<'a>(
    table: &str,
    schema: &TableSchema,
    names: impl IntoIterator<Item = &'a String>,
) -> Result<(), Violation> {
    for n in names {
        if schema.lookup(n) == Lookup::Missing {
            return Err(Violation::missing_column(table, n));
        }
    }
    Ok(())
}

fn require_type(
    table: &str,
    schema: &TableSchema,
    name: &str,
) -> Result<ColumnType, Violation> {
    schema
        .lookup(name)
        .ty()
        .ok_or_else(|| Violation::missing_column(table, name))
}

/// Output type of an aggregate over a column of type `input`.
pub fn agg_output_type(f: &AggFunc, input: ColumnType) -> ColumnType {
    match f {
        AggFunc::Count => ColumnType::Integer,
        AggFunc::Mean => ColumnType::Real,
        _ => input,
    }
}

/// Whether `f` may aggregate a column of type `ty`.
pub fn check_agg(f: &AggFunc, col: &str, ty: ColumnType) -> Result<(), Violation> {
    match f {
        AggFunc::Other(name) => Err(Violation::new(
            ViolationKind::UnknownAggregate,
            format!("unknown aggregate function '{name}'"),
        )),
        AggFunc::Sum | AggFunc::Mean if !ty.is_numeric() => Err(Violation::ty(format!(
            "cannot {f} column '{col}' of type {ty}"
        ))),
        _ => Ok(()),
    }
}

/// Whether a literal may be compared with a column of type `ty`.
pub fn literal_fits(ty: ColumnType, lit: &Literal) -> bool {
    matches!(
        (ty, lit),
        (ColumnType::Integer | ColumnType::Real, Literal::Int(_) | Literal::Real(_))
            | (ColumnType::Text, Literal::Text(_))
            | (ColumnType::Boolean, Literal::Bool(_))
    )
}

fn check_condition(table: &str, schema: &TableSchema, cond: &Condition) -> Result<(), Violation> {
    for (col, _, lit) in cond.comparisons() {
        let ty = require_type(table, schema, col)?;
        if !literal_fits(ty, lit) {
            return Err(Violation::ty(format!(
                "cannot compare column '{col}' of type {ty} with {}",
                literal_kind(lit)
            )));
        }
    }
    Ok(())
}

fn literal_kind(lit: &Literal) -> &'static str {
    match lit {
        Literal::Int(_) => "an integer literal",
        Literal::Real(_) => "a real literal",
        Literal::Text(_) => "a text literal",
        Literal::Bool(_) => "a boolean literal",
    }
}

fn ensure_unique<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<(), Violation> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Violation::incompatible(format!(
                "operation would produce duplicate column '{n}'"
            )));
        }
    }
    Ok(())
}

/// Where each output column of a join comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinSource {
    Left(usize),
    Right(usize),
    /// An `on` key: the left value when a left row is present, else the right.
    Key(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinLayout {
    pub columns: Vec<Column>,
    pub sources: Vec<JoinSource>,
    pub key_indices: Vec<(usize, usize)>,
}

/// Output layout of a join over two concrete column lists. Key columns
/// shared by name appear once at their left position; other shared names
/// receive the suffixes.
pub fn join_layout(
    left_name: &str,
    left: &[Column],
    right_name: &str,
    right: &[Column],
    p: &JoinParams,
) -> Result<JoinLayout, Violation> {
    let pos = |cols: &[Column], n: &str| cols.iter().position(|c| c.name == n);
    let mut key_indices = Vec::new();
    for (l, r) in p.key_pairs() {
        let li = pos(left, l).ok_or_else(|| Violation::missing_column(left_name, l))?;
        let ri = pos(right, r).ok_or_else(|| Violation::missing_column(right_name, r))?;
        if left[li].ty != right[ri].ty {
            return Err(Violation::ty(format!(
                "join keys '{l}' ({}) and '{r}' ({}) have different types",
                left[li].ty, right[ri].ty
            )));
        }
        key_indices.push((li, ri));
    }
    let coalesced: Vec<(usize, usize)> = key_indices
        .iter()
        .copied()
        .filter(|&(li, ri)| left[li].name == right[ri].name)
        .collect();
    let shared: HashSet<&str> = left
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| right.iter().any(|c| c.name == *n))
        .collect();
    let mut columns = Vec::new();
    let mut sources = Vec::new();
    for (i, c) in left.iter().enumerate() {
        if let Some(&(li, ri)) = coalesced.iter().find(|(li, _)| *li == i) {
            columns.push(c.clone());
            sources.push(JoinSource::Key(li, ri));
        } else if shared.contains(c.name.as_str()) {
            columns.push(Column::new(format!("{}{}", c.name, p.suffixes[0]), c.ty));
            sources.push(JoinSource::Left(i));
        } else {
            columns.push(c.clone());
            sources.push(JoinSource::Left(i));
        }
    }
    for (i, c) in right.iter().enumerate() {
        if coalesced.iter().any(|(_, ri)| *ri == i) {
            continue;
        }
        let name = if shared.contains(c.name.as_str()) {
            format!("{}{}", c.name, p.suffixes[1])
        } else {
            c.name.clone()
        };
        columns.push(Column::new(name, c.ty));
        sources.push(JoinSource::Right(i));
    }
    ensure_unique(columns.iter().map(|c| c.name.as_str()))?;
    Ok(JoinLayout {
        columns,
        sources,
        key_indices,
    })
}

/// Stub matching for wide_to_long over a concrete column list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WideLayout {
    pub i_indices: Vec<usize>,
    /// Distinct suffixes in order of first appearance.
    pub suffixes: Vec<String>,
    /// Per stub: output type and, per suffix, the source column index.
    pub stubs: Vec<(ColumnType, Vec<Option<usize>>)>,
    pub columns: Vec<Column>,
}

pub fn wide_layout(
    table: &str,
    cols: &[Column],
    p: &WideToLongParams,
) -> Result<WideLayout, Violation> {
    let mut i_indices = Vec::new();
    for n in &p.i {
        let idx = cols
            .iter()
            .position(|c| &c.name == n)
            .ok_or_else(|| Violation::missing_column(table, n))?;
        i_indices.push(idx);
    }
    let mut suffixes: Vec<String> = Vec::new();
    let mut matches: Vec<Vec<(String, usize)>> = Vec::new();
    for stub in &p.stubnames {
        if cols.iter().any(|c| &c.name == stub) {
            return Err(Violation::incompatible(format!(
                "stub name '{stub}' is identical to a column name"
            )));
        }
        let pattern = format!(
            "^{}{}({})$",
            regex::escape(stub),
            regex::escape(&p.sep),
            p.suffix
        );
        let re = regex::Regex::new(&pattern)
            .map_err(|e| Violation::incompatible(format!("invalid suffix pattern: {e}")))?;
        let mut found = Vec::new();
        for (idx, c) in cols.iter().enumerate() {
            if let Some(m) = re.captures(&c.name) {
                if i_indices.contains(&idx) {
                    return Err(Violation::incompatible(format!(
                        "column '{}' is both an id column and a stub column",
                        c.name
                    )));
                }
                let suffix = m.get(1).map_or("", |g| g.as_str()).to_string();
                if !suffixes.contains(&suffix) {
                    suffixes.push(suffix.clone());
                }
                found.push((suffix, idx));
            }
        }
        if found.is_empty() {
            return Err(Violation::missing_column(table, &format!("{stub}{}*", p.sep)));
        }
        matches.push(found);
    }
    let mut columns: Vec<Column> = i_indices.iter().map(|&i| cols[i].clone()).collect();
    columns.push(Column::new(p.j.clone(), ColumnType::Text));
    let mut stubs = Vec::new();
    for (stub, found) in p.stubnames.iter().zip(&matches) {
        let ty = found
            .iter()
            .map(|(_, idx)| cols[*idx].ty)
            .reduce(ColumnType::supertype)
            .expect("non-empty match list");
        let per_suffix = suffixes
            .iter()
            .map(|s| found.iter().find(|(fs, _)| fs == s).map(|(_, idx)| *idx))
            .collect();
        columns.push(Column::new(stub.clone(), ty));
        stubs.push((ty, per_suffix));
    }
    ensure_unique(columns.iter().map(|c| c.name.as_str()))?;
    Ok(WideLayout {
        i_indices,
        suffixes,
        stubs,
        columns,
    })
}

/// Output schema of unpivot: id columns, the variable column and the value
/// column typed as the common supertype of the value columns.
pub fn unpivot_columns(
    table: &str,
    schema: &TableSchema,
    p: &UnpivotParams,
) -> Result<Vec<Column>, Violation> {
    require_columns(table, schema, p.id_vars.iter().chain(&p.value_vars))?;
    if let Some(v) = p.value_vars.iter().find(|v| p.id_vars.contains(v)) {
        return Err(Violation::incompatible(format!(
            "column '{v}' is both an id and a value column"
        )));
    }
    let mut cols: Vec<Column> = p
        .id_vars
        .iter()
        .map(|n| Column::new(n.clone(), schema.lookup(n).ty().expect("checked")))
        .collect();
    let value_ty = p
        .value_vars
        .iter()
        .map(|n| schema.lookup(n).ty().expect("checked"))
        .reduce(ColumnType::supertype)
        .expect("value_vars non-empty");
    cols.push(Column::new(p.var_name.clone(), ColumnType::Text));
    cols.push(Column::new(p.value_name.clone(), value_ty));
    ensure_unique(cols.iter().map(|c| c.name.as_str()))?;
    Ok(cols)
}

/// Check `call` against `state` without changing it.
pub fn validate(call: &OperatorCall, state: &SchemaState) -> Result<(), Violation> {
    propagate(call, state).map(|_| ())
}

/// The schema after `call`. Fails with the first violated check.
pub fn propagate(call: &OperatorCall, state: &SchemaState) -> Result<SchemaState, Violation> {
    call.check_structure().map_err(Violation::incompatible)?;
    let mut next = state.clone();
    match call {
        OperatorCall::Join(_) | OperatorCall::Union(_) => {
            let (l, r) = state.catalog.resolve_pair(call)?;
            let ls = state.schema_of(&l)?;
            let rs = state.schema_of(&r)?;
            let out = match call {
                OperatorCall::Join(p) => join_schema(&l, ls, &r, rs, p)?,
                _ => {
                    if ls != rs {
                        return Err(Violation::incompatible(format!(
                            "union of '{l}' and '{r}' requires identical column names and types"
                        )));
                    }
                    ls.clone()
                }
            };
            let name = Catalog::result_name(call, &l, &r);
            next.tables.insert(name.clone(), out);
            next.catalog.record(&name, &[&l, &r]);
        }
        _ => {
            let name = state
                .catalog
                .resolve_target(call.target_table())?
                .to_string();
            let schema = state.schema_of(&name)?;
            let out = single_schema(&name, schema, call)?;
            next.tables.insert(name.clone(), out);
            next.catalog.record(&name, &[&name]);
        }
    }
    Ok(next)
}

fn join_schema(
    l: &str,
    ls: &TableSchema,
    r: &str,
    rs: &TableSchema,
    p: &JoinParams,
) -> Result<TableSchema, Violation> {
    if let (Some(lc), Some(rc)) = (ls.concrete(), rs.concrete()) {
        let layout = join_layout(l, &lc, r, &rc, p)?;
        return Ok(TableSchema::from_columns(&layout.columns));
    }
    // With a family on either side the key columns are still checked, and
    // the non-key part of the output is left data-determined.
    for (lk, rk) in p.key_pairs() {
        let lt = require_type(l, ls, lk)?;
        let rt = require_type(r, rs, rk)?;
        if lt != rt {
            return Err(Violation::ty(format!(
                "join keys '{lk}' ({lt}) and '{rk}' ({rt}) have different types"
            )));
        }
    }
    let mut fields = Vec::new();
    for f in ls.fields.iter().chain(&rs.fields) {
        match f {
            Field::Family { .. } => fields.push(f.clone()),
            Field::Column(c) => {
                if !fields.contains(&Field::Family { ty: c.ty }) {
                    fields.push(Field::Family { ty: c.ty });
                }
            }
        }
    }
    Ok(TableSchema { fields })
}

fn single_schema(
    table: &str,
    schema: &TableSchema,
    call: &OperatorCall,
) -> Result<TableSchema, Violation> {
    let keep = || Ok(schema.clone());
    match call {
        OperatorCall::Filter(p) => {
            check_condition(table, schema, &p.condition)?;
            keep()
        }
        OperatorCall::Dropna(p) => {
            if let Some(s) = &p.subset {
                require_columns(table, schema, s)?;
            }
            keep()
        }
        OperatorCall::Deduplicate(p) => {
            if let Some(s) = &p.subset {
                require_columns(table, schema, s)?;
            }
            keep()
        }
        OperatorCall::Sort(p) => {
            require_columns(table, schema, &p.by)?;
            keep()
        }
        OperatorCall::Topk(_) => keep(),
        OperatorCall::Cast(p) => {
            require_type(table, schema, &p.column)?;
            let mut out = schema.clone();
            let target = p.dtype.column_type();
            match out
                .fields
                .iter_mut()
                .find(|f| matches!(f, Field::Column(c) if c.name == p.column))
            {
                Some(Field::Column(c)) => c.ty = target,
                _ => out.fields.push(Field::Family { ty: target }),
            }
            Ok(out)
        }
        OperatorCall::Select(p) => {
            let mut cols = Vec::new();
            for n in &p.columns {
                cols.push(Column::new(n.clone(), require_type(table, schema, n)?));
            }
            Ok(TableSchema::from_columns(&cols))
        }
        OperatorCall::Rename(p) => {
            require_columns(table, schema, p.rename_map.keys())?;
            let mut out = schema.clone();
            for f in &mut out.fields {
                if let Field::Column(c) = f {
                    if let Some(new) = p.rename_map.get(&c.name) {
                        c.name = new.clone();
                    }
                }
            }
            for (old, new) in &p.rename_map {
                if !schema.columns().any(|c| &c.name == old) {
                    let ty = schema.lookup(old).ty().expect("checked");
                    out.fields.push(Field::Column(Column::new(new.clone(), ty)));
                }
            }
            ensure_unique(out.columns().map(|c| c.name.as_str()))?;
            Ok(out)
        }
        OperatorCall::Groupby(p) => {
            let mut cols = Vec::new();
            for n in &p.by {
                cols.push(Column::new(n.clone(), require_type(table, schema, n)?));
            }
            for (col, f) in &p.agg {
                let ty = require_type(table, schema, col)?;
                if p.by.contains(col) {
                    return Err(Violation::incompatible(format!(
                        "column '{col}' is both a group key and aggregated"
                    )));
                }
                check_agg(f, col, ty)?;
                cols.push(Column::new(col.clone(), agg_output_type(f, ty)));
            }
            Ok(TableSchema::from_columns(&cols))
        }
        OperatorCall::Pivot(p) => {
            let mut fields = Vec::new();
            for n in &p.index {
                fields.push(Field::Column(Column::new(
                    n.clone(),
                    require_type(table, schema, n)?,
                )));
            }
            require_type(table, schema, &p.columns)?;
            let vty = require_type(table, schema, &p.values)?;
            if p.index.contains(&p.columns) || p.index.contains(&p.values) || p.columns == p.values
            {
                return Err(Violation::incompatible(
                    "pivot index, columns and values must be distinct columns",
                ));
            }
            check_agg(&p.aggfunc, &p.values, vty)?;
            fields.push(Field::Family {
                ty: agg_output_type(&p.aggfunc, vty),
            });
            Ok(TableSchema { fields })
        }
        OperatorCall::Unpivot(p) => Ok(TableSchema::from_columns(&unpivot_columns(
            table, schema, p,
        )?)),
        OperatorCall::Explode(p) => {
            let ty = require_type(table, schema, &p.column)?;
            if ty != ColumnType::Text {
                return Err(Violation::ty(format!(
                    "explode requires a text column, '{}' is {ty}",
                    p.column
                )));
            }
            keep()
        }
        OperatorCall::Transpose(_) => Ok(TableSchema {
            fields: vec![
                Field::Column(Column::new("index", ColumnType::Text)),
                Field::Family {
                    ty: ColumnType::Text,
                },
            ],
        }),
        OperatorCall::WideToLong(p) => match schema.concrete() {
            Some(cols) => Ok(TableSchema::from_columns(
                &wide_layout(table, &cols, p)?.columns,
            )),
            None => {
                let mut fields = Vec::new();
                for n in &p.i {
                    fields.push(Field::Column(Column::new(
                        n.clone(),
                        require_type(table, schema, n)?,
                    )));
                }
                fields.push(Field::Column(Column::new(p.j.clone(), ColumnType::Text)));
                for t in [ColumnType::Integer, ColumnType::Real, ColumnType::Text, ColumnType::Boolean] {
                    fields.push(Field::Family { ty: t });
                }
                Ok(TableSchema { fields })
            }
        },
        OperatorCall::Join(_) | OperatorCall::Union(_) => unreachable!("handled by caller"),
    }
}
