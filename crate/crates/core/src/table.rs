//! In-memory typed tables, CSV/JSON ingestion and curation.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Strings mapped to null during curation (after trimming).
pub const NULL_LEXICON: [&str; 5] = ["NA", "Null", "null", "N/A", ""];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("irregular table: {0}")]
    Irregular(String),
    #[error("invalid table JSON: {0}")]
    Json(String),
}

/// Kind of a column. Every non-null cell of a column holds a value of this kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Integer,
    Real,
    Text,
    Boolean,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Integer | ColumnType::Real)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Integer => "integer",
            ColumnType::Real => "real",
            ColumnType::Text => "text",
            ColumnType::Boolean => "boolean",
        }
    }

    /// Smallest type both inputs convert into without loss of meaning.
    pub fn supertype(self, other: ColumnType) -> ColumnType {
        match (self, other) {
            (a, b) if a == b => a,
            (ColumnType::Integer, ColumnType::Real) | (ColumnType::Real, ColumnType::Integer) => {
                ColumnType::Real
            }
            _ => ColumnType::Text,
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single cell.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn column_type(&self) -> Option<ColumnType> {
        match self {
            Value::Null => None,
            Value::Int(_) => Some(ColumnType::Integer),
            Value::Real(_) => Some(ColumnType::Real),
            Value::Text(_) => Some(ColumnType::Text),
            Value::Bool(_) => Some(ColumnType::Boolean),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Text form used for CSV output and text casts. Reals always carry a
    /// decimal point or exponent so they re-infer as reals.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Int(i) => i.to_string(),
            Value::Real(r) => format_real(*r),
            Value::Text(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
        }
    }

    /// Render with at most `digits` fractional digits (trailing zeros dropped).
    pub fn render_with_digits(&self, digits: usize) -> String {
        match self {
            Value::Real(r) if r.is_finite() => {
                let s = format!("{:.*}", digits, r);
                let s = if s.contains('.') {
                    let t = s.trim_end_matches('0');
                    if t.ends_with('.') {
                        format!("{t}0")
                    } else {
                        t.to_string()
                    }
                } else {
                    s
                };
                if s == "-0.0" {
                    "0.0".to_string()
                } else {
                    s
                }
            }
            other => other.render(),
        }
    }

    /// Convert into `ty`, used when values from differently typed columns
    /// are stacked into one column (unpivot, wide_to_long).
    pub fn widen_to(&self, ty: ColumnType) -> Value {
        match (self, ty) {
            (Value::Null, _) => Value::Null,
            (Value::Int(i), ColumnType::Real) => Value::Real(*i as f64),
            (v, ColumnType::Text) if !matches!(v, Value::Text(_)) => Value::Text(v.render()),
            (v, _) => v.clone(),
        }
    }

    fn type_rank(&self) -> u8 {
        match self {
            Value::Int(_) | Value::Real(_) => 0,
            Value::Text(_) => 1,
            Value::Bool(_) => 2,
            Value::Null => 3,
        }
    }

    /// Total order: numbers (compared numerically), text, booleans, then null.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Null, Value::Null) => Ordering::Equal,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => a.type_rank().cmp(&b.type_rank()),
            },
        }
    }
}

/// Shortest round-trip representation of a real, always with a '.' or exponent.
pub fn format_real(r: f64) -> String {
    let s = format!("{r:?}");
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

impl PartialEq for Value {
    /// Structural equality; reals compare by bit pattern with -0.0 == 0.0.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => canonical_bits(*a) == canonical_bits(*b),
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Value::Null => {}
            Value::Int(i) => i.hash(state),
            Value::Real(r) => canonical_bits(*r).hash(state),
            Value::Text(s) => s.hash(state),
            Value::Bool(b) => b.hash(state),
        }
    }
}

fn canonical_bits(r: f64) -> u64 {
    if r == 0.0 {
        0f64.to_bits()
    } else {
        r.to_bits()
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            other => f.write_str(&other.render()),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_none(),
            Value::Int(i) => s.serialize_i64(*i),
            Value::Real(r) => s.serialize_f64(*r),
            Value::Text(t) => s.serialize_str(t),
            Value::Bool(b) => s.serialize_bool(*b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column {
            name: name.into(),
            ty,
        }
    }
}

/// A named, typed table. Construction checks arity, name uniqueness and cell kinds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    name: String,
    columns: Vec<Column>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(
        name: impl Into<String>,
        columns: Vec<Column>,
        rows: Vec<Vec<Value>>,
    ) -> Result<Table, TableError> {
        let name = name.into();
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(TableError::Irregular(format!(
                    "duplicate column name '{}' in table '{name}'",
                    c.name
                )));
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(TableError::Irregular(format!(
                    "row {r} of '{name}' has {} cells, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
            for (cell, col) in row.iter().zip(&columns) {
                if let Some(kind) = cell.column_type() {
                    if kind != col.ty {
                        return Err(TableError::Irregular(format!(
                            "row {r} of '{name}': {kind} cell in {} column '{}'",
                            col.ty, col.name
                        )));
                    }
                }
            }
        }
        Ok(Table {
            name,
            columns,
            rows,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_values(&self, idx: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| &r[idx])
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Table {
        self.name = name.into();
        self
    }

    pub fn into_parts(self) -> (String, Vec<Column>, Vec<Vec<Value>>) {
        (self.name, self.columns, self.rows)
    }

    pub fn head(&self, n: usize) -> Table {
        Table {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: self.rows.iter().take(n).cloned().collect(),
        }
    }

    /// The ordered (name, type) schema of the table.
    pub fn schema(&self) -> Vec<Column> {
        self.columns.clone()
    }

    pub fn cell_count(&self) -> usize {
        self.rows.len() * self.columns.len().max(1)
    }

    pub fn to_csv_string(&self, opts: &CsvWriteOptions) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, opts)
            .expect("writing CSV into memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    pub fn write_csv<W: Write>(&self, w: W, opts: &CsvWriteOptions) -> Result<(), TableError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(|v| match opts.float_digits {
                Some(d) => v.render_with_digits(d),
                None => v.render(),
            }))?;
        }
        wtr.flush().map_err(|e| TableError::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn to_json(&self) -> TableJson {
        TableJson {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(value_to_json).collect())
                .collect(),
        }
    }

    pub fn from_json(json: TableJson) -> Result<Table, TableError> {
        let mut rows = Vec::with_capacity(json.rows.len());
        for (r, raw) in json.rows.into_iter().enumerate() {
            if raw.len() != json.columns.len() {
                return Err(TableError::Irregular(format!(
                    "row {r} has {} cells, expected {}",
                    raw.len(),
                    json.columns.len()
                )));
            }
            let mut row = Vec::with_capacity(raw.len());
            for (cell, col) in raw.into_iter().zip(&json.columns) {
                row.push(value_from_json(cell, col.ty).map_err(|m| {
                    TableError::Json(format!("row {r}, column '{}': {m}", col.name))
                })?);
            }
            rows.push(row);
        }
        Table::new(json.name, json.columns, rows)
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = TableJson::deserialize(d)?;
        Table::from_json(json).map_err(serde::de::Error::custom)
    }
}

/// JSON wire form: `{name, columns: [{name, type}], rows: [[...]]}` with nulls as JSON null.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableJson {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<serde_json::Value>>,
}

fn value_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Null => serde_json::Value::Null,
        Value::Int(i) => serde_json::Value::from(*i),
        Value::Real(r) => serde_json::Number::from_f64(*r)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null),
        Value::Text(s) => serde_json::Value::String(s.clone()),
        Value::Bool(b) => serde_json::Value::Bool(*b),
    }
}

fn value_from_json(v: serde_json::Value, ty: ColumnType) -> Result<Value, String> {
    use serde_json::Value as J;
    match (v, ty) {
        (J::Null, _) => Ok(Value::Null),
        (J::Number(n), ColumnType::Integer) => n
            .as_i64()
            .map(Value::Int)
            .ok_or_else(|| format!("{n} is not a 64-bit integer")),
        (J::Number(n), ColumnType::Real) => n
            .as_f64()
            .map(Value::Real)
            .ok_or_else(|| format!("{n} is not a real")),
        (J::String(s), ColumnType::Text) => Ok(Value::Text(s)),
        (J::Bool(b), ColumnType::Boolean) => Ok(Value::Bool(b)),
        (other, ty) => Err(format!("{other} does not fit a {ty} column")),
    }
}

#[derive(Debug, Clone, Default)]
pub struct CsvWriteOptions {
    /// Fractional digits for reals; `None` writes the exact round-trip form.
    pub float_digits: Option<usize>,
}

impl CsvWriteOptions {
    pub fn display() -> Self {
        CsvWriteOptions {
            float_digits: Some(6),
        }
    }
}

/// Ingestion options. With `curate` off only empty fields become null.
#[derive(Debug, Clone)]
pub struct CurationOptions {
    pub curate: bool,
    pub row_cap: Option<usize>,
}

impl Default for CurationOptions {
    fn default() -> Self {
        CurationOptions {
            curate: true,
            row_cap: Some(50),
        }
    }
}

impl CurationOptions {
    pub fn raw() -> Self {
        CurationOptions {
            curate: false,
            row_cap: None,
        }
    }
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    name: &str,
    options: &CurationOptions,
) -> Result<Table, TableError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| TableError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    ingest_csv_reader(file, name, options)
}

pub fn ingest_csv_reader<R: Read>(
    reader: R,
    name: &str,
    options: &CurationOptions,
) -> Result<Table, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| {
            if options.curate {
                h.trim().to_string()
            } else {
                h.to_string()
            }
        })
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(TableError::Irregular(format!("table '{name}' has no columns")));
    }
    let mut raw: Vec<Vec<Option<String>>> = Vec::new();
    for rec in rdr.records() {
        if let Some(cap) = options.row_cap {
            if options.curate && raw.len() >= cap {
                break;
            }
        }
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(TableError::Irregular(format!(
                "record with {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        raw.push(rec.iter().map(|cell| curate_cell(cell, options.curate)).collect());
    }
    let mut columns = Vec::with_capacity(headers.len());
    for (j, h) in headers.iter().enumerate() {
        let ty = infer_types(raw.iter().map(|r| r[j].as_deref()));
        columns.push(Column::new(h.clone(), ty));
    }
    let rows = raw
        .into_iter()
        .map(|r| {
            r.into_iter()
                .zip(&columns)
                .map(|(cell, col)| match cell {
                    None => Value::Null,
                    Some(s) => parse_cell(&s, col.ty),
                })
                .collect()
        })
        .collect();
    Table::new(name, columns, rows)
}

fn curate_cell(cell: &str, curate: bool) -> Option<String> {
    if curate {
        let t = cell.trim();
        if NULL_LEXICON.contains(&t) {
            None
        } else {
            Some(t.to_string())
        }
    } else if cell.is_empty() {
        None
    } else {
        Some(cell.to_string())
    }
}

fn parse_cell(s: &str, ty: ColumnType) -> Value {
    match ty {
        ColumnType::Integer => Value::Int(s.parse().expect("inferred integer")),
        ColumnType::Real => Value::Real(s.parse().expect("inferred real")),
        ColumnType::Boolean => Value::Bool(matches!(s, "true" | "True")),
        ColumnType::Text => Value::Text(s.to_string()),
    }
}

/// Decimal number syntax: optional sign, digits with optional fraction, optional exponent.
pub fn is_decimal(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = i - int_start;
    let mut frac_digits = 0;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let fs = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        frac_digits = i - fs;
    }
    if int_digits + frac_digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let es = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == es {
            return false;
        }
    }
    i == b.len()
}

fn is_integer_literal(s: &str) -> bool {
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|c| c.is_ascii_digit())
}

/// Infer a column type from raw cells (`None` = null). Integer literals that
/// overflow i64 demote the column to real; all-null columns are text.
pub fn infer_types<'a>(cells: impl IntoIterator<Item = Option<&'a str>>) -> ColumnType {
    let mut all_int = true;
    let mut all_num = true;
    let mut all_bool = true;
    let mut any = false;
    for s in cells.into_iter().flatten() {
        any = true;
        if all_int && !(is_integer_literal(s) && s.parse::<i64>().is_ok()) {
            all_int = false;
        }
        if all_num && !is_decimal(s) {
            all_num = false;
        }
        if all_bool && !matches!(s, "true" | "false" | "True" | "False") {
            all_bool = false;
        }
        if !all_int && !all_num && !all_bool {
            return ColumnType::Text;
        }
    }
    if !any {
        ColumnType::Text
    } else if all_int {
        ColumnType::Integer
    } else if all_num {
        ColumnType::Real
    } else if all_bool {
        ColumnType::Boolean
    } else {
        ColumnType::Text
    }
}

/// A set of named tables. Iteration follows insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableSet {
    tables: IndexMap<String, Table>,
}

impl TableSet {
    pub fn new() -> Self {
        TableSet::default()
    }

    pub fn from_tables(tables: impl IntoIterator<Item = Table>) -> Result<TableSet, TableError> {
        let mut set = TableSet::new();
        for t in tables {
            if set.tables.contains_key(t.name()) {
                return Err(TableError::Irregular(format!(
                    "duplicate table name '{}'",
                    t.name()
                )));
            }
            set.insert(t);
        }
        Ok(set)
    }

    /// Insert or replace a table under its own name.
    pub fn insert(&mut self, t: Table) {
        self.tables.insert(t.name().to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tables.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn first(&self) -> Option<&Table> {
        self.tables.values().next()
    }

    pub fn remove(&mut self, name: &str) -> Option<Table> {
        self.tables.shift_remove(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str, opts: &CurationOptions) -> Table {
        ingest_csv_reader(text.as_bytes(), "t", opts).unwrap()
    }

    #[test]
    fn na_in_numeric_column_becomes_null() {
        let t = ingest("a,b\n1, NA \n2,3\n", &CurationOptions::default());
        assert_eq!(t.columns()[1].ty, ColumnType::Integer);
        assert_eq!(t.rows()[0][1], Value::Null);
        assert_eq!(t.rows()[1][1], Value::Int(3));
    }

    #[test]
    fn null_lexicon_and_trimming() {
        let t = ingest(
            "s\n  hello \nNull\nnull\nN/A\n\"\"\nNULL\n",
            &CurationOptions::default(),
        );
        let cells: Vec<_> = t.column_values(0).cloned().collect();
        assert_eq!(
            cells,
            vec![
                Value::Text("hello".into()),
                Value::Null,
                Value::Null,
                Value::Null,
                Value::Null,
                Value::Text("NULL".into()),
            ]
        );
    }

    #[test]
    fn row_cap_truncates_to_fifty() {
        let mut text = String::from("x,y\n");
        for i in 0..80 {
            text.push_str(&format!("{i},v{i}\n"));
        }
        let t = ingest(&text, &CurationOptions::default());
        assert_eq!(t.num_rows(), 50);
        assert_eq!(
            t.schema(),
            vec![
                Column::new("x", ColumnType::Integer),
                Column::new("y", ColumnType::Text)
            ]
        );
        let raw = ingest(&text, &CurationOptions::raw());
        assert_eq!(raw.num_rows(), 80);
    }

    #[test]
    fn header_only_csv_keeps_columns() {
        let t = ingest("a,b,c\n", &CurationOptions::default());
        assert_eq!(t.num_rows(), 0);
        assert_eq!(t.num_columns(), 3);
        assert!(t.columns().iter().all(|c| c.ty == ColumnType::Text));
    }

    #[test]
    fn duplicate_headers_are_irregular() {
        let err = ingest_csv_reader("a,a\n1,2\n".as_bytes(), "t", &CurationOptions::default())
            .unwrap_err();
        assert!(matches!(err, TableError::Irregular(_)));
    }

    #[test]
    fn empty_file_is_irregular() {
        let err =
            ingest_csv_reader("".as_bytes(), "t", &CurationOptions::default()).unwrap_err();
        assert!(matches!(err, TableError::Irregular(_)));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = ingest_csv_reader("a,b\n1\n".as_bytes(), "t", &CurationOptions::default())
            .unwrap_err();
        assert!(matches!(err, TableError::Irregular(_) | TableError::Csv(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest_csv("/nonexistent/x.csv", "t", &CurationOptions::default()).unwrap_err();
        assert!(matches!(err, TableError::Io { .. }));
    }

    #[test]
    fn inference_rules() {
        assert_eq!(infer_types([Some("1"), Some("2"), None]), ColumnType::Integer);
        assert_eq!(infer_types([Some("1"), Some("2.5")]), ColumnType::Real);
        assert_eq!(infer_types([Some("yes"), Some("no")]), ColumnType::Text);
        assert_eq!(infer_types([Some("true"), Some("False")]), ColumnType::Boolean);
        assert_eq!(infer_types([None, None]), ColumnType::Text);
        assert_eq!(infer_types(Vec::<Option<&str>>::new()), ColumnType::Text);
        // overflow demotes to real
        assert_eq!(
            infer_types([Some("99999999999999999999"), Some("1")]),
            ColumnType::Real
        );
        // words the float parser would accept are not decimals
        assert_eq!(infer_types([Some("NaN"), Some("inf")]), ColumnType::Text);
        assert_eq!(infer_types([Some("1e3"), Some("-.5")]), ColumnType::Real);
    }

    #[test]
    fn decimal_syntax() {
        for ok in ["0", "-1", "+2.", ".5", "1e10", "1.5E-3"] {
            assert!(is_decimal(ok), "{ok}");
        }
        for bad in ["", ".", "e5", "1e", "1.2.3", "0x10", "inf", "1_000"] {
            assert!(!is_decimal(bad), "{bad}");
        }
    }

    #[test]
    fn table_invariants_enforced() {
        let cols = vec![Column::new("a", ColumnType::Integer)];
        assert!(Table::new("t", cols.clone(), vec![vec![Value::Text("x".into())]]).is_err());
        assert!(Table::new("t", cols.clone(), vec![vec![]]).is_err());
        assert!(Table::new("t", cols, vec![vec![Value::Null]]).is_ok());
    }

    #[test]
    fn json_form_round_trip() {
        let t = ingest(
            "id,score,name,ok\n1,2.5,a,true\n2,,b,false\n",
            &CurationOptions::default(),
        );
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"type\":\"real\""));
        let back: Table = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn display_digits() {
        assert_eq!(Value::Real(4.875).render_with_digits(6), "4.875");
        assert_eq!(Value::Real(1.0 / 3.0).render_with_digits(6), "0.333333");
        assert_eq!(Value::Real(5.0).render_with_digits(6), "5.0");
        assert_eq!(Value::Real(5.0).render(), "5.0");
    }
}
