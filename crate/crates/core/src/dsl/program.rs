use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use super::condition::{parse_condition, Condition};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("invalid program JSON: {0}")]
    Json(String),
    #[error("program must be a JSON array of operator objects")]
    NotAnArray,
    #[error("program has no operators")]
    EmptyChain,
    #[error("operator {index}: unknown operator '{name}'")]
    UnknownOperator { index: usize, name: String },
    #[error("operator {index} ({op}): {message}")]
    MalformedParams {
        index: usize,
        op: String,
        message: String,
    },
}

macro_rules! operator_kinds {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The sixteen operator kinds.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum OperatorKind {
            $(#[serde(rename = $name)] $variant),+
        }

        impl OperatorKind {
            pub const ALL: [OperatorKind; 16] = [$(OperatorKind::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(OperatorKind::$variant => $name),+
                }
            }

            pub fn from_name(name: &str) -> Option<OperatorKind> {
                match name {
                    $($name => Some(OperatorKind::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

operator_kinds! {
    Filter => "filter",
    Dropna => "dropna",
    Deduplicate => "deduplicate",
    Cast => "cast",
    Join => "join",
    Union => "union",
    Groupby => "groupby",
    Pivot => "pivot",
    Unpivot => "unpivot",
    Explode => "explode",
    Transpose => "transpose",
    WideToLong => "wide_to_long",
    Sort => "sort",
    Topk => "topk",
    Select => "select",
    Rename => "rename",
}

impl OperatorKind {
    pub fn index(self) -> usize {
        OperatorKind::ALL
            .iter()
            .position(|k| *k == self)
            .expect("kind in ALL")
    }

    /// Kinds that combine two live tables into a new one.
    pub fn is_multi_table(self) -> bool {
        matches!(self, OperatorKind::Join | OperatorKind::Union)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Aggregation function. Unrecognized names survive parsing so the
/// interpreter can report them as attribute errors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Sum,
    Mean,
    Min,
    Max,
    Count,
    Other(String),
}

impl AggFunc {
    pub const KNOWN: [AggFunc; 5] = [
        AggFunc::Sum,
        AggFunc::Mean,
        AggFunc::Min,
        AggFunc::Max,
        AggFunc::Count,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Mean => "mean",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Count => "count",
            AggFunc::Other(s) => s,
        }
    }

    pub fn from_name(s: &str) -> AggFunc {
        match s {
            "sum" => AggFunc::Sum,
            "mean" | "avg" => AggFunc::Mean,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            "count" => AggFunc::Count,
            other => AggFunc::Other(other.to_string()),
        }
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, AggFunc::Other(_))
    }
}

impl Serialize for AggFunc {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AggFunc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(AggFunc::from_name(&s))
    }
}

impl fmt::Display for AggFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropHow {
    #[default]
    Any,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keep {
    #[default]
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinHow {
    #[default]
    Inner,
    Left,
    Right,
    Outer,
}

impl JoinHow {
    pub const ALL: [JoinHow; 4] = [JoinHow::Inner, JoinHow::Left, JoinHow::Right, JoinHow::Outer];

    pub fn as_str(self) -> &'static str {
        match self {
            JoinHow::Inner => "inner",
            JoinHow::Left => "left",
            JoinHow::Right => "right",
            JoinHow::Outer => "outer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnionHow {
    #[default]
    All,
    Distinct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CastType {
    #[serde(rename = "int", alias = "integer", alias = "int64")]
    Int,
    #[serde(rename = "float", alias = "real", alias = "float64")]
    Float,
    #[serde(rename = "str", alias = "string", alias = "text")]
    Str,
    #[serde(rename = "bool", alias = "boolean")]
    Bool,
}

impl CastType {
    pub const ALL: [CastType; 4] = [CastType::Int, CastType::Float, CastType::Str, CastType::Bool];

    pub fn as_str(self) -> &'static str {
        match self {
            CastType::Int => "int",
            CastType::Float => "float",
            CastType::Str => "str",
            CastType::Bool => "bool",
        }
    }

    pub fn column_type(self) -> crate::table::ColumnType {
        use crate::table::ColumnType;
        match self {
            CastType::Int => ColumnType::Integer,
            CastType::Float => ColumnType::Real,
            CastType::Str => ColumnType::Text,
            CastType::Bool => ColumnType::Boolean,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t],
            OneOrMany::Many(v) => v,
        }
    }
}

fn string_or_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    Ok(OneOrMany::<String>::deserialize(d)?.into_vec())
}

fn opt_string_or_list<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<String>>, D::Error> {
    Ok(Option::<OneOrMany<String>>::deserialize(d)?.map(OneOrMany::into_vec))
}

/// A single column name, also accepted as a one-element list.
fn single_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    let mut v = OneOrMany::<String>::deserialize(d)?.into_vec();
    if v.len() != 1 {
        return Err(de::Error::custom(format!(
            "expected a single column name, got {} names",
            v.len()
        )));
    }
    Ok(v.remove(0))
}

fn default_suffixes() -> [String; 2] {
    ["_x".to_string(), "_y".to_string()]
}

fn default_var_name() -> String {
    "variable".into()
}

fn default_value_name() -> String {
    "value".into()
}

fn default_suffix_pattern() -> String {
    "\\d+".into()
}

fn default_aggfunc() -> AggFunc {
    AggFunc::Mean
}

/// `filter`. Accepts either `{"condition": "Year != 2013"}` or the split
/// `{"column": "Year", "condition": "!= 2013"}` form.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub table: Option<String>,
    pub condition: Condition,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterWire {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    column: Option<String>,
    condition: String,
}

impl Serialize for FilterParams {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FilterWire {
            table: self.table.clone(),
            column: None,
            condition: self.condition.to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FilterParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = FilterWire::deserialize(d)?;
        let text = match &wire.column {
            Some(col) => format!("{} {}", super::condition::render_ident(col), wire.condition),
            None => wire.condition.clone(),
        };
        let condition = parse_condition(&text).map_err(de::Error::custom)?;
        Ok(FilterParams {
            table: wire.table,
            condition,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropnaParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(
        default,
        deserialize_with = "opt_string_or_list",
        skip_serializing_if = "Option::is_none"
    )]
    pub subset: Option<Vec<String>>,
    #[serde(default)]
    pub how: DropHow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeduplicateParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(
        default,
        deserialize_with = "opt_string_or_list",
        skip_serializing_if = "Option::is_none"
    )]
    pub subset: Option<Vec<String>>,
    #[serde(default)]
    pub keep: Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CastParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    pub column: String,
    pub dtype: CastType,
}

/// `join`. Missing table names resolve to the current table (left) and the
/// next live table (right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_table: Option<String>,
    #[serde(
        default,
        deserialize_with = "opt_string_or_list",
        skip_serializing_if = "Option::is_none"
    )]
    pub on: Option<Vec<String>>,
    #[serde(
        default,
        deserialize_with = "opt_string_or_list",
        skip_serializing_if = "Option::is_none"
    )]
    pub left_on: Option<Vec<String>>,
    #[serde(
        default,
        deserialize_with = "opt_string_or_list",
        skip_serializing_if = "Option::is_none"
    )]
    pub right_on: Option<Vec<String>>,
    #[serde(default)]
    pub how: JoinHow,
    #[serde(default = "default_suffixes")]
    pub suffixes: [String; 2],
}

impl JoinParams {
    /// Key column pairs (left name, right name).
    pub fn key_pairs(&self) -> Vec<(&str, &str)> {
        match (&self.on, &self.left_on, &self.right_on) {
            (Some(on), _, _) => on.iter().map(|k| (k.as_str(), k.as_str())).collect(),
            (None, Some(l), Some(r)) => l
                .iter()
                .zip(r)
                .map(|(a, b)| (a.as_str(), b.as_str()))
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnionParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_table: Option<String>,
    #[serde(default)]
    pub how: UnionHow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupbyParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(deserialize_with = "string_or_list", alias = "group_by")]
    pub by: Vec<String>,
    #[serde(alias = "aggregations")]
    pub agg: IndexMap<String, AggFunc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PivotParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(deserialize_with = "string_or_list")]
    pub index: Vec<String>,
    #[serde(deserialize_with = "single_string")]
    pub columns: String,
    #[serde(deserialize_with = "single_string")]
    pub values: String,
    #[serde(default = "default_aggfunc")]
    pub aggfunc: AggFunc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnpivotParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, deserialize_with = "string_or_list")]
    pub id_vars: Vec<String>,
    #[serde(deserialize_with = "string_or_list")]
    pub value_vars: Vec<String>,
    #[serde(default = "default_var_name")]
    pub var_name: String,
    #[serde(default = "default_value_name")]
    pub value_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplodeParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    pub column: String,
    #[serde(default)]
    pub split_comma: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransposeParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WideToLongParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(deserialize_with = "string_or_list", alias = "subnames")]
    pub stubnames: Vec<String>,
    #[serde(deserialize_with = "string_or_list")]
    pub i: Vec<String>,
    pub j: String,
    #[serde(default)]
    pub sep: String,
    #[serde(default = "default_suffix_pattern")]
    pub suffix: String,
}

/// `sort`. `by` may be a single name and `ascending` a single flag, which is
/// broadcast over all keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    pub by: Vec<String>,
    pub ascending: Vec<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SortWire {
    #[serde(default, alias = "source_table", alias = "table_names")]
    table: Option<String>,
    #[serde(deserialize_with = "string_or_list")]
    by: Vec<String>,
    #[serde(default)]
    ascending: Option<OneOrMany<bool>>,
}

impl<'de> Deserialize<'de> for SortParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = SortWire::deserialize(d)?;
        let ascending = match wire.ascending {
            None => vec![true; wire.by.len()],
            Some(OneOrMany::One(b)) => vec![b; wire.by.len()],
            Some(OneOrMany::Many(v)) => v,
        };
        Ok(SortParams {
            table: wire.table,
            by: wire.by,
            ascending,
        })
    }
}

/// `topk`: the first `k` rows. A `columns` field is tolerated and ignored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopkParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    pub k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopkWire {
    #[serde(default, alias = "source_table", alias = "table_names")]
    table: Option<String>,
    k: usize,
    #[serde(default)]
    columns: Option<serde_json::Value>,
}

impl<'de> Deserialize<'de> for TopkParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = TopkWire::deserialize(d)?;
        if wire.columns.is_some() {
            log::warn!("topk: 'columns' parameter is ignored; topk keeps the first k rows");
        }
        Ok(TopkParams {
            table: wire.table,
            k: wire.k,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(deserialize_with = "string_or_list")]
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenameParams {
    #[serde(default, alias = "source_table", alias = "table_names", skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    pub rename_map: IndexMap<String, String>,
}

/// One operator with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorCall {
    Filter(FilterParams),
    Dropna(DropnaParams),
    Deduplicate(DeduplicateParams),
    Cast(CastParams),
    Join(JoinParams),
    Union(UnionParams),
    Groupby(GroupbyParams),
    Pivot(PivotParams),
    Unpivot(UnpivotParams),
    Explode(ExplodeParams),
    Transpose(TransposeParams),
    WideToLong(WideToLongParams),
    Sort(SortParams),
    Topk(TopkParams),
    Select(SelectParams),
    Rename(RenameParams),
}

impl OperatorCall {
    pub fn kind(&self) -> OperatorKind {
        match self {
            OperatorCall::Filter(_) => OperatorKind::Filter,
            OperatorCall::Dropna(_) => OperatorKind::Dropna,
            OperatorCall::Deduplicate(_) => OperatorKind::Deduplicate,
            OperatorCall::Cast(_) => OperatorKind::Cast,
            OperatorCall::Join(_) => OperatorKind::Join,
            OperatorCall::Union(_) => OperatorKind::Union,
            OperatorCall::Groupby(_) => OperatorKind::Groupby,
            OperatorCall::Pivot(_) => OperatorKind::Pivot,
            OperatorCall::Unpivot(_) => OperatorKind::Unpivot,
            OperatorCall::Explode(_) => OperatorKind::Explode,
            OperatorCall::Transpose(_) => OperatorKind::Transpose,
            OperatorCall::WideToLong(_) => OperatorKind::WideToLong,
            OperatorCall::Sort(_) => OperatorKind::Sort,
            OperatorCall::Topk(_) => OperatorKind::Topk,
            OperatorCall::Select(_) => OperatorKind::Select,
            OperatorCall::Rename(_) => OperatorKind::Rename,
        }
    }

    /// Explicit target table of a single-table operator, if any.
    pub fn target_table(&self) -> Option<&str> {
        match self {
            OperatorCall::Filter(p) => p.table.as_deref(),
            OperatorCall::Dropna(p) => p.table.as_deref(),
            OperatorCall::Deduplicate(p) => p.table.as_deref(),
            OperatorCall::Cast(p) => p.table.as_deref(),
            OperatorCall::Groupby(p) => p.table.as_deref(),
            OperatorCall::Pivot(p) => p.table.as_deref(),
            OperatorCall::Unpivot(p) => p.table.as_deref(),
            OperatorCall::Explode(p) => p.table.as_deref(),
            OperatorCall::Transpose(p) => p.table.as_deref(),
            OperatorCall::WideToLong(p) => p.table.as_deref(),
            OperatorCall::Sort(p) => p.table.as_deref(),
            OperatorCall::Topk(p) => p.table.as_deref(),
            OperatorCall::Select(p) => p.table.as_deref(),
            OperatorCall::Rename(p) => p.table.as_deref(),
            OperatorCall::Join(_) | OperatorCall::Union(_) => None,
        }
    }

    /// Explicit (left, right) tables of a join or union.
    pub fn table_pair(&self) -> Option<(Option<&str>, Option<&str>)> {
        match self {
            OperatorCall::Join(p) => Some((p.left_table.as_deref(), p.right_table.as_deref())),
            OperatorCall::Union(p) => Some((p.left_table.as_deref(), p.right_table.as_deref())),
            _ => None,
        }
    }

    fn params_json(&self) -> serde_json::Value {
        let r = match self {
            OperatorCall::Filter(p) => serde_json::to_value(p),
            OperatorCall::Dropna(p) => serde_json::to_value(p),
            OperatorCall::Deduplicate(p) => serde_json::to_value(p),
            OperatorCall::Cast(p) => serde_json::to_value(p),
            OperatorCall::Join(p) => serde_json::to_value(p),
            OperatorCall::Union(p) => serde_json::to_value(p),
            OperatorCall::Groupby(p) => serde_json::to_value(p),
            OperatorCall::Pivot(p) => serde_json::to_value(p),
            OperatorCall::Unpivot(p) => serde_json::to_value(p),
            OperatorCall::Explode(p) => serde_json::to_value(p),
            OperatorCall::Transpose(p) => serde_json::to_value(p),
            OperatorCall::WideToLong(p) => serde_json::to_value(p),
            OperatorCall::Sort(p) => serde_json::to_value(p),
            OperatorCall::Topk(p) => serde_json::to_value(p),
            OperatorCall::Select(p) => serde_json::to_value(p),
            OperatorCall::Rename(p) => serde_json::to_value(p),
        };
        r.expect("operator params serialize to JSON")
    }

    /// `{"op": ..., "params": {...}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("op".into(), self.kind().name().into());
        obj.insert("params".into(), self.params_json());
        serde_json::Value::Object(obj)
    }

    /// Parse one `{"op", "params"}` object; `index` is used in error messages.
    pub fn from_json(index: usize, value: &serde_json::Value) -> Result<OperatorCall, DslError> {
        let obj = value.as_object().ok_or_else(|| DslError::MalformedParams {
            index,
            op: "?".into(),
            message: "operator entry must be an object".into(),
        })?;
        let name = obj
            .get("op")
            .and_then(|v| v.as_str())
            .ok_or_else(|| DslError::MalformedParams {
                index,
                op: "?".into(),
                message: "missing string field 'op'".into(),
            })?;
        let kind = OperatorKind::from_name(name).ok_or_else(|| DslError::UnknownOperator {
            index,
            name: name.to_string(),
        })?;
        let malformed = |message: String| DslError::MalformedParams {
            index,
            op: name.to_string(),
            message,
        };
        if let Some(extra) = obj.keys().find(|k| *k != "op" && *k != "params") {
            return Err(malformed(format!("unexpected field '{extra}'")));
        }
        let params = match obj.get("params") {
            None | Some(serde_json::Value::Null) => {
                serde_json::Value::Object(serde_json::Map::new())
            }
            Some(v @ serde_json::Value::Object(_)) => v.clone(),
            Some(_) => return Err(malformed("'params' must be an object".into())),
        };
        fn de<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        let call = match kind {
            OperatorKind::Filter => de(params).map(OperatorCall::Filter),
            OperatorKind::Dropna => de(params).map(OperatorCall::Dropna),
            OperatorKind::Deduplicate => de(params).map(OperatorCall::Deduplicate),
            OperatorKind::Cast => de(params).map(OperatorCall::Cast),
            OperatorKind::Join => de(params).map(OperatorCall::Join),
            OperatorKind::Union => de(params).map(OperatorCall::Union),
            OperatorKind::Groupby => de(params).map(OperatorCall::Groupby),
            OperatorKind::Pivot => de(params).map(OperatorCall::Pivot),
            OperatorKind::Unpivot => de(params).map(OperatorCall::Unpivot),
            OperatorKind::Explode => de(params).map(OperatorCall::Explode),
            OperatorKind::Transpose => de(params).map(OperatorCall::Transpose),
            OperatorKind::WideToLong => de(params).map(OperatorCall::WideToLong),
            OperatorKind::Sort => de(params).map(OperatorCall::Sort),
            OperatorKind::Topk => de(params).map(OperatorCall::Topk),
            OperatorKind::Select => de(params).map(OperatorCall::Select),
            OperatorKind::Rename => de(params).map(OperatorCall::Rename),
        }
        .map_err(malformed)?;
        call.check_structure().map_err(malformed)?;
        Ok(call)
    }

    /// Schema-independent parameter checks.
    pub fn check_structure(&self) -> Result<(), String> {
        fn non_empty(what: &str, v: &[String]) -> Result<(), String> {
            if v.is_empty() {
                return Err(format!("'{what}' must not be empty"));
            }
            if v.iter().any(|s| s.is_empty()) {
                return Err(format!("'{what}' contains an empty column name"));
            }
            Ok(())
        }
        fn distinct(what: &str, v: &[String]) -> Result<(), String> {
            let mut seen = std::collections::HashSet::new();
            for s in v {
                if !seen.insert(s) {
                    return Err(format!("'{what}' repeats column '{s}'"));
                }
            }
            Ok(())
        }
        match self {
            OperatorCall::Filter(_) | OperatorCall::Transpose(_) | OperatorCall::Union(_) => {}
            OperatorCall::Dropna(p) => {
                if let Some(s) = &p.subset {
                    non_empty("subset", s)?;
                }
            }
            OperatorCall::Deduplicate(p) => {
                if let Some(s) = &p.subset {
                    non_empty("subset", s)?;
                }
            }
            OperatorCall::Cast(p) => {
                if p.column.is_empty() {
                    return Err("'column' must not be empty".into());
                }
            }
            OperatorCall::Join(p) => {
                match (&p.on, &p.left_on, &p.right_on) {
                    (Some(on), None, None) => non_empty("on", on)?,
                    (None, Some(l), Some(r)) => {
                        non_empty("left_on", l)?;
                        non_empty("right_on", r)?;
                        if l.len() != r.len() {
                            return Err("'left_on' and 'right_on' differ in length".into());
                        }
                    }
                    (None, None, None) => return Err("join needs 'on' or 'left_on'/'right_on'".into()),
                    _ => {
                        return Err("use either 'on' or both 'left_on' and 'right_on'".into())
                    }
                }
                if p.suffixes[0] == p.suffixes[1] {
                    return Err("join suffixes must differ".into());
                }
            }
            OperatorCall::Groupby(p) => {
                non_empty("by", &p.by)?;
                distinct("by", &p.by)?;
                if p.agg.is_empty() {
                    return Err("'agg' must not be empty".into());
                }
            }
            OperatorCall::Pivot(p) => {
                non_empty("index", &p.index)?;
                distinct("index", &p.index)?;
            }
            OperatorCall::Unpivot(p) => {
                non_empty("value_vars", &p.value_vars)?;
                distinct("value_vars", &p.value_vars)?;
                distinct("id_vars", &p.id_vars)?;
                if p.var_name.is_empty() || p.value_name.is_empty() {
                    return Err("'var_name' and 'value_name' must not be empty".into());
                }
                if p.var_name == p.value_name {
                    return Err("'var_name' and 'value_name' must differ".into());
                }
            }
            OperatorCall::Explode(p) => {
                if p.column.is_empty() {
                    return Err("'column' must not be empty".into());
                }
            }
            OperatorCall::WideToLong(p) => {
                non_empty("stubnames", &p.stubnames)?;
                distinct("stubnames", &p.stubnames)?;
                non_empty("i", &p.i)?;
                if p.j.is_empty() {
                    return Err("'j' must not be empty".into());
                }
                regex::Regex::new(&format!("^(?:{})$", p.suffix))
                    .map_err(|e| format!("invalid suffix pattern: {e}"))?;
            }
            OperatorCall::Sort(p) => {
                non_empty("by", &p.by)?;
                if p.by.len() != p.ascending.len() {
                    return Err(format!(
                        "'by' has {} keys but 'ascending' has {} flags",
                        p.by.len(),
                        p.ascending.len()
                    ));
                }
            }
            OperatorCall::Topk(p) => {
                if p.k == 0 {
                    return Err("'k' must be a positive integer".into());
                }
            }
            OperatorCall::Select(p) => {
                non_empty("columns", &p.columns)?;
                distinct("columns", &p.columns)?;
            }
            OperatorCall::Rename(p) => {
                if p.rename_map.is_empty() {
                    return Err("'rename_map' must not be empty".into());
                }
                if p.rename_map.iter().any(|(k, v)| k.is_empty() || v.is_empty()) {
                    return Err("'rename_map' contains an empty name".into());
                }
            }
        }
        Ok(())
    }
}

impl Serialize for OperatorCall {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for OperatorCall {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        OperatorCall::from_json(0, &v).map_err(de::Error::custom)
    }
}

/// A left-to-right operator chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineProgram {
    pub ops: Vec<OperatorCall>,
    pub source_tables: Vec<String>,
}

impl PipelineProgram {
    pub fn new(ops: Vec<OperatorCall>) -> Self {
        PipelineProgram {
            ops,
            source_tables: Vec::new(),
        }
    }

    pub fn with_sources(mut self, sources: Vec<String>) -> Self {
        self.source_tables = sources;
        self
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn kinds(&self) -> Vec<OperatorKind> {
        self.ops.iter().map(OperatorCall::kind).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.ops.iter().map(OperatorCall::to_json).collect())
    }
}

impl Serialize for PipelineProgram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.ops.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PipelineProgram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        program_from_value(&v).map_err(de::Error::custom)
    }
}

pub fn program_from_value(v: &serde_json::Value) -> Result<PipelineProgram, DslError> {
    let items = v.as_array().ok_or(DslError::NotAnArray)?;
    if items.is_empty() {
        return Err(DslError::EmptyChain);
    }
    let ops = items
        .iter()
        .enumerate()
        .map(|(i, item)| OperatorCall::from_json(i, item))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PipelineProgram::new(ops))
}

/// Parse the JSON wire form: an array of `{"op", "params"}` objects.
pub fn parse_program(json: &str) -> Result<PipelineProgram, DslError> {
    let v: serde_json::Value =
        serde_json::from_str(json).map_err(|e| DslError::Json(e.to_string()))?;
    program_from_value(&v)
}

/// Canonical compact JSON. Field order is fixed by the parameter records.
pub fn serialize_program(p: &PipelineProgram) -> String {
    serde_json::to_string(&p.to_json()).expect("program serializes")
}

pub fn serialize_program_pretty(p: &PipelineProgram) -> String {
    serde_json::to_string_pretty(&p.to_json()).expect("program serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::condition::{CmpOp, Literal};

    const LISTING: &str = r#"[
      {
        "op": "groupby",
        "params": {
          "by": ["region"],
          "agg": { "sales": "sum" }
        }
      },
      {
        "op": "sort",
        "params": { "by": "sales", "ascending": false }
      }
    ]"#;

    #[test]
    fn parses_groupby_sort_listing() {
        let p = parse_program(LISTING).unwrap();
        assert_eq!(p.len(), 2);
        match &p.ops[0] {
            OperatorCall::Groupby(g) => {
                assert_eq!(g.by, vec!["region"]);
                assert_eq!(g.agg.get("sales"), Some(&AggFunc::Sum));
            }
            other => panic!("{other:?}"),
        }
        match &p.ops[1] {
            OperatorCall::Sort(s) => {
                assert_eq!(s.by, vec!["sales"]);
                assert_eq!(s.ascending, vec![false]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_program(&serialize_program(&p)).unwrap(), p);
    }

    #[test]
    fn empty_and_unknown() {
        assert_eq!(parse_program("[]"), Err(DslError::EmptyChain));
        assert_eq!(
            parse_program(r#"[{"op":"head","params":{}}]"#),
            Err(DslError::UnknownOperator {
                index: 0,
                name: "head".into()
            })
        );
        assert!(matches!(parse_program("{}"), Err(DslError::NotAnArray)));
        assert!(matches!(parse_program("[1,"), Err(DslError::Json(_))));
    }

    #[test]
    fn malformed_params_name_index() {
        let err = parse_program(
            r#"[{"op":"transpose"},{"op":"sort","params":{"by":["a","b"],"ascending":[true]}}]"#,
        )
        .unwrap_err();
        assert!(matches!(err, DslError::MalformedParams { index: 1, .. }), "{err}");
        let err = parse_program(r#"[{"op":"select","params":{"columns":["a"],"bogus":1}}]"#)
            .unwrap_err();
        assert!(matches!(err, DslError::MalformedParams { index: 0, .. }));
        let err = parse_program(r#"[{"op":"topk","params":{"k":0}}]"#).unwrap_err();
        assert!(matches!(err, DslError::MalformedParams { .. }));
        let err = parse_program(r#"[{"op":"filter","params":{"condition":"a = 1"}}]"#)
            .unwrap_err();
        assert!(matches!(err, DslError::MalformedParams { .. }));
    }

    #[test]
    fn filter_split_form_normalizes() {
        let p = parse_program(
            r#"[{"op":"filter","params":{"column":"Year","condition":"!= 2013"}}]"#,
        )
        .unwrap();
        let q = parse_program(r#"[{"op":"filter","params":{"condition":"Year != 2013"}}]"#)
            .unwrap();
        assert_eq!(p, q);
        match &p.ops[0] {
            OperatorCall::Filter(f) => assert_eq!(
                f.condition,
                Condition::compare("Year", CmpOp::Ne, Literal::Int(2013))
            ),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn topk_columns_ignored() {
        let p = parse_program(r#"[{"op":"topk","params":{"columns":["a"],"k":5}}]"#).unwrap();
        assert_eq!(
            p.ops[0],
            OperatorCall::Topk(TopkParams { table: None, k: 5 })
        );
    }

    #[test]
    fn transpose_without_params_round_trips() {
        let p = parse_program(r#"[{"op":"transpose"}]"#).unwrap();
        let text = serialize_program(&p);
        assert_eq!(text, r#"[{"op":"transpose","params":{}}]"#);
        assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn join_forms() {
        let p = parse_program(
            r#"[{"op":"join","params":{"on":"ship id","how":"right","suffixes":["_left","_right"]}}]"#,
        )
        .unwrap();
        match &p.ops[0] {
            OperatorCall::Join(j) => {
                assert_eq!(j.key_pairs(), vec![("ship id", "ship id")]);
                assert_eq!(j.how, JoinHow::Right);
            }
            other => panic!("{other:?}"),
        }
        let d = parse_program(r#"[{"op":"join","params":{"left_on":"a","right_on":"b"}}]"#)
            .unwrap();
        match &d.ops[0] {
            OperatorCall::Join(j) => {
                assert_eq!(j.suffixes, ["_x".to_string(), "_y".to_string()]);
                assert_eq!(j.how, JoinHow::Inner);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_program(r#"[{"op":"join","params":{"on":"a","left_on":"b"}}]"#).is_err());
        assert!(parse_program(r#"[{"op":"join","params":{}}]"#).is_err());
    }

    #[test]
    fn unknown_agg_survives_parse() {
        let p = parse_program(r#"[{"op":"groupby","params":{"by":"a","agg":{"b":"median"}}}]"#)
            .unwrap();
        match &p.ops[0] {
            OperatorCall::Groupby(g) => {
                assert_eq!(g.agg["b"], AggFunc::Other("median".into()))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_kind_has_a_name_round_trip() {
        for k in OperatorKind::ALL {
            assert_eq!(OperatorKind::from_name(k.name()), Some(k));
        }
        assert_eq!(OperatorKind::ALL.len(), 16);
    }
}
