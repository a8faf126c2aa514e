//! Native execution of pipeline programs over in-memory tables.

mod ops;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{OperatorCall, OperatorKind, PipelineProgram};
use crate::spm::{self, Catalog, SchemaState, TableSchema, Violation, ViolationKind};
use crate::table::{Column, Table, TableSet};

pub use ops::{cast_value, eval_condition};

/// Error classes reported for failed executions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    TypeError,
    ColumnOrIndexError,
    AttributeError,
    SemanticGuard,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::TypeError,
        ErrorCategory::ColumnOrIndexError,
        ErrorCategory::AttributeError,
        ErrorCategory::SemanticGuard,
        ErrorCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::TypeError => "TypeError",
            ErrorCategory::ColumnOrIndexError => "ColumnOrIndexError",
            ErrorCategory::AttributeError => "AttributeError",
            ErrorCategory::SemanticGuard => "SemanticGuard",
            ErrorCategory::Other => "Other",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<ViolationKind> for ErrorCategory {
    fn from(k: ViolationKind) -> Self {
        match k {
            ViolationKind::MissingTable | ViolationKind::MissingColumn => {
                ErrorCategory::ColumnOrIndexError
            }
            ViolationKind::Type => ErrorCategory::TypeError,
            ViolationKind::UnknownAggregate => ErrorCategory::AttributeError,
            ViolationKind::Incompatible => ErrorCategory::SemanticGuard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{category} at operator {op_index}: {message}")]
pub struct RuntimeError {
    pub category: ErrorCategory,
    pub op_index: usize,
    pub message: String,
}

impl RuntimeError {
    pub fn new(category: ErrorCategory, op_index: usize, message: impl Into<String>) -> Self {
        RuntimeError {
            category,
            op_index,
            message: message.into(),
        }
    }

    fn from_violation(op_index: usize, v: Violation) -> Self {
        RuntimeError::new(v.kind.into(), op_index, v.message)
    }
}

/// An operator-level failure before the op index is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpError {
    pub category: ErrorCategory,
    pub message: String,
}

impl OpError {
    pub fn new(category: ErrorCategory, message: impl Into<String>) -> Self {
        OpError {
            category,
            message: message.into(),
        }
    }

    fn at(self, op_index: usize) -> RuntimeError {
        RuntimeError::new(self.category, op_index, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionLimits {
    pub wall_clock: Duration,
    pub max_cells: usize,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        ExecutionLimits {
            wall_clock: Duration::from_secs(30),
            max_cells: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub op_index: usize,
    pub kind: OperatorKind,
    pub table: String,
    pub output: Vec<Column>,
    pub rows: usize,
    #[serde(with = "duration_secs")]
    pub duration: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Live tables plus the per-op trace of an execution in progress.
#[derive(Debug, Clone)]
pub struct ExecContext {
    tables: TableSet,
    catalog: Catalog,
    trace: Vec<TraceEntry>,
    limits: ExecutionLimits,
    started: Instant,
}

impl ExecContext {
    pub fn new(inputs: TableSet) -> Self {
        ExecContext::with_limits(inputs, ExecutionLimits::default())
    }

    pub fn with_limits(inputs: TableSet, limits: ExecutionLimits) -> Self {
        ExecContext {
            catalog: Catalog::from_names(inputs.names()),
            tables: inputs,
            trace: Vec::new(),
            limits,
            started: Instant::now(),
        }
    }

    pub fn tables(&self) -> &TableSet {
        &self.tables
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn current_name(&self) -> &str {
        &self.catalog.current
    }

    pub fn current(&self) -> Option<&Table> {
        self.tables.get(&self.catalog.current)
    }

    /// Realized schema of every live table.
    pub fn schema_state(&self) -> SchemaState {
        SchemaState {
            catalog: self.catalog.clone(),
            tables: self
                .tables
                .iter()
                .map(|t| (t.name().to_string(), TableSchema::from_columns(t.columns())))
                .collect(),
        }
    }

    /// Execute one operator. On error the context is left unchanged.
    pub fn execute_op(&mut self, op_index: usize, call: &OperatorCall) -> Result<&Table, RuntimeError> {
        let t0 = Instant::now();
        let state = self.schema_state();
        spm::validate(call, &state).map_err(|v| RuntimeError::from_violation(op_index, v))?;
        let (name, table, inputs) = match call {
            OperatorCall::Join(_) | OperatorCall::Union(_) => {
                let (l, r) = self
                    .catalog
                    .resolve_pair(call)
                    .map_err(|v| RuntimeError::from_violation(op_index, v))?;
                let lt = self.tables.get(&l).expect("resolved table is live");
                let rt = self.tables.get(&r).expect("resolved table is live");
                let name = Catalog::result_name(call, &l, &r);
                let out = match call {
                    OperatorCall::Join(p) => ops::join(lt, rt, p, &name, self.limits.max_cells),
                    OperatorCall::Union(p) => ops::union(lt, rt, p, &name),
                    _ => unreachable!(),
                }
                .map_err(|e| e.at(op_index))?;
                (name, out, vec![l, r])
            }
            _ => {
                let name = self
                    .catalog
                    .resolve_target(call.target_table())
                    .map_err(|v| RuntimeError::from_violation(op_index, v))?
                    .to_string();
                let t = self.tables.get(&name).expect("resolved table is live");
                let out = ops::single(t, call, self.limits.max_cells).map_err(|e| e.at(op_index))?;
                (name.clone(), out, vec![name])
            }
        };
        if table.cell_count() > self.limits.max_cells {
            return Err(RuntimeError::new(
                ErrorCategory::Other,
                op_index,
                format!(
                    "cell budget exceeded: {} cells > {}",
                    table.cell_count(),
                    self.limits.max_cells
                ),
            ));
        }
        if self.started.elapsed() > self.limits.wall_clock {
            return Err(RuntimeError::new(
                ErrorCategory::Other,
                op_index,
                format!("wall-clock limit of {:?} exceeded", self.limits.wall_clock),
            ));
        }
        self.trace.push(TraceEntry {
            op_index,
            kind: call.kind(),
            table: name.clone(),
            output: table.columns().to_vec(),
            rows: table.num_rows(),
            duration: t0.elapsed(),
        });
        self.tables.insert(table);
        let input_refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        self.catalog.record(&name, &input_refs);
        Ok(self.tables.get(&name).expect("just inserted"))
    }

    pub fn into_current(mut self) -> Option<Table> {
        let name = self.catalog.current.clone();
        self.tables.remove(&name)
    }
}

#[derive(Debug, Clone)]
pub struct ExecOutcome {
    pub table: Table,
    pub trace: Vec<TraceEntry>,
}

/// Run `p` over `inputs` left to right; the result is the last op's output.
pub fn execute_program(
    inputs: &TableSet,
    p: &PipelineProgram,
    limits: ExecutionLimits,
) -> Result<ExecOutcome, RuntimeError> {
    if p.is_empty() {
        return Err(RuntimeError::new(
            ErrorCategory::SemanticGuard,
            0,
            "program has no operators",
        ));
    }
    let mut ctx = ExecContext::with_limits(inputs.clone(), limits);
    for (i, call) in p.ops.iter().enumerate() {
        ctx.execute_op(i, call)?;
    }
    let trace = ctx.trace.clone();
    let table = ctx.into_current().expect("current table is live");
    Ok(ExecOutcome { table, trace })
}

/// [`execute_program`] with default limits, returning only the table.
pub fn run(inputs: &TableSet, p: &PipelineProgram) -> Result<Table, RuntimeError> {
    execute_program(inputs, p, ExecutionLimits::default()).map(|o| o.table)
}
