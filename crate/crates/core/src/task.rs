//! Benchmark task instances and their on-disk JSON form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{emit, BackendDialect, EmitOptions};
use crate::dsl::PipelineProgram;
use crate::eval::{canonical_equal, EquivalenceOptions};
use crate::interp::{run, RuntimeError};
use crate::spm::SchemaState;
use crate::synth::Difficulty;
use crate::table::{Table, TableError, TableSet};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid task file {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledCode {
    pub dataframe: String,
    pub sql: String,
}

impl CompiledCode {
    pub fn for_program(p: &PipelineProgram, inputs: &TableSet) -> Self {
        let opts = EmitOptions {
            annotate: false,
            schema: Some(SchemaState::from_tables(inputs)),
        };
        CompiledCode {
            dataframe: emit(p, BackendDialect::DataframeChain, &opts).text,
            sql: emit(p, BackendDialect::Sql, &opts).text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// One reviewer's scores for a task, each on a 1..=3 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub reviewer: String,
    pub instruction_accuracy: u8,
    pub operator_coverage: u8,
    pub semantic_clarity: u8,
    pub decision: Decision,
    #[serde(default)]
    pub timestamp: String,
}

impl Verdict {
    pub fn scores(&self) -> [u8; 3] {
        [
            self.instruction_accuracy,
            self.operator_coverage,
            self.semantic_clarity,
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.reviewer.trim().is_empty() {
            return Err("reviewer id is required".into());
        }
        if let Some(s) = self.scores().iter().find(|s| !(1..=3).contains(*s)) {
            return Err(format!("score {s} is outside 1..=3"));
        }
        if self.decision == Decision::Accept && self.scores() != [3, 3, 3] {
            return Err("accept requires a score of 3 on every criterion".into());
        }
        Ok(())
    }
}

/// The five-tuple (inputs, instruction, program, code, output) plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub difficulty: Difficulty,
    pub inputs: Vec<Table>,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    pub program: PipelineProgram,
    pub code: CompiledCode,
    pub output: Table,
    /// Corpus files the inputs were drawn from.
    #[serde(default)]
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

impl TaskInstance {
    /// Assemble a task from an executed program; code is compiled here.
    pub fn new(
        id: impl Into<String>,
        inputs: &TableSet,
        program: PipelineProgram,
        output: Table,
        instruction: impl Into<String>,
    ) -> Self {
        let program =
            program.with_sources(inputs.names().map(str::to_string).collect());
        TaskInstance {
            id: id.into(),
            difficulty: Difficulty::from_len(program.len()),
            inputs: inputs.iter().cloned().collect(),
            instruction: instruction.into(),
            intent: None,
            code: CompiledCode::for_program(&program, inputs),
            output: output.with_name("output"),
            program,
            sources: Vec::new(),
            verdict: None,
        }
    }

    pub fn input_set(&self) -> Result<TableSet, TableError> {
        TableSet::from_tables(self.inputs.iter().cloned())
    }

    /// Program with its source tables filled in from the inputs.
    pub fn bound_program(&self) -> PipelineProgram {
        self.program
            .clone()
            .with_sources(self.inputs.iter().map(|t| t.name().to_string()).collect())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("task serializes")
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut t: TaskInstance = serde_json::from_str(&text).map_err(|e| TaskError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        t.program = t.bound_program();
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), TaskError> {
        let mut text = self.to_json_pretty();
        text.push('\n');
        std::fs::write(path, text).map_err(|source| TaskError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Every `*.json` task file in `dir`, sorted by file name.
pub fn task_files(dir: &Path) -> Result<Vec<PathBuf>, TaskError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| TaskError::Io {
            path: dir.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_tasks(dir: &Path) -> Result<Vec<TaskInstance>, TaskError> {
    task_files(dir)?.iter().map(|p| TaskInstance::load(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelfCheckError {
    #[error("program is empty")]
    EmptyProgram,
    #[error("difficulty {recorded:?} does not match program length {len}")]
    Difficulty { recorded: Difficulty, len: usize },
    #[error("inputs are invalid: {0}")]
    Inputs(String),
    #[error("program failed: {0}")]
    Runtime(#[from] RuntimeError),
    #[error("executed output differs from the recorded output")]
    OutputMismatch,
    #[error("compiled {0} code is stale")]
    StaleCode(&'static str),
}

/// Phase-1 check: the program runs on the inputs and reproduces the output.
pub fn self_check(task: &TaskInstance, opts: &EquivalenceOptions) -> Result<(), SelfCheckError> {
    if task.program.is_empty() {
        return Err(SelfCheckError::EmptyProgram);
    }
    let len = task.program.len();
    if Difficulty::from_len(len) != task.difficulty {
        return Err(SelfCheckError::Difficulty {
            recorded: task.difficulty,
            len,
        });
    }
    let inputs = task
        .input_set()
        .map_err(|e| SelfCheckError::Inputs(e.to_string()))?;
    let program = task.bound_program();
    let out = run(&inputs, &program)?;
    if !canonical_equal(&out, &task.output, opts) {
        return Err(SelfCheckError::OutputMismatch);
    }
    let code = CompiledCode::for_program(&program, &inputs);
    if code.dataframe != task.code.dataframe {
        return Err(SelfCheckError::StaleCode("dataframe"));
    }
    if code.sql != task.code.sql {
        return Err(SelfCheckError::StaleCode("sql"));
    }
    Ok(())
}
