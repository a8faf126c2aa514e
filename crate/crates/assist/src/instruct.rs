//! Two-step instruction generation (describe, then refine) and the
//! alignment judge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tablepipe_core::dsl::{AggFunc, DropHow, Keep, OperatorCall, PipelineProgram, UnionHow};
use tablepipe_core::spm::{propagate, SchemaState};
use tablepipe_core::table::{CsvWriteOptions, Table, TableSet};

use crate::client::{ClientError, TextModelClient};
use crate::prompts;

/// Rows shown per table in prompt previews.
pub const PREVIEW_ROWS: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Judge rounds before a task is discarded.
pub const JUDGE_ROUNDS: usize = 2;

#[derive(Debug, Error)]
pub enum InstructError {
    #[error("cannot describe an empty chain")]
    EmptyChain,
    #[error("{0} must not be empty")]
    EmptyText(&'static str),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("model reply has no \"Instruction:\" marker")]
    MissingMarker,
    #[error("judge reply is not the expected JSON object: {reply}")]
    MalformedJudge { reply: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstructOptions {
    /// Sampling temperature for describe and refine.
    pub temperature: f64,
    /// The judge classifies; it runs greedy.
    pub judge_temperature: f64,
}

impl Default for InstructOptions {
    fn default() -> Self {
        InstructOptions {
            temperature: DEFAULT_TEMPERATURE,
            judge_temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeReply {
    pub is_valid: bool,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub draft: String,
    #[serde(rename = "final")]
    pub final_intent: String,
    pub judge: JudgeReply,
    /// Judge rounds used.
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstructionOutcome {
    Accepted(InstructionRecord),
    /// Every judge round came back invalid.
    Discarded(InstructionRecord),
}

/// One numbered line per operator, parameters as compact JSON.
pub fn chain_text(p: &PipelineProgram) -> String {
    p.ops
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", i + 1, c.to_json()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn preview(t: &Table) -> String {
    let csv = t.head(PREVIEW_ROWS).to_csv_string(&CsvWriteOptions::display());
    format!("{}:\n{}", t.name(), csv.trim_end())
}

pub fn tables_text(tables: &TableSet) -> String {
    tables.iter().map(preview).collect::<Vec<_>>().join("\n\n")
}

pub fn generation_prompt(inputs: &TableSet, output: &Table, p: &PipelineProgram) -> String {
    prompts::GENERATE.render(&[
        ("transform_chain_str", &chain_text(p)),
        ("input_table_str", &tables_text(inputs)),
        ("target_table_str", &preview(output)),
    ])
}

pub fn refinement_prompt(draft: &str, p: &PipelineProgram) -> String {
    prompts::REFINE.render(&[("transform_chain", &chain_text(p)), ("task_instruction", draft)])
}

pub fn verification_prompt(p: &PipelineProgram, draft: &str, intent: &str) -> String {
    prompts::VERIFY.render(&[
        ("transform_chain_str", &chain_text(p)),
        ("instruction", draft),
        ("intent_text", intent),
    ])
}

/// Step 1: a structured description of the chain.
pub fn describe(
    inputs: &TableSet,
    output: &Table,
    p: &PipelineProgram,
    client: &dyn TextModelClient,
    opts: &InstructOptions,
) -> Result<String, InstructError> {
    if p.is_empty() {
        return Err(InstructError::EmptyChain);
    }
    if client.is_offline() {
        return Ok(template_description(inputs, p));
    }
    let reply = client.complete(&generation_prompt(inputs, output, p), opts.temperature)?;
    extract_instruction(&reply)
}

/// Text after the `Instruction:` marker.
pub fn extract_instruction(reply: &str) -> Result<String, InstructError> {
    let (_, rest) = reply.split_once("Instruction:").ok_or(InstructError::MissingMarker)?;
    let text = rest.trim();
    let text = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .unwrap_or(text)
        .trim();
    if text.is_empty() {
        return Err(InstructError::EmptyText("instruction"));
    }
    Ok(text.to_string())
}

/// Step 2: the user-facing intent statement.
pub fn refine(
    draft: &str,
    p: &PipelineProgram,
    client: &dyn TextModelClient,
    opts: &InstructOptions,
) -> Result<String, InstructError> {
    if draft.trim().is_empty() {
        return Err(InstructError::EmptyText("draft"));
    }
    if client.is_offline() {
        return Ok(normalize_style(draft));
    }
    let reply = client.complete(&refinement_prompt(draft, p), opts.temperature)?;
    let reply = reply.trim();
    let text = reply.strip_prefix("User Intent:").unwrap_or(reply).trim();
    if text.is_empty() {
        return Err(InstructError::EmptyText("intent"));
    }
    Ok(text.to_string())
}

/// Collapse whitespace, capitalize, and end with a period.
pub fn normalize_style(text: &str) -> String {
    let mut s = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if let Some(c) = s.chars().next() {
        let upper: String = c.to_uppercase().collect();
        s.replace_range(..c.len_utf8(), &upper);
    }
    if !s.ends_with(['.', '!', '?']) {
        s.push('.');
    }
    s
}

/// Phase-2 alignment check. A malformed reply is retried once.
pub fn judge(
    p: &PipelineProgram,
    draft: &str,
    intent: &str,
    client: &dyn TextModelClient,
    opts: &InstructOptions,
) -> Result<JudgeReply, InstructError> {
    if draft.trim().is_empty() {
        return Err(InstructError::EmptyText("draft"));
    }
    if intent.trim().is_empty() {
        return Err(InstructError::EmptyText("intent"));
    }
    if client.is_offline() {
        return Ok(JudgeReply {
            is_valid: true,
            intent: intent.to_string(),
        });
    }
    let prompt = verification_prompt(p, draft, intent);
    let mut last = String::new();
    for _ in 0..2 {
        last = client.complete(&prompt, opts.judge_temperature)?;
        if let Some(r) = parse_judge_reply(&last) {
            return Ok(r);
        }
        log::warn!("judge reply is not valid JSON, retrying");
    }
    Err(InstructError::MalformedJudge { reply: last })
}

/// Accepts `"true"`/`"false"` strings or JSON booleans, optionally inside a
/// code fence or surrounded by prose.
pub fn parse_judge_reply(reply: &str) -> Option<JudgeReply> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    let v: serde_json::Value = serde_json::from_str(&reply[start..=end]).ok()?;
    let is_valid = match v.get("is_valid")? {
        serde_json::Value::Bool(b) => *b,
        serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => true,
            "false" => false,
            _ => return None,
        },
        _ => return None,
    };
    let intent = v.get("intent")?.as_str()?.trim().to_string();
    if intent.is_empty() {
        return None;
    }
    Some(JudgeReply { is_valid, intent })
}

/// describe, refine, then up to [`JUDGE_ROUNDS`] judge rounds; an invalid
/// verdict's rewritten intent is what the next round judges.
pub fn generate_instruction(
    inputs: &TableSet,
    output: &Table,
    p: &PipelineProgram,
    client: &dyn TextModelClient,
    opts: &InstructOptions,
) -> Result<InstructionOutcome, InstructError> {
    let draft = describe(inputs, output, p, client, opts)?;
    let mut intent = refine(&draft, p, client, opts)?;
    for round in 1..=JUDGE_ROUNDS {
        let verdict = judge(p, &draft, &intent, client, opts)?;
        let record = InstructionRecord {
            draft: draft.clone(),
            final_intent: verdict.intent.clone(),
            judge: verdict.clone(),
            rounds: round,
        };
        if verdict.is_valid {
            return Ok(InstructionOutcome::Accepted(record));
        }
        if round == JUDGE_ROUNDS {
            return Ok(InstructionOutcome::Discarded(record));
        }
        intent = verdict.intent;
    }
    unreachable!("JUDGE_ROUNDS is positive")
}

fn quoted(cols: &[String]) -> String {
    let q: Vec<String> = cols.iter().map(|c| format!("'{c}'")).collect();
    match q.len() {
        0 => String::new(),
        1 => q[0].clone(),
        n => format!("{} and {}", q[..n - 1].join(", "), q[n - 1]),
    }
}

fn agg_phrase(f: &AggFunc) -> &str {
    match f {
        AggFunc::Min => "minimum",
        AggFunc::Max => "maximum",
        other => other.as_str(),
    }
}

fn direction(asc: bool) -> &'static str {
    if asc {
        "ascending"
    } else {
        "descending"
    }
}

/// The offline draft: one sentence per operator joined with "Then,".
pub fn template_description(inputs: &TableSet, p: &PipelineProgram) -> String {
    let mut state = SchemaState::from_tables(inputs);
    let mut sentences = Vec::with_capacity(p.len());
    for call in &p.ops {
        let target = call
            .target_table()
            .map(str::to_string)
            .unwrap_or_else(|| state.catalog.current.clone());
        let pair = state.catalog.resolve_pair(call).ok();
        sentences.push(sentence(call, &target, pair));
        match propagate(call, &state) {
            Ok(next) => state = next,
            Err(e) => log::debug!("template description past an invalid step: {e}"),
        }
    }
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i == 0 {
            out.push_str(s);
        } else {
            let mut chars = s.chars();
            let first = chars.next().map(|c| c.to_lowercase().to_string()).unwrap_or_default();
            out.push_str(&format!(" Then, {first}{}", chars.as_str()));
        }
    }
    out
}

fn sentence(call: &OperatorCall, t: &str, pair: Option<(String, String)>) -> String {
    let (l, r) = pair.unwrap_or_else(|| ("the current table".into(), "the other table".into()));
    match call {
        OperatorCall::Filter(p) => {
            format!("Filter the rows of '{t}' to keep those where {}.", p.condition)
        }
        OperatorCall::Dropna(p) => {
            let scope = match (&p.subset, p.how) {
                (None, DropHow::Any) => "in any column".to_string(),
                (None, DropHow::All) => "in every column".to_string(),
                (Some(s), DropHow::Any) if s.len() == 1 => format!("in {}", quoted(s)),
                (Some(s), DropHow::Any) => format!("in any of {}", quoted(s)),
                (Some(s), DropHow::All) => format!("in all of {}", quoted(s)),
            };
            format!("Remove rows from '{t}' that have missing values {scope}.")
        }
        OperatorCall::Deduplicate(p) => {
            let basis = match &p.subset {
                Some(s) => format!("based on {}", quoted(s)),
                None => "across all columns".into(),
            };
            let keep = match p.keep {
                Keep::First => "first",
                Keep::Last => "last",
            };
            format!("Remove duplicate rows from '{t}' {basis}, keeping the {keep} occurrence.")
        }
        OperatorCall::Cast(p) => {
            let ty = match p.dtype.as_str() {
                "int" => "integer",
                "float" => "float",
                "str" => "string",
                _ => "boolean",
            };
            format!("Convert the column '{}' in '{t}' to {ty} type.", p.column)
        }
        OperatorCall::Join(p) => {
            let keys: Vec<String> = p
                .key_pairs()
                .iter()
                .map(|(a, b)| {
                    if a == b {
                        format!("'{a}'")
                    } else {
                        format!("'{a}' = '{b}'")
                    }
                })
                .collect();
            let keys = match keys.len() {
                0 => "matching columns".to_string(),
                1 => keys[0].clone(),
                n => format!("{} and {}", keys[..n - 1].join(", "), keys[n - 1]),
            };
            format!(
                "Perform a {} join of '{l}' and '{r}' on {keys} with suffixes '{}' and '{}', producing '{l}_{r}_join'.",
                p.how.as_str(),
                p.suffixes[0],
                p.suffixes[1]
            )
        }
        OperatorCall::Union(p) => {
            let dup = match p.how {
                UnionHow::All => "keeping duplicates",
                UnionHow::Distinct => "removing duplicates",
            };
            format!("Combine the rows of '{l}' and '{r}' with a union {dup}, producing '{l}_{r}_union'.")
        }
        OperatorCall::Groupby(p) => {
            let aggs: Vec<String> = p
                .agg
                .iter()
                .map(|(c, f)| format!("the {} of '{c}'", agg_phrase(f)))
                .collect();
            let aggs = match aggs.len() {
                1 => aggs[0].clone(),
                n => format!("{} and {}", aggs[..n - 1].join(", "), aggs[n - 1]),
            };
            format!("Group the data in '{t}' by {} and compute {aggs}.", quoted(&p.by))
        }
        OperatorCall::Pivot(p) => format!(
            "Pivot '{t}' with {} as the index, '{}' as the columns and the {} of '{}' as the values.",
            quoted(&p.index),
            p.columns,
            agg_phrase(&p.aggfunc),
            p.values
        ),
        OperatorCall::Unpivot(p) => {
            let ids = if p.id_vars.is_empty() {
                "no identifier columns".to_string()
            } else {
                format!("{} as identifiers", quoted(&p.id_vars))
            };
            format!(
                "Unpivot '{t}', keeping {ids} and stacking {} into '{}' and '{}' columns.",
                quoted(&p.value_vars),
                p.var_name,
                p.value_name
            )
        }
        OperatorCall::Explode(p) => {
            let split = if p.split_comma {
                ", splitting comma-separated values first"
            } else {
                ""
            };
            format!("Explode the column '{}' in '{t}' into separate rows{split}.", p.column)
        }
        OperatorCall::Transpose(_) => format!("Transpose the rows and columns of '{t}'."),
        OperatorCall::WideToLong(p) => {
            let sep = if p.sep.is_empty() {
                String::new()
            } else {
                format!(" and separator '{}'", p.sep)
            };
            format!(
                "Reshape '{t}' from wide to long format using the stub names {}, with {} as identifiers, suffixes stored in '{}'{sep}.",
                quoted(&p.stubnames),
                quoted(&p.i),
                p.j
            )
        }
        OperatorCall::Sort(p) => {
            if p.ascending.iter().all(|a| *a == p.ascending[0]) {
                format!(
                    "Sort the data in '{t}' by {} in {} order.",
                    quoted(&p.by),
                    direction(p.ascending[0])
                )
            } else {
                let keys: Vec<String> = p
                    .by
                    .iter()
                    .zip(&p.ascending)
                    .map(|(c, a)| format!("'{c}' in {} order", direction(*a)))
                    .collect();
                let n = keys.len();
                format!(
                    "Sort the data in '{t}' by {} and then {}.",
                    keys[..n - 1].join(", then "),
                    keys[n - 1]
                )
            }
        }
        OperatorCall::Topk(p) => format!("Keep the first {} rows of '{t}'.", p.k),
        OperatorCall::Select(p) => format!("Select the columns {} from '{t}'.", quoted(&p.columns)),
        OperatorCall::Rename(p) => {
            let items: Vec<String> = p
                .rename_map
                .iter()
                .map(|(a, b)| format!("'{a}' to '{b}'"))
                .collect();
            let items = match items.len() {
                1 => items[0].clone(),
                n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
            };
            format!("Rename the columns in '{t}': {items}.")
        }
    }
}
