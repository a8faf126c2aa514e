//! The pipeline agent: a policy proposes one operator at a time, the
//! interpreter executes it against the live tables, and the resulting
//! observation feeds the next proposal.

use std::collections::VecDeque;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use tablepipe_core::dsl::{DslError, OperatorCall, PipelineProgram};
use tablepipe_core::interp::{ExecContext, ExecutionLimits};
use tablepipe_core::spm::SchemaState;
use tablepipe_core::table::{CsvWriteOptions, Table, TableError, TableSet};
use tablepipe_core::task::TaskInstance;

use crate::client::{ClientError, TextModelClient};
use crate::prompts;

pub const DEFAULT_BUDGET: usize = 12;
/// Sample rows per live table in an observation.
pub const SAMPLE_ROWS: usize = 5;
/// Observations rendered into the model prompt.
pub const PROMPT_HISTORY: usize = 3;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("{0}")]
    Unusable(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("task inputs are invalid: {0}")]
    Inputs(#[from] TableError),
}

/// What the agent sees after each step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub schema: SchemaState,
    /// First [`SAMPLE_ROWS`] rows of every live table.
    pub samples: IndexMap<String, Table>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Observation {
    fn of(ctx: &ExecContext, error: Option<String>) -> Self {
        Observation {
            schema: ctx.schema_state(),
            samples: ctx
                .tables()
                .iter()
                .map(|t| (t.name().to_string(), t.head(SAMPLE_ROWS)))
                .collect(),
            error,
        }
    }

    /// Plain-text form used in prompts.
    pub fn render(&self) -> String {
        let mut out = format!("Current table: {}\n", self.schema.catalog.current);
        for (name, t) in &self.samples {
            let cols: Vec<String> = t
                .columns()
                .iter()
                .map(|c| format!("{} ({})", c.name, c.ty))
                .collect();
            out.push_str(&format!("{name} columns: {}\n", cols.join(", ")));
            out.push_str(t.to_csv_string(&CsvWriteOptions::display()).trim_end());
            out.push('\n');
        }
        if let Some(e) = &self.error {
            out.push_str(&format!("Error: {e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "call", rename_all = "snake_case")]
pub enum AgentAction {
    ToolCall(OperatorCall),
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub action: AgentAction,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub initial: Observation,
    pub steps: Vec<Step>,
}

impl History {
    pub fn latest(&self) -> &Observation {
        self.steps.last().map_or(&self.initial, |s| &s.observation)
    }
}

pub trait Policy {
    fn next(&mut self, instruction: &str, history: &History) -> Result<AgentAction, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    /// Successful calls only, in execution order.
    pub program: PipelineProgram,
    /// The current table when the episode ended.
    pub output: Table,
    pub history: History,
    pub finished: bool,
    pub exhausted: bool,
}

impl Episode {
    pub fn errors(&self) -> impl Iterator<Item = &str> {
        self.history
            .steps
            .iter()
            .filter_map(|s| s.observation.error.as_deref())
    }

    /// One `{"step", "action", "observation"}` object per line.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.history.steps.iter().enumerate() {
            let line = serde_json::json!({
                "step": i + 1,
                "action": s.action,
                "observation": s.observation,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Runs against the task's refined intent when it has one.
pub fn run_episode(
    task: &TaskInstance,
    policy: &mut dyn Policy,
    budget: usize,
) -> Result<Episode, AgentError> {
    let instruction = task.intent.as_deref().unwrap_or(&task.instruction);
    run_episode_on(&task.input_set()?, instruction, policy, budget)
}

/// Failed calls leave the tables untouched and are not added to the program.
pub fn run_episode_on(
    inputs: &TableSet,
    instruction: &str,
    policy: &mut dyn Policy,
    budget: usize,
) -> Result<Episode, AgentError> {
    let mut ctx = ExecContext::with_limits(inputs.clone(), ExecutionLimits::default());
    let mut history = History {
        initial: Observation::of(&ctx, None),
        steps: Vec::new(),
    };
    let mut ops = Vec::new();
    let mut finished = false;
    for _ in 0..budget {
        let action = policy.next(instruction, &history)?;
        let call = match &action {
            AgentAction::Finish => {
                finished = true;
                break;
            }
            AgentAction::ToolCall(call) => call.clone(),
        };
        let error = match ctx.execute_op(ops.len(), &call) {
            Ok(_) => {
                ops.push(call);
                None
            }
            Err(e) => Some(e.to_string()),
        };
        history.steps.push(Step {
            action,
            observation: Observation::of(&ctx, error),
        });
    }
    let program = PipelineProgram::new(ops).with_sources(inputs.names().map(str::to_string).collect());
    let output = ctx.current().cloned().expect("current table is live");
    Ok(Episode {
        program,
        output,
        history,
        finished,
        exhausted: !finished,
    })
}

/// Replays a fixed list of actions, then finishes.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    script: VecDeque<AgentAction>,
}

impl ScriptedPolicy {
    pub fn new(actions: impl IntoIterator<Item = AgentAction>) -> Self {
        ScriptedPolicy {
            script: actions.into_iter().collect(),
        }
    }

    pub fn replay(p: &PipelineProgram) -> Self {
        ScriptedPolicy::new(p.ops.iter().cloned().map(AgentAction::ToolCall))
    }
}

impl Policy for ScriptedPolicy {
    fn next(&mut self, _instruction: &str, _history: &History) -> Result<AgentAction, AgentError> {
        Ok(self.script.pop_front().unwrap_or(AgentAction::Finish))
    }
}

/// Operator names from the tool prompt and dataframe vocabulary.
fn canonical_op(name: &str) -> String {
    let n = name.trim().to_ascii_lowercase();
    match n.as_str() {
        "merge" => "join",
        "concat" => "union",
        "stack" | "melt" => "unpivot",
        "pivot_table" => "pivot",
        "query" => "filter",
        "sort_values" => "sort",
        "head" => "topk",
        "drop_duplicates" | "duplicate" => "deduplicate",
        "astype" => "cast",
        "wide-to-long" | "widetolong" => "wide_to_long",
        other => other,
    }
    .to_string()
}

fn first_if_list(v: &mut Map<String, Value>, key: &str) {
    if let Some(Value::Array(items)) = v.get(key) {
        if let Some(first) = items.first().cloned() {
            v.insert(key.to_string(), first);
        }
    }
}

/// Map one tool call in the prompt's shape (`name`/`parameters`,
/// `source_tables`, `result_table`, aggregation and rename item lists, ...)
/// onto the DSL's `{"op", "params"}` form.
pub fn tool_call_to_dsl(v: &Value) -> Value {
    let Some(obj) = v.as_object() else {
        return v.clone();
    };
    let name = obj
        .get("name")
        .or_else(|| obj.get("op"))
        .and_then(Value::as_str)
        .map(canonical_op)
        .unwrap_or_default();
    let mut params = obj
        .get("parameters")
        .or_else(|| obj.get("params"))
        .and_then(Value::as_object)
        .cloned()
        .unwrap_or_default();
    for k in ["result_table", "axis", "ignore_index"] {
        params.remove(k);
    }
    if let Some(Value::Array(t)) = params.remove("source_tables") {
        if let Some(l) = t.first() {
            params.insert("left_table".into(), l.clone());
        }
        if let Some(r) = t.get(1) {
            params.insert("right_table".into(), r.clone());
        }
    }
    match name.as_str() {
        "join" | "union" => {
            for key in ["source_table", "table_names"] {
                if let Some(t) = params.remove(key) {
                    params.entry("left_table").or_insert(t);
                }
            }
            first_if_list(&mut params, "how");
        }
        "deduplicate" => first_if_list(&mut params, "keep"),
        "dropna" => first_if_list(&mut params, "how"),
        _ => {}
    }
    if let Some(Value::Array(items)) = params.get("aggregations").cloned() {
        let mut agg = Map::new();
        for it in items {
            if let (Some(c), Some(f)) = (
                it.get("column").and_then(Value::as_str),
                it.get("agg_func").or_else(|| it.get("aggfunc")).and_then(Value::as_str),
            ) {
                agg.insert(c.to_string(), Value::from(f));
            }
        }
        params.insert("aggregations".into(), Value::Object(agg));
    }
    if let Some(items) = params.remove("rename_items") {
        let mut map = Map::new();
        if let Value::Array(items) = items {
            for it in items {
                let pair = match &it {
                    Value::Object(o) => o
                        .get("old_name")
                        .and_then(Value::as_str)
                        .zip(o.get("new_name").and_then(Value::as_str)),
                    Value::Array(a) if a.len() == 2 => a[0].as_str().zip(a[1].as_str()),
                    _ => None,
                };
                if let Some((a, b)) = pair {
                    map.insert(a.to_string(), Value::from(b));
                }
            }
        }
        params.entry("rename_map").or_insert(Value::Object(map));
    }
    if let Some(Value::String(k)) = params.get("k") {
        if let Ok(n) = k.trim().parse::<u64>() {
            params.insert("k".into(), Value::from(n));
        }
    }
    if let Some(Value::String(s)) = params.get("split_comma") {
        if let Ok(b) = s.trim().to_ascii_lowercase().parse::<bool>() {
            params.insert("split_comma".into(), Value::from(b));
        }
    }
    serde_json::json!({"op": name, "params": Value::Object(params)})
}

/// Parse one tool call; `finish` (or an empty name) ends the episode.
pub fn parse_action(v: &Value) -> Result<AgentAction, DslError> {
    let dsl = tool_call_to_dsl(v);
    if matches!(dsl["op"].as_str(), Some("finish" | "stop" | "done")) {
        return Ok(AgentAction::Finish);
    }
    OperatorCall::from_json(0, &dsl).map(AgentAction::ToolCall)
}

/// The JSON array in a model reply: the last fenced block if any, else the
/// outermost brackets.
pub fn extract_json_list(reply: &str) -> Option<Vec<Value>> {
    let mut candidates = Vec::new();
    let mut rest = reply;
    while let Some(start) = rest.find("```") {
        let body = &rest[start + 3..];
        let body = body.strip_prefix("json").unwrap_or(body);
        let end = body.find("```").unwrap_or(body.len());
        candidates.push(&body[..end]);
        rest = &body[end.min(body.len())..];
        rest = rest.strip_prefix("```").unwrap_or(rest);
    }
    candidates.reverse();
    if let (Some(a), Some(b)) = (reply.find('['), reply.rfind(']')) {
        if a < b {
            candidates.push(&reply[a..=b]);
        }
    }
    candidates.iter().find_map(|c| match serde_json::from_str(c.trim()) {
        Ok(Value::Array(items)) => Some(items),
        Ok(obj @ Value::Object(_)) => Some(vec![obj]),
        _ => None,
    })
}

/// Model-driven policy. A reply may list several steps; they are queued and
/// the queue is dropped as soon as one fails.
pub struct LlmPolicy {
    client: Arc<dyn TextModelClient>,
    temperature: f64,
    queued: VecDeque<AgentAction>,
    seen_steps: usize,
}

impl std::fmt::Debug for LlmPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmPolicy")
            .field("model", &self.client.model())
            .field("temperature", &self.temperature)
            .finish()
    }
}

pub fn llm_policy(client: Arc<dyn TextModelClient>) -> Result<LlmPolicy, AgentError> {
    if client.is_offline() {
        return Err(AgentError::Unusable(
            "the agent needs a model: the offline client cannot choose operators (pass --model)"
                .into(),
        ));
    }
    Ok(LlmPolicy {
        client,
        temperature: 0.0,
        queued: VecDeque::new(),
        seen_steps: 0,
    })
}

impl LlmPolicy {
    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    /// The full prompt for the next decision.
    pub fn prompt(instruction: &str, history: &History) -> String {
        let mut out = prompts::AGENT.render(&[
            ("USER_INTENT", instruction),
            ("SOURCETABLE", &history.initial.render()),
        ]);
        out.push_str("\nTool input schemas:\n");
        out.push_str(prompts::TOOLS);
        let recent = history.steps.len().saturating_sub(PROMPT_HISTORY);
        let done: Vec<String> = history
            .steps
            .iter()
            .filter(|s| s.observation.error.is_none())
            .filter_map(|s| match &s.action {
                AgentAction::ToolCall(c) => Some(c.to_json().to_string()),
                AgentAction::Finish => None,
            })
            .collect();
        if !done.is_empty() {
            out.push_str("\nSteps already executed:\n");
            for d in &done {
                out.push_str(d);
                out.push('\n');
            }
        }
        if !history.steps.is_empty() {
            out.push_str("\nRecent observations:\n");
            for (i, s) in history.steps.iter().enumerate().skip(recent) {
                let action = match &s.action {
                    AgentAction::ToolCall(c) => c.to_json().to_string(),
                    AgentAction::Finish => "finish".into(),
                };
                out.push_str(&format!("[step {}] {action}\n{}", i + 1, s.observation.render()));
            }
        }
        out.push_str(
            "\nReturn the remaining steps as a JSON list in the format above. \
             Return an empty list when the current table already matches the intent.\n",
        );
        out
    }

    fn ask(&self, prompt: &str) -> Result<Vec<AgentAction>, String> {
        let reply = self.client.complete(prompt, self.temperature).map_err(|e| e.to_string())?;
        let items = extract_json_list(&reply).ok_or("reply has no JSON list")?;
        items
            .iter()
            .map(|v| parse_action(v).map_err(|e| e.to_string()))
            .collect()
    }
}

impl Policy for LlmPolicy {
    fn next(&mut self, instruction: &str, history: &History) -> Result<AgentAction, AgentError> {
        let new_steps = &history.steps[self.seen_steps.min(history.steps.len())..];
        if new_steps.iter().any(|s| s.observation.error.is_some()) {
            self.queued.clear();
        }
        self.seen_steps = history.steps.len();
        if let Some(a) = self.queued.pop_front() {
            return Ok(a);
        }
        let prompt = Self::prompt(instruction, history);
        let actions = match self.ask(&prompt) {
            Ok(a) => a,
            Err(first) => {
                log::warn!("agent reply unusable ({first}); asking again");
                let repair = format!(
                    "{prompt}\nYour previous reply could not be used: {first}. \
                     Reply with only the JSON list.\n"
                );
                self.ask(&repair).map_err(AgentError::Policy)?
            }
        };
        self.queued = actions.into_iter().collect();
        Ok(self.queued.pop_front().unwrap_or(AgentAction::Finish))
    }
}
