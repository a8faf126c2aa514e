//! Subcommand implementations. Each returns a serializable report; `main`
//! decides how to print it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use indexmap::IndexMap;
use serde::Serialize;

use tablepipe_assist::agent::{self, AgentAction, Policy, ScriptedPolicy, DEFAULT_BUDGET};
use tablepipe_assist::client::{ChatClient, OfflineClient, TextModelClient};
use tablepipe_assist::instruct::{self, InstructOptions, InstructionOutcome};
use tablepipe_core::codegen::{emit, BackendDialect, EmitOptions};
use tablepipe_core::dsl::{program_from_value, OperatorKind, PipelineProgram};
use tablepipe_core::eval::{
    canonical_equal, distinct_n, score_task, self_bleu, timing_stats, EquivalenceOptions,
    EvalReport, TimingSummary,
};
use tablepipe_core::interp::{execute_program, ExecutionLimits, TraceEntry};
use tablepipe_core::spm::SchemaState;
use tablepipe_core::synth::{
    synthesize_task, Corpus, Difficulty, LengthDistribution, SynthConfig, TransitionMatrix,
    DEFAULT_MEAN_LENGTH,
};
use tablepipe_core::table::{ingest_csv, CsvWriteOptions, CurationOptions, Table, TableSet};
use tablepipe_core::task::{load_tasks, self_check, task_files, TaskInstance};

/// Offline unless a model name is given.
pub fn make_client(model: Option<&str>) -> Result<Arc<dyn TextModelClient>> {
    Ok(match model {
        Some(m) => Arc::new(ChatClient::from_env(m)?),
        None => Arc::new(OfflineClient),
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Args)]
pub struct SynthesizeArgs {
    /// Directory of CSV tables.
    #[arg(long)]
    pub tables: PathBuf,
    /// Transition counts JSON; the built-in proxy matrix otherwise.
    #[arg(long)]
    pub transitions: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Model for instruction generation and judging.
    #[arg(long)]
    pub model: Option<String>,
    /// Mean of the chain-length prior.
    #[arg(long, default_value_t = DEFAULT_MEAN_LENGTH)]
    pub mean_length: f64,
    /// Probability of drawing two input tables (default: the matrix's
    /// join+union mass).
    #[arg(long)]
    pub multi_table_prob: Option<f64>,
    /// Ingest tables without curation.
    #[arg(long)]
    pub raw: bool,
    /// Give up after this many attempts per requested task.
    #[arg(long, default_value_t = 10)]
    pub attempts_per_task: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Rejection {
    pub attempt: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesizeSummary {
    pub written: usize,
    pub attempts: u64,
    pub rejected: Vec<Rejection>,
    pub difficulty: IndexMap<String, usize>,
    pub out: PathBuf,
}

pub const REJECTIONS_FILE: &str = "rejections.jsonl";

pub fn synthesize(args: &SynthesizeArgs) -> Result<SynthesizeSummary> {
    let opts = if args.raw {
        CurationOptions::raw()
    } else {
        CurationOptions::default()
    };
    let corpus = Corpus::load_dir(&args.tables, &opts)
        .with_context(|| format!("loading tables from {}", args.tables.display()))?;
    let matrix = match &args.transitions {
        Some(p) => TransitionMatrix::load(p)?,
        None => TransitionMatrix::proxy(),
    };
    let cfg = SynthConfig {
        matrix,
        length: LengthDistribution::fit_mean(args.mean_length, 1, 8),
        multi_table_prob: args.multi_table_prob,
        ..SynthConfig::default()
    };
    let client = make_client(args.model.as_deref())?;
    let iopts = InstructOptions::default();
    let eq = EquivalenceOptions::default();
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut summary = SynthesizeSummary {
        written: 0,
        attempts: 0,
        rejected: Vec::new(),
        difficulty: Difficulty::ALL.iter().map(|d| (d.as_str().to_string(), 0)).collect(),
        out: args.out.clone(),
    };
    let max_attempts = (args.count * args.attempts_per_task.max(1)) as u64;
    while summary.written < args.count && summary.attempts < max_attempts {
        let attempt = summary.attempts;
        summary.attempts += 1;
        let id = format!("task_{:05}", summary.written + 1);
        match build_task(&corpus, &cfg, args.seed, attempt, &id, client.as_ref(), &iopts, &eq) {
            Ok(task) => {
                let path = args.out.join(format!("{id}.json"));
                task.save(&path)?;
                *summary.difficulty.entry(task.difficulty.as_str().to_string()).or_default() += 1;
                summary.written += 1;
            }
            Err(reason) => {
                log::warn!("attempt {attempt} rejected: {reason}");
                summary.rejected.push(Rejection { attempt, reason });
            }
        }
    }
    let log: String = summary
        .rejected
        .iter()
        .map(|r| serde_json::to_string(r).expect("rejection serializes") + "\n")
        .collect();
    write_file(&args.out.join(REJECTIONS_FILE), &log)?;
    if summary.written < args.count {
        log::warn!(
            "only {} of {} tasks after {} attempts",
            summary.written,
            args.count,
            summary.attempts
        );
    }
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn build_task(
    corpus: &Corpus,
    cfg: &SynthConfig,
    seed: u64,
    attempt: u64,
    id: &str,
    client: &dyn TextModelClient,
    iopts: &InstructOptions,
    eq: &EquivalenceOptions,
) -> std::result::Result<TaskInstance, String> {
    let s = synthesize_task(corpus, cfg, seed, attempt).map_err(|e| format!("synthesis: {e}"))?;
    let mut task = TaskInstance::new(id, &s.inputs, s.chain.program, s.chain.output, "");
    task.sources = s.sources;
    let outcome = instruct::generate_instruction(&s.inputs, &task.output, &task.program, client, iopts)
        .map_err(|e| format!("instruction: {e}"))?;
    let record = match outcome {
        InstructionOutcome::Accepted(r) => r,
        InstructionOutcome::Discarded(r) => {
            return Err(format!("judge rejected the intent in {} rounds", r.rounds))
        }
    };
    task.instruction = record.draft;
    task.intent = Some(record.final_intent);
    self_check(&task, eq).map_err(|e| format!("self-check: {e}"))?;
    Ok(task)
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted programs, one `<task id>.json` each.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of gold task files.
    #[arg(long)]
    pub gold: PathBuf,
    /// Write report.json and report.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the CSV.
    #[arg(long, default_value = "model")]
    pub name: String,
}

/// A prediction file holds a DSL array, or an object with a `program` field.
pub fn load_prediction(path: &Path) -> Option<PipelineProgram> {
    let text = std::fs::read_to_string(path).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    let v = match v {
        serde_json::Value::Object(mut o) => o.remove("program")?,
        v => v,
    };
    match program_from_value(&v) {
        Ok(p) => Some(p),
        Err(e) => {
            log::info!("{}: {e}", path.display());
            None
        }
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let gold = load_tasks(&args.gold)?;
    let mut preds: IndexMap<String, PathBuf> = task_files(&args.pred)?
        .into_iter()
        .filter_map(|p| {
            let id = p.file_stem()?.to_string_lossy().into_owned();
            Some((id, p))
        })
        .collect();
    let eq = EquivalenceOptions::default();
    let mut warnings = Vec::new();
    let mut outcomes = Vec::new();
    for task in &gold {
        match preds.shift_remove(&task.id) {
            Some(path) => {
                let pred = load_prediction(&path);
                outcomes.push(score_task(pred.as_ref(), task, &eq, ExecutionLimits::default()));
            }
            None => warnings.push(format!("no prediction for task {}", task.id)),
        }
    }
    for id in preds.keys() {
        warnings.push(format!("prediction {id} has no gold task"));
    }
    if outcomes.is_empty() {
        warnings.push("no predictions matched any gold task".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let report = EvalReport::from_outcomes(outcomes, warnings);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_file(&dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        write_file(&dir.join("report.csv"), &report.to_csv(&args.name))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    /// Mean of the chain-length prior the set was drawn with.
    #[arg(long, default_value_t = DEFAULT_MEAN_LENGTH)]
    pub mean_length: f64,
    /// Skip re-executing programs for timing.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub tasks: usize,
    pub mean_length: f64,
    /// Analytic mean of the truncated-geometric prior.
    pub prior_mean: f64,
    pub length_histogram: BTreeMap<usize, usize>,
    pub difficulty: IndexMap<String, usize>,
    pub operator_frequency: IndexMap<String, usize>,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub self_bleu_4: Option<f64>,
    pub timing: BTreeMap<String, TimingSummary>,
}

pub fn stats(args: &StatsArgs) -> Result<StatsReport> {
    let tasks = load_tasks(&args.tasks)?;
    let prior = LengthDistribution::fit_mean(args.mean_length, 1, 8);
    let mut length_histogram: BTreeMap<usize, usize> = (1..=8).map(|k| (k, 0)).collect();
    let mut difficulty: IndexMap<String, usize> =
        Difficulty::ALL.iter().map(|d| (d.as_str().to_string(), 0)).collect();
    let mut operator_frequency: IndexMap<String, usize> =
        OperatorKind::ALL.iter().map(|k| (k.name().to_string(), 0)).collect();
    let mut total_len = 0usize;
    let mut traces: Vec<TraceEntry> = Vec::new();
    for t in &tasks {
        *length_histogram.entry(t.program.len()).or_default() += 1;
        *difficulty.entry(t.difficulty.as_str().to_string()).or_default() += 1;
        for k in t.program.kinds() {
            *operator_frequency.entry(k.name().to_string()).or_default() += 1;
        }
        total_len += t.program.len();
        if !args.no_timing {
            match execute_program(&t.input_set()?, &t.bound_program(), ExecutionLimits::default()) {
                Ok(o) => traces.extend(o.trace),
                Err(e) => log::warn!("task {}: {e}", t.id),
            }
        }
    }
    let texts: Vec<&str> = tasks
        .iter()
        .map(|t| t.intent.as_deref().unwrap_or(&t.instruction))
        .filter(|s| !s.trim().is_empty())
        .collect();
    Ok(StatsReport {
        tasks: tasks.len(),
        mean_length: if tasks.is_empty() {
            0.0
        } else {
            total_len as f64 / tasks.len() as f64
        },
        prior_mean: prior.mean(),
        length_histogram,
        difficulty,
        operator_frequency,
        distinct_1: distinct_n(&texts, 1).ok(),
        distinct_2: distinct_n(&texts, 2).ok(),
        self_bleu_4: self_bleu(&texts, 4).ok(),
        timing: timing_stats(&traces),
    })
}

/// Where a program and its inputs come from.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Task file supplying inputs (and the program unless --program is given).
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// DSL program JSON.
    #[arg(long)]
    pub program: Option<PathBuf>,
    /// Input CSVs, named table_1, table_2, ... in order.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
}

impl SourceArgs {
    pub fn resolve(&self) -> Result<(TableSet, PipelineProgram)> {
        let (inputs, task_program) = match &self.task {
            Some(path) => {
                let t = TaskInstance::load(path)?;
                (t.input_set()?, Some(t.program))
            }
            None => {
                if self.inputs.is_empty() {
                    bail!("give --task or at least one --input");
                }
                let tables = self
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ingest_csv(p, &format!("table_{}", i + 1), &CurationOptions::raw()))
                    .collect::<std::result::Result<Vec<Table>, _>>()?;
                (TableSet::from_tables(tables)?, None)
            }
        };
        let program = match (&self.program, task_program) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                tablepipe_core::dsl::parse_program(&text)?
            }
            (None, Some(p)) => p,
            (None, None) => bail!("no program: give --program or --task"),
        };
        let names = inputs.names().map(str::to_string).collect();
        Ok((inputs, program.with_sources(names)))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub table: Table,
    pub trace: Vec<TraceEntry>,
}

pub fn run(args: &RunArgs) -> Result<RunReport> {
    let (inputs, program) = args.source.resolve()?;
    let out = execute_program(&inputs, &program, ExecutionLimits::default())?;
    Ok(RunReport {
        table: out.table,
        trace: out.trace,
    })
}

pub fn table_csv(t: &Table) -> String {
    t.to_csv_string(&CsvWriteOptions::display())
}

#[derive(Debug, Clone, Args)]
pub struct CompileArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// dataframe or sql.
    #[arg(long, default_value = "dataframe")]
    pub backend: BackendDialect,
    /// Mark each operator's code with a comment.
    #[arg(long)]
    pub annotate: bool,
}

pub fn compile(args: &CompileArgs) -> Result<String> {
    let (inputs, program) = args.source.resolve()?;
    let opts = EmitOptions {
        annotate: args.annotate,
        schema: Some(SchemaState::from_tables(&inputs)),
    };
    Ok(emit(&program, args.backend, &opts).text)
}

#[derive(Debug, Clone, Args)]
pub struct InstructArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = instruct::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstructReport {
    pub accepted: bool,
    pub record: instruct::InstructionRecord,
}

pub fn instruct(args: &InstructArgs) -> Result<InstructReport> {
    let task = TaskInstance::load(&args.task)?;
    let client = make_client(args.model.as_deref())?;
    let opts = InstructOptions {
        temperature: args.temperature,
        ..InstructOptions::default()
    };
    let outcome = instruct::generate_instruction(
        &task.input_set()?,
        &task.output,
        &task.program,
        client.as_ref(),
        &opts,
    )?;
    Ok(match outcome {
        InstructionOutcome::Accepted(record) => InstructReport { accepted: true, record },
        InstructionOutcome::Discarded(record) => InstructReport { accepted: false, record },
    })
}

#[derive(Debug, Clone, Args)]
pub struct AgentArgs {
    #[arg(long)]
    pub task: PathBuf,
    /// Model driving the policy.
    #[arg(long)]
    pub model: Option<String>,
    /// Replay this DSL program instead of asking a model.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
    /// Write the episode transcript (JSON lines) here.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentReport {
    pub task: String,
    pub program: PipelineProgram,
    pub ea: bool,
    pub steps: usize,
    pub errors: usize,
    pub finished: bool,
    pub exhausted: bool,
}

pub fn run_agent(args: &AgentArgs) -> Result<AgentReport> {
    let task = TaskInstance::load(&args.task)?;
    let mut policy: Box<dyn Policy> = match (&args.script, &args.model) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let p = tablepipe_core::dsl::parse_program(&text)?;
            Box::new(ScriptedPolicy::new(p.ops.into_iter().map(AgentAction::ToolCall)))
        }
        (None, model) => Box::new(agent::llm_policy(make_client(model.as_deref())?)?),
    };
    let ep = agent::run_episode(&task, policy.as_mut(), args.budget)?;
    if let Some(path) = &args.transcript {
        write_file(path, &ep.transcript_jsonl())?;
    }
    Ok(AgentReport {
        task: task.id.clone(),
        ea: canonical_equal(&ep.output, &task.output, &EquivalenceOptions::default()),
        steps: ep.history.steps.len(),
        errors: ep.errors().count(),
        finished: ep.finished,
        exhausted: ep.exhausted,
        program: ep.program,
    })
}
