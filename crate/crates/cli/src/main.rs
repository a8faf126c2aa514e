use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::Serialize;

use tablepipe_cli::commands::{self, *};
use tablepipe_cli::review;

#[derive(Parser)]
#[command(name = "tablepipe", version, about = "Synthesize, run, compile and evaluate table-preparation pipelines")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmark tasks from a directory of tables.
    Synthesize(SynthesizeArgs),
    /// Score predicted programs against gold tasks.
    Evaluate(EvaluateArgs),
    /// Length, operator, diversity and timing statistics of a task set.
    Stats(StatsArgs),
    /// Execute a program and print the result table.
    Run(RunArgs),
    /// Emit code for a program.
    Compile(CompileArgs),
    /// Generate and judge an instruction for a task.
    Instruct(InstructArgs),
    /// Run the pipeline agent on a task.
    Agent(AgentArgs),
    /// Serve the review API (and optionally a built front end).
    ReviewServe(ReviewArgs),
}

#[derive(clap::Args)]
struct ReviewArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// NDJSON verdict log.
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of static front-end assets.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synthesize(a) => {
            let s = commands::synthesize(&a)?;
            if cli.json {
                print_json(&s)?;
            } else {
                println!(
                    "wrote {} tasks to {} ({} attempts, {} rejected)",
                    s.written,
                    s.out.display(),
                    s.attempts,
                    s.rejected.len()
                );
                for (d, n) in &s.difficulty {
                    println!("  {d}: {n}");
                }
            }
        }
        Command::Evaluate(a) => {
            let r = commands::evaluate(&a)?;
            if cli.json {
                print_json(&r)?;
            } else {
                println!("{:<8} {:>5} {:>8} {:>8} {:>8}", "tier", "n", "EA", "PV", "OA");
                for (tier, g) in &r.aggregates {
                    println!("{tier:<8} {:>5} {:>8.2} {:>8.2} {:>8.2}", g.n, g.ea, g.pv, g.oa);
                }
                for w in &r.warnings {
                    println!("warning: {w}");
                }
            }
        }
        Command::Stats(a) => {
            let s = commands::stats(&a)?;
            if cli.json {
                print_json(&s)?;
            } else {
                println!("tasks: {}", s.tasks);
                println!("mean length: {:.3} (prior {:.3})", s.mean_length, s.prior_mean);
                println!("length histogram:");
                for (k, n) in &s.length_histogram {
                    println!("  {k}: {n}");
                }
                println!("difficulty:");
                for (d, n) in &s.difficulty {
                    println!("  {d}: {n}");
                }
                println!("operator frequency:");
                for (k, n) in &s.operator_frequency {
                    println!("  {k}: {n}");
                }
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
                println!("distinct-1: {}", fmt(s.distinct_1));
                println!("distinct-2: {}", fmt(s.distinct_2));
                println!("self-BLEU-4: {}", fmt(s.self_bleu_4));
                if !s.timing.is_empty() {
                    println!("timing (ms): kind count median p75 max");
                    for (k, t) in &s.timing {
                        println!(
                            "  {k} {} {:.3} {:.3} {:.3}",
                            t.count,
                            t.median * 1e3,
                            t.p75 * 1e3,
                            t.max * 1e3
                        );
                    }
                }
            }
        }
        Command::Run(a) => {
            let r = commands::run(&a)?;
            if cli.json {
                print_json(&r)?;
            } else {
                print!("{}", table_csv(&r.table));
            }
        }
        Command::Compile(a) => {
            let code = commands::compile(&a)?;
            if cli.json {
                print_json(&serde_json::json!({"backend": a.backend, "code": code}))?;
            } else {
                print!("{code}");
                if !code.ends_with('\n') {
                    println!();
                }
            }
        }
        Command::Instruct(a) => {
            let r = commands::instruct(&a)?;
            if cli.json {
                print_json(&r)?;
            } else {
                println!("draft: {}", r.record.draft);
                println!("intent: {}", r.record.final_intent);
                println!("accepted: {} after {} judge round(s)", r.accepted, r.record.rounds);
            }
        }
        Command::Agent(a) => {
            let r = commands::run_agent(&a)?;
            if cli.json {
                print_json(&r)?;
            } else {
                println!(
                    "task {}: {} steps, {} errors, finished={}, exhausted={}, EA={}",
                    r.task, r.steps, r.errors, r.finished, r.exhausted, r.ea
                );
                println!("{}", tablepipe_core::dsl::serialize_program_pretty(&r.program));
            }
        }
        Command::ReviewServe(a) => {
            let state = review::AppState::load(&a.tasks, &a.verdicts)?;
            let addr = format!("{}:{}", a.host, a.port);
            tokio::runtime::Runtime::new()?.block_on(review::serve(state, a.static_dir.as_deref(), &addr))?;
        }
    }
    Ok(())
}
