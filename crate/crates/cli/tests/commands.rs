use std::path::{Path, PathBuf};
use std::process::Command;

use tablepipe_cli::commands::*;
use tablepipe_core::dsl::{parse_program, PipelineProgram};
use tablepipe_core::table::{ingest_csv, CurationOptions, TableSet};
use tablepipe_core::interp::run as run_program;
use tablepipe_core::task::{load_tasks, TaskInstance};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tablepipe"));
    c.env("RUST_LOG", "warn");
    c
}

fn synth_args(out: &Path, count: usize, seed: u64) -> SynthesizeArgs {
    SynthesizeArgs {
        tables: root().join("testdata/corpus"),
        transitions: None,
        count,
        seed,
        out: out.to_path_buf(),
        model: None,
        mean_length: 4.24,
        multi_table_prob: None,
        raw: false,
        attempts_per_task: 10,
    }
}

/// Write the M001 worked example as a task file.
fn m001_task(dir: &Path) -> PathBuf {
    let g = root().join("testdata/golden");
    let input = ingest_csv(g.join("M001_input.csv"), "table_1", &CurationOptions::default()).unwrap();
    let inputs = TableSet::from_tables([input]).unwrap();
    let p = parse_program(&std::fs::read_to_string(g.join("M001_program.json")).unwrap()).unwrap();
    let out = run_program(&inputs, &p.clone().with_sources(vec!["table_1".into()])).unwrap();
    let task = TaskInstance::new("M001", &inputs, p, out, "fixture");
    let path = dir.join("M001.json");
    task.save(&path).unwrap();
    path
}

#[test]
fn run_prints_the_published_m001_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = m001_task(dir.path());
    let out = bin().args(["run", "--task"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "Name,Number of Contestants\nPontifical Catholic University of Chile,69\nUniversity of Chile,74\n"
    );
}

#[test]
fn compile_sql_degrades_transpose_to_a_comment() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("p.json");
    std::fs::write(&prog, r#"[{"op":"transpose","params":{}}]"#).unwrap();
    let out = bin()
        .args(["compile", "--backend", "sql", "--program"])
        .arg(&prog)
        .arg("--input")
        .arg(root().join("testdata/golden/E001_input.csv"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let code = String::from_utf8(out.stdout).unwrap();
    assert!(code.contains("-- transpose: unsupported in SQL backend"), "{code}");
}

#[test]
fn synthesized_tasks_pass_self_check_and_tier_by_length() {
    let dir = tempfile::tempdir().unwrap();
    let s = synthesize(&synth_args(dir.path(), 40, 11)).unwrap();
    assert_eq!(s.written, 40);
    let tasks = load_tasks(dir.path()).unwrap();
    assert_eq!(tasks.len(), 40);
    for t in &tasks {
        tablepipe_core::task::self_check(t, &Default::default()).unwrap();
        let want = match t.program.len() {
            1..=3 => "easy",
            4..=6 => "medium",
            _ => "hard",
        };
        assert_eq!(t.difficulty.as_str(), want);
        assert!(t.intent.as_deref().is_some_and(|i| !i.is_empty()));
    }
}

#[test]
fn gold_against_gold_scores_100() {
    let gold = tempfile::tempdir().unwrap();
    synthesize(&synth_args(gold.path(), 30, 3)).unwrap();
    let pred = tempfile::tempdir().unwrap();
    for t in load_tasks(gold.path()).unwrap() {
        std::fs::write(pred.path().join(format!("{}.json", t.id)), t.program.to_json().to_string()).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let r = evaluate(&EvaluateArgs {
        pred: pred.path().into(),
        gold: gold.path().into(),
        out: Some(out.path().into()),
        name: "gold".into(),
    })
    .unwrap();
    let o = r.overall();
    assert_eq!((o.n, o.ea, o.pv, o.oa), (30, 100.0, 100.0, 100.0));
    assert!(r.warnings.is_empty());
    let csv = std::fs::read_to_string(out.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("model,ea_easy,ea_medium,ea_hard,ea_overall,pv_easy"));
    assert!(csv.lines().nth(1).unwrap().starts_with("gold,"));
    assert!(out.path().join("report.json").exists());
}

fn without_kind(p: &PipelineProgram) -> PipelineProgram {
    let drop = p.ops[0].kind();
    PipelineProgram::new(p.ops.iter().filter(|c| c.kind() != drop).cloned().collect())
}

#[test]
fn dropping_one_kind_scores_hand_computed_oa() {
    let gold = tempfile::tempdir().unwrap();
    synthesize(&synth_args(gold.path(), 30, 9)).unwrap();
    let pred = tempfile::tempdir().unwrap();
    let mut want = 0.0;
    let tasks = load_tasks(gold.path()).unwrap();
    for t in &tasks {
        let kinds: std::collections::BTreeSet<_> = t.program.kinds().into_iter().collect();
        want += (kinds.len() - 1) as f64 / kinds.len() as f64;
        let p = without_kind(&t.program);
        std::fs::write(pred.path().join(format!("{}.json", t.id)), p.to_json().to_string()).unwrap();
    }
    want *= 100.0 / tasks.len() as f64;
    let r = evaluate(&EvaluateArgs {
        pred: pred.path().into(),
        gold: gold.path().into(),
        out: None,
        name: "m".into(),
    })
    .unwrap();
    let o = r.overall();
    assert!((o.oa - want).abs() < 1e-9, "{} vs {want}", o.oa);
    assert!(o.ea <= o.pv);
    for (tier, a) in &r.aggregates {
        assert!(a.ea <= a.pv, "{tier}");
    }
}

#[test]
fn empty_prediction_dir_warns() {
    let gold = tempfile::tempdir().unwrap();
    synthesize(&synth_args(gold.path(), 3, 1)).unwrap();
    let pred = tempfile::tempdir().unwrap();
    std::fs::write(pred.path().join("stray.json"), "[]").unwrap();
    let r = evaluate(&EvaluateArgs {
        pred: pred.path().into(),
        gold: gold.path().into(),
        out: None,
        name: "m".into(),
    })
    .unwrap();
    assert_eq!(r.overall().n, 0);
    assert!(r.warnings.iter().any(|w| w == "no predictions matched any gold task"));
    assert!(r.warnings.iter().any(|w| w == "prediction stray has no gold task"));
    assert_eq!(r.warnings.iter().filter(|w| w.starts_with("no prediction for")).count(), 3);
}

#[test]
fn stats_on_a_thousand_tasks_tracks_the_prior_mean() {
    let dir = tempfile::tempdir().unwrap();
    synthesize(&synth_args(dir.path(), 1000, 7)).unwrap();
    let s = stats(&StatsArgs {
        tasks: dir.path().into(),
        mean_length: 4.24,
        no_timing: false,
    })
    .unwrap();
    assert_eq!(s.tasks, 1000);
    assert!((s.prior_mean - 4.24).abs() < 1e-9);
    assert!((s.mean_length - s.prior_mean).abs() <= 0.5, "{} vs {}", s.mean_length, s.prior_mean);
    assert_eq!(s.length_histogram.values().sum::<usize>(), 1000);
    assert!(s.length_histogram.keys().all(|k| (1..=8).contains(k)));
    let ops: usize = s.operator_frequency.values().sum();
    assert_eq!(ops as f64, s.mean_length * 1000.0);
    assert!(s.distinct_1.is_some() && s.self_bleu_4.is_some());
    assert!(!s.timing.is_empty());
}

#[test]
fn agent_command_replays_a_script_and_rejects_offline_model() {
    let dir = tempfile::tempdir().unwrap();
    let task = m001_task(dir.path());
    let script = root().join("testdata/golden/M001_program.json");
    let transcript = dir.path().join("episode.jsonl");
    let out = bin()
        .args(["--json", "agent", "--task"])
        .arg(&task)
        .arg("--script")
        .arg(&script)
        .arg("--transcript")
        .arg(&transcript)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ea"], true);
    assert_eq!(v["steps"], 4);
    assert_eq!(std::fs::read_to_string(&transcript).unwrap().lines().count(), 4);

    let out = bin().args(["agent", "--task"]).arg(&task).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("offline"));
}

#[test]
fn instruct_offline_prints_the_template() {
    let dir = tempfile::tempdir().unwrap();
    let task = m001_task(dir.path());
    let out = bin().args(["--json", "instruct", "--task"]).arg(&task).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["accepted"], true);
    assert!(v["record"]["draft"].as_str().unwrap().starts_with("Filter the rows of 'table_1'"));
}
