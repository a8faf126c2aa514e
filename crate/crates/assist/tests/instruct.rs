mod common;

use common::{golden, root, CannedClient};
use tablepipe_assist::client::OfflineClient;
use tablepipe_assist::instruct::*;
use tablepipe_assist::prompts;
use tablepipe_core::dsl::parse_program;
use tablepipe_core::interp::run;
use tablepipe_core::table::{ingest_csv, CurationOptions, TableSet};

const M001_DRAFT: &str = "Filter the rows of 'table_1' to keep those where Year != 2013. \
Then, remove duplicate rows from 'table_1' across all columns, keeping the last occurrence. \
Then, group the data in 'table_1' by 'Name' and compute the minimum of 'Number of Contestants'. \
Then, sort the data in 'table_1' by 'Number of Contestants' in ascending order.";

#[test]
fn offline_m001_description_follows_the_chain() {
    let (inputs, p, out) = golden("M001");
    let opts = InstructOptions::default();
    let draft = describe(&inputs, &out, &p, &OfflineClient, &opts).unwrap();
    assert_eq!(draft, M001_DRAFT);
    assert_eq!(refine(&draft, &p, &OfflineClient, &opts).unwrap(), M001_DRAFT);
}

#[test]
fn offline_pipeline_is_deterministic() {
    let (inputs, p, out) = golden("H001");
    let opts = InstructOptions::default();
    let a = generate_instruction(&inputs, &out, &p, &OfflineClient, &opts).unwrap();
    let b = generate_instruction(&inputs, &out, &p, &OfflineClient, &opts).unwrap();
    assert_eq!(a, b);
    let InstructionOutcome::Accepted(rec) = a else {
        panic!("offline judge always accepts");
    };
    assert!(rec.judge.is_valid && !rec.final_intent.is_empty());
    assert_eq!(rec.rounds, 1);
    assert!(rec.draft.contains("Perform a right join of 'table_1' and 'table_2' on 'ship id'"));
    assert!(rec.draft.contains("producing 'table_1_table_2_join'"));
    assert_eq!(rec.draft.matches(" Then, ").count(), 7);
}

#[test]
fn empty_chain_is_rejected() {
    let (inputs, _, out) = golden("E001");
    let empty = tablepipe_core::dsl::PipelineProgram::default();
    let r = describe(&inputs, &out, &empty, &OfflineClient, &InstructOptions::default());
    assert!(matches!(r, Err(InstructError::EmptyChain)));
}

#[test]
fn style_normalization() {
    assert_eq!(normalize_style("  keep   rows\nwhere x > 1 "), "Keep rows where x > 1.");
    assert_eq!(normalize_style("Done!"), "Done!");
}

#[test]
fn generation_prompt_is_the_asset_with_slots_filled() {
    let (inputs, p, out) = golden("M001");
    let prompt = generation_prompt(&inputs, &out, &p);
    let want = prompts::GENERATE
        .text
        .replace("{transform_chain_str}", &chain_text(&p))
        .replace("{input_table_str}", &tables_text(&inputs))
        .replace(
            "{target_table_str}",
            &tables_text(&TableSet::from_tables([out.clone()]).unwrap()),
        );
    assert_eq!(prompt, want);
    assert!(prompt.contains("Input Tables (First 10 Rows):  \n"));
    assert!(prompt.contains("1. {\"op\":\"filter\",\"params\":{\"condition\":\"Year != 2013\"}}"));
}

#[test]
fn previews_are_capped_at_ten_rows() {
    let t = ingest_csv(root().join("testdata/corpus/orders.csv"), "table_1", &CurationOptions::default())
        .unwrap();
    assert!(t.num_rows() > 10);
    let inputs = TableSet::from_tables([t]).unwrap();
    let p = parse_program(r#"[{"op":"topk","params":{"k":30}}]"#).unwrap();
    let out = run(&inputs, &p).unwrap().with_name("output");
    let prompt = generation_prompt(&inputs, &out, &p);
    for (marker, next) in [
        ("Input Tables (First 10 Rows):  \ntable_1:\n", "\n\nTarget"),
        ("Target Table (First 10 Rows):  \noutput:\n", "\n\nPlease"),
    ] {
        let start = prompt.find(marker).unwrap() + marker.len();
        let len = prompt[start..].find(next).unwrap();
        // header line plus ten rows
        assert_eq!(prompt[start..start + len].lines().count(), 11);
    }
}

#[test]
fn refinement_prompt_keeps_exemplars_and_uses_temperature() {
    let (_, p, _) = golden("M001");
    let client = CannedClient::new(["User Intent: Drop 2013, dedupe, take minimums, sort."]);
    let intent = refine("draft text", &p, &client, &InstructOptions::default()).unwrap();
    assert_eq!(intent, "Drop 2013, dedupe, take minimums, sort.");
    assert_eq!(*client.temperatures.lock().unwrap(), [0.7]);
    let prompt = client.prompts.lock().unwrap()[0].clone();
    let examples_start = prompts::REFINE.text.find("Here are some examples:").unwrap();
    let examples_end = prompts::REFINE.text.find("Now, based on").unwrap();
    assert!(prompt.contains(&prompts::REFINE.text[examples_start..examples_end]));
    assert_eq!(prompt.matches("User Intent:").count(), 3);
    assert!(prompt.ends_with("Task Description: draft text\n\nPlease output only the intent statement, without explanation or numbering.\n"));
}

#[test]
fn describe_extracts_the_instruction_payload() {
    let (inputs, p, out) = golden("E001");
    let client = CannedClient::new([
        "Here you go.\nInstruction: Sort table_1 by civil liberties, then president.",
        "no marker here",
    ]);
    let o = InstructOptions::default();
    let d = describe(&inputs, &out, &p, &client, &o).unwrap();
    assert_eq!(d, "Sort table_1 by civil liberties, then president.");
    assert!(matches!(describe(&inputs, &out, &p, &client, &o), Err(InstructError::MissingMarker)));
}

#[test]
fn verify_prompt_renders_literal_braces() {
    let (_, p, _) = golden("E001");
    let prompt = verification_prompt(&p, "the draft", "the intent");
    let want = prompts::VERIFY
        .text
        .replace("{{", "{")
        .replace("}}", "}")
        .replace("{transform_chain_str}", &chain_text(&p))
        .replace("{instruction}", "the draft")
        .replace("{intent_text}", "the intent");
    assert_eq!(prompt, want);
    assert!(prompt.contains("{\n\"is_valid\": \"true\",\n\"intent\": \"the intent\"\n}"));
}

#[test]
fn judge_reply_shapes() {
    let r = parse_judge_reply("{\"is_valid\": \"true\", \"intent\": \"X\"}").unwrap();
    assert_eq!(r, JudgeReply { is_valid: true, intent: "X".into() });
    let r = parse_judge_reply("```json\n{\"is_valid\": false, \"intent\": \"Y\"}\n```").unwrap();
    assert_eq!(r, JudgeReply { is_valid: false, intent: "Y".into() });
    assert!(parse_judge_reply("{\"is_valid\": \"maybe\", \"intent\": \"Y\"}").is_none());
    assert!(parse_judge_reply("yes").is_none());
}

#[test]
fn judge_retries_once_then_fails() {
    let (_, p, _) = golden("E001");
    let o = InstructOptions::default();
    let ok = CannedClient::new(["not json", "{\"is_valid\": \"true\", \"intent\": \"X\"}"]);
    assert!(judge(&p, "d", "X", &ok, &o).unwrap().is_valid);
    assert_eq!(ok.calls(), 2);
    assert_eq!(*ok.temperatures.lock().unwrap(), [0.0, 0.0]);
    let bad = CannedClient::new(["not json", "still not json"]);
    assert!(matches!(judge(&p, "d", "X", &bad, &o), Err(InstructError::MalformedJudge { .. })));
}

#[test]
fn invalid_verdict_rewrites_then_rejudges() {
    let (inputs, p, out) = golden("E001");
    let o = InstructOptions::default();
    let client = CannedClient::new([
        "Instruction: Sort it.",
        "Sort the table.",
        "{\"is_valid\": \"false\", \"intent\": \"Sort by Civil Liberties then President, ascending.\"}",
        "{\"is_valid\": \"true\", \"intent\": \"Sort by Civil Liberties then President, ascending.\"}",
    ]);
    let InstructionOutcome::Accepted(rec) = generate_instruction(&inputs, &out, &p, &client, &o).unwrap()
    else {
        panic!("second round accepts");
    };
    assert_eq!(rec.rounds, 2);
    assert_eq!(rec.final_intent, "Sort by Civil Liberties then President, ascending.");
    assert!(client.prompts.lock().unwrap()[3].contains("**Generated Intent**: Sort by Civil Liberties"));

    let client = CannedClient::new([
        "Instruction: Sort it.",
        "Sort the table.",
        "{\"is_valid\": \"false\", \"intent\": \"A\"}",
        "{\"is_valid\": \"false\", \"intent\": \"B\"}",
    ]);
    let out = generate_instruction(&inputs, &out, &p, &client, &o).unwrap();
    assert!(matches!(out, InstructionOutcome::Discarded(r) if r.final_intent == "B" && r.rounds == 2));
}
