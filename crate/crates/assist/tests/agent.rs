mod common;

use std::sync::Arc;

use common::{golden, CannedClient};
use serde_json::json;
use tablepipe_assist::agent::*;
use tablepipe_assist::client::OfflineClient;
use tablepipe_assist::prompts;
use tablepipe_core::dsl::{parse_program, OperatorCall, OperatorKind};
use tablepipe_core::eval::{canonical_equal, EquivalenceOptions};
use tablepipe_core::interp::run;
use tablepipe_core::task::TaskInstance;

fn call(json: &str) -> OperatorCall {
    parse_program(&format!("[{json}]")).unwrap().ops.remove(0)
}

#[test]
fn scripted_replay_reproduces_each_golden() {
    for id in ["E001", "M001", "H001"] {
        let (inputs, p, out) = golden(id);
        let task = TaskInstance::new(id, &inputs, p.clone(), out.clone(), "replay");
        let ep = run_episode(&task, &mut ScriptedPolicy::replay(&p), DEFAULT_BUDGET).unwrap();
        assert!(ep.finished && !ep.exhausted, "{id}");
        assert_eq!(ep.errors().count(), 0, "{id}");
        assert_eq!(ep.program.ops, p.ops, "{id}");
        assert!(canonical_equal(&ep.output, &out, &EquivalenceOptions::default()), "{id}");
        // replay consistency
        let again = run(&inputs, &ep.program).unwrap();
        assert_eq!(again, ep.output, "{id}");
    }
}

#[test]
fn invalid_step_leaves_state_untouched() {
    let (inputs, p, out) = golden("M001");
    let bad = call(r#"{"op":"groupby","params":{"by":["Nme"],"agg":{"Number of Contestants":"min"}}}"#);
    let mut script: Vec<AgentAction> = p.ops.iter().cloned().map(AgentAction::ToolCall).collect();
    script.insert(2, AgentAction::ToolCall(bad));
    let ep = run_episode_on(&inputs, "x", &mut ScriptedPolicy::new(script), DEFAULT_BUDGET).unwrap();
    let errors: Vec<&str> = ep.errors().collect();
    assert_eq!(errors.len(), 1);
    assert!(errors[0].contains("Nme"), "{}", errors[0]);
    let steps = &ep.history.steps;
    assert_eq!(steps[2].observation.schema, steps[1].observation.schema);
    assert_eq!(steps[2].observation.samples, steps[1].observation.samples);
    assert_eq!(ep.program.ops, p.ops);
    assert!(canonical_equal(&ep.output, &out, &EquivalenceOptions::default()));
    let clean = run_episode_on(&inputs, "x", &mut ScriptedPolicy::replay(&p), DEFAULT_BUDGET).unwrap();
    assert_eq!(clean.output, ep.output);
}

#[test]
fn zero_budget_returns_the_input() {
    let (inputs, p, _) = golden("M001");
    let ep = run_episode_on(&inputs, "x", &mut ScriptedPolicy::replay(&p), 0).unwrap();
    assert!(ep.program.is_empty());
    assert!(ep.exhausted && !ep.finished);
    assert_eq!(&ep.output, inputs.get("table_1").unwrap());
}

#[test]
fn budget_cuts_off_a_long_script() {
    let (inputs, p, _) = golden("H001");
    let ep = run_episode_on(&inputs, "x", &mut ScriptedPolicy::replay(&p), 3).unwrap();
    assert!(ep.exhausted);
    assert_eq!(ep.program.len(), 3);
}

#[test]
fn observations_hold_five_rows_per_live_table() {
    let (inputs, p, _) = golden("H001");
    let ep = run_episode_on(&inputs, "x", &mut ScriptedPolicy::replay(&p), DEFAULT_BUDGET).unwrap();
    let first = &ep.history.steps[0].observation;
    assert_eq!(
        first.samples.keys().collect::<Vec<_>>(),
        ["table_1", "table_2", "table_1_table_2_join"]
    );
    assert!(first.samples.values().all(|t| t.num_rows() <= SAMPLE_ROWS));
    assert!(inputs.iter().any(|t| t.num_rows() > SAMPLE_ROWS));
}

#[test]
fn transcript_has_one_line_per_step() {
    let (inputs, p, _) = golden("M001");
    let ep = run_episode_on(&inputs, "x", &mut ScriptedPolicy::replay(&p), DEFAULT_BUDGET).unwrap();
    let text = ep.transcript_jsonl();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["step"], 1);
    assert_eq!(lines[0]["action"]["action"], "tool_call");
    assert_eq!(lines[0]["action"]["call"]["op"], "filter");
    assert!(lines[3]["observation"]["samples"]["table_1"].is_object());
}

#[test]
fn adapter_maps_prompt_shapes() {
    let cases = [
        (
            json!({"name": "union", "parameters": {"source_tables": ["table_1", "table_2"], "axis": 0,
                   "result_table": "table_1_table_2_union", "ignore_index": true, "how": ["all", "distinct"]}}),
            json!({"op": "union", "params": {"left_table": "table_1", "right_table": "table_2", "how": "all"}}),
        ),
        (
            json!({"name": "groupby", "parameters": {"table_names": "t", "by": ["a"],
                   "aggregations": [{"column": "b", "agg_func": "sum"}, {"column": "c", "agg_func": "max"}]}}),
            json!({"op": "groupby", "params": {"table": "t", "by": ["a"], "agg": {"b": "sum", "c": "max"}}}),
        ),
        (
            json!({"name": "pivot", "parameters": {"source_table": "t", "index": ["a"], "columns": ["b"],
                   "values": ["c"], "aggfunc": "mean", "result_table": "t"}}),
            json!({"op": "pivot", "params": {"table": "t", "index": ["a"], "columns": "b", "values": "c", "aggfunc": "mean"}}),
        ),
        (
            json!({"name": "rename", "parameters": {"rename_items": [{"old_name": "a", "new_name": "b"}]}}),
            json!({"op": "rename", "params": {"rename_map": {"a": "b"}}}),
        ),
        (
            json!({"name": "topk", "parameters": {"source_table": "t", "k": "3"}}),
            json!({"op": "topk", "params": {"table": "t", "k": 3}}),
        ),
        (
            json!({"name": "stack", "parameters": {"id_vars": ["a"], "value_vars": ["b"]}}),
            json!({"op": "unpivot", "params": {"id_vars": ["a"], "value_vars": ["b"], "var_name": "variable", "value_name": "value"}}),
        ),
        (
            json!({"name": "deduplicate", "parameters": {"subset": "a", "keep": ["first", "last"]}}),
            json!({"op": "deduplicate", "params": {"subset": ["a"], "keep": "first"}}),
        ),
    ];
    for (tool, want) in cases {
        let AgentAction::ToolCall(c) = parse_action(&tool).unwrap() else {
            panic!("expected a tool call for {tool}");
        };
        assert_eq!(c.to_json(), want, "{tool}");
    }
    assert_eq!(parse_action(&json!({"name": "finish", "parameters": {}})).unwrap(), AgentAction::Finish);
    assert!(parse_action(&json!({"name": "teleport", "parameters": {}})).is_err());
}

#[test]
fn json_list_extraction() {
    let fenced = "Reasoning...\n```json\n[{\"name\": \"transpose\", \"parameters\": {}}]\n```\nDone.";
    assert_eq!(extract_json_list(fenced).unwrap().len(), 1);
    assert_eq!(extract_json_list("steps: [] ok").unwrap().len(), 0);
    assert!(extract_json_list("nothing here").is_none());
}

#[test]
fn offline_client_cannot_drive_the_agent() {
    let err = llm_policy(Arc::new(OfflineClient)).unwrap_err();
    assert!(err.to_string().contains("offline"));
}

#[test]
fn llm_prompt_carries_tool_schemas_and_recent_history() {
    let (inputs, p, _) = golden("H001");
    let ep = run_episode_on(&inputs, "intent text", &mut ScriptedPolicy::replay(&p), 6).unwrap();
    let prompt = LlmPolicy::prompt("intent text", &ep.history);
    assert!(prompt.starts_with(&prompts::AGENT.text[..prompts::AGENT.text.find("{USER_INTENT}").unwrap()]));
    assert!(prompt.contains("User Intent:  \nintent text  \n"));
    assert!(prompt.contains(prompts::TOOLS));
    assert_eq!(prompt.matches("(BaseOpInput)").count(), 16);
    for kind in OperatorKind::ALL {
        assert!(prompt.contains(&format!("\"name\": \"{}\"", kind.name())), "{kind}");
    }
    assert!(prompt.contains("table_x_table_y_join"));
    assert_eq!(prompt.matches("[step ").count(), PROMPT_HISTORY);
    assert!(prompt.contains("[step 6]") && !prompt.contains("[step 3]"));
}

#[test]
fn llm_policy_runs_a_join_episode() {
    let (inputs, p, out) = golden("H001");
    let steps: Vec<serde_json::Value> = p.ops.iter().map(OperatorCall::to_json).collect();
    let mut tools: Vec<serde_json::Value> = vec![json!({
        "name": "join",
        "parameters": {"left_table": "table_1", "right_table": "table_2", "result_table": "table_1_table_2_join",
                       "left_on": "ship id", "right_on": "ship id", "how": "right", "suffixes": ["_left", "_right"]}
    })];
    tools.extend(steps[1..].iter().cloned());
    let client = Arc::new(CannedClient::new([
        "I cannot decide yet.".to_string(),
        format!("```json\n{}\n```", serde_json::Value::Array(tools)),
        "[]".to_string(),
    ]));
    let mut policy = llm_policy(client.clone()).unwrap();
    let ep = run_episode_on(&inputs, "intent", &mut policy, DEFAULT_BUDGET).unwrap();
    assert!(ep.finished);
    assert_eq!(ep.errors().count(), 0);
    assert_eq!(ep.program.len(), 8);
    assert!(ep.history.steps[0].observation.samples.contains_key("table_1_table_2_join"));
    assert!(canonical_equal(&ep.output, &out, &EquivalenceOptions::default()));
    // one repair prompt, one plan, one check after the plan ran out
    assert_eq!(client.calls(), 3);
    assert!(client.prompts.lock().unwrap()[1].contains("could not be used"));
}

#[test]
fn llm_policy_gives_up_after_two_bad_replies() {
    let (inputs, ..) = golden("E001");
    let client = Arc::new(CannedClient::new(["nope", "[{\"name\": \"teleport\"}]"]));
    let mut policy = llm_policy(client).unwrap();
    let err = run_episode_on(&inputs, "intent", &mut policy, DEFAULT_BUDGET).unwrap_err();
    assert!(matches!(err, AgentError::Policy(m) if m.contains("teleport")));
}

#[test]
fn llm_policy_replans_after_an_error() {
    let (inputs, ..) = golden("E001");
    let client = Arc::new(CannedClient::new([
        r#"[{"name": "select", "parameters": {"columns": ["Nope"]}}, {"name": "topk", "parameters": {"k": 1}}]"#,
        r#"[{"name": "topk", "parameters": {"k": 2}}]"#,
        "[]",
    ]));
    let mut policy = llm_policy(client.clone()).unwrap();
    let ep = run_episode_on(&inputs, "intent", &mut policy, DEFAULT_BUDGET).unwrap();
    assert_eq!(ep.errors().count(), 1);
    assert_eq!(ep.program.len(), 1);
    assert_eq!(ep.output.num_rows(), 2);
    assert!(client.prompts.lock().unwrap()[1].contains("Error: "));
}
