#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Mutex;

use tablepipe_assist::client::{ClientError, TextModelClient};
use tablepipe_core::dsl::{parse_program, PipelineProgram};
use tablepipe_core::table::{ingest_csv, CurationOptions, Table, TableSet};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn golden_table(file: &str, name: &str) -> Table {
    ingest_csv(root().join("testdata/golden").join(file), name, &CurationOptions::default()).unwrap()
}

pub fn golden_program(id: &str) -> PipelineProgram {
    let text = std::fs::read_to_string(root().join(format!("testdata/golden/{id}_program.json"))).unwrap();
    parse_program(&text).unwrap()
}

/// Inputs and published output for one worked example.
pub fn golden(id: &str) -> (TableSet, PipelineProgram, Table) {
    let inputs = match id {
        "H001" => vec![
            golden_table("H001_ship_missions.csv", "table_1"),
            golden_table("H001_ships.csv", "table_2"),
        ],
        _ => vec![golden_table(&format!("{id}_input.csv"), "table_1")],
    };
    let inputs = TableSet::from_tables(inputs).unwrap();
    let names = inputs.names().map(str::to_string).collect();
    (
        inputs,
        golden_program(id).with_sources(names),
        golden_table(&format!("{id}_output.csv"), "output"),
    )
}

/// Answers from a fixed queue and records what it was asked.
#[derive(Default)]
pub struct CannedClient {
    replies: Mutex<VecDeque<String>>,
    pub prompts: Mutex<Vec<String>>,
    pub temperatures: Mutex<Vec<f64>>,
}

impl CannedClient {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        CannedClient {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            ..Default::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }
}

impl TextModelClient for CannedClient {
    fn model(&self) -> &str {
        "canned"
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, ClientError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.temperatures.lock().unwrap().push(temperature);
        self.replies.lock().unwrap().pop_front().ok_or(ClientError::EmptyReply)
    }
}
