//! Model-facing pieces: prompt assets, text-model clients, instruction
//! generation with alignment judging, and the pipeline agent.

pub mod agent;
pub mod client;
pub mod instruct;
pub mod prompts;
