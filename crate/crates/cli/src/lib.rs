//! Library half of the `tablepipe` binary: subcommands and the review service.

pub mod commands;
pub mod review;
