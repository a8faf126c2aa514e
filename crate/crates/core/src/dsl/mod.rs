//! Pipeline programs: operator calls, their JSON wire form and filter conditions.

pub mod condition;
pub mod program;

pub use condition::{
    parse_condition, render_ident, render_literal, CmpOp, Condition, ConditionError, Literal,
    QuoteStyle,
};
pub use program::*;
