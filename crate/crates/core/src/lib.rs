pub mod codegen;
pub mod dsl;
pub mod eval;
pub mod interp;
pub mod spm;
pub mod synth;
pub mod table;
pub mod task;
