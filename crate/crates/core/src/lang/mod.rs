//! The MiniConc language: syntax tree, parser, instrumentation passes and
//! source rendering.

mod ast;
mod instrument;
mod parser;
mod render;

pub use ast::*;
pub use instrument::{guard_yields, insert_yields, instrument_weak, LOCK_VAR};
pub use parser::parse;
pub use render::{render_fix, render_program};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LangError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("loop at {0} has no @bound annotation")]
    UnboundedLoop(Location),
    #[error("region cannot be made lexical: {0}")]
    RegionNotLexical(String),
}

impl LangError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        LangError::Parse {
            line,
            message: message.into(),
        }
    }
}
