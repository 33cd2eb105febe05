//! Learns likely invariants that explain assertion failures in MiniLang
//! programs.
//!
//! The pipeline runs a test suite, localizes suspicious statements with
//! Ochiai over the dynamic slice, captures program states at observation
//! points, and learns a conjunction of half-spaces that separates passing
//! from failing states, refined by mutating states and re-running tests.

pub mod engine;
pub mod featurization;
pub mod interpreter;
pub mod learner;
pub mod localization;
pub mod minilang;
mod pairs;
pub mod testgen;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(#[from] minilang::ParseError),
    #[error("{}", fmt_type_errors(.0))]
    Type(Vec<minilang::TypeError>),
}

fn fmt_type_errors(errs: &[minilang::TypeError]) -> String {
    let lines: Vec<String> = errs.iter().map(|e| format!("type error: {e}")).collect();
    lines.join("\n")
}
