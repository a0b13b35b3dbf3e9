//! Shared setup for the pipeline benchmarks.

use sdp_core::{check_program, corpus, parse_program, Checked, Program, Solver};

/// Parsed source of a corpus benchmark.
pub fn source(name: &str) -> Program {
    let entry = corpus::get(name).unwrap_or_else(|| panic!("no corpus entry `{name}`"));
    parse_program(entry.source).expect("corpus programs parse")
}

/// Checked form of a corpus benchmark.
pub fn checked(name: &str) -> Checked {
    check_program(&source(name), &Solver::default()).expect("corpus benchmarks check")
}

/// Names of the benchmarks that type check.
pub fn names() -> Vec<&'static str> {
    corpus::benchmarks().map(|e| e.name).collect()
}
