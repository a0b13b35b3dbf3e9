//! Checking and verification of differentially private programs that are
//! annotated with randomness alignments.
//!
//! The pipeline is: [`parse_program`] → [`check_program`] (instrumented
//! program `c'`) → [`to_target`] (non-probabilistic `c''`) →
//! [`bounded_verify`] or [`emit_verifier_source`].

pub mod ast;
pub mod constraints;
pub mod corpus;
pub mod interp;
pub mod machine;
pub mod parser;
pub mod printer;
pub mod simplify;
pub mod synth;
pub mod target;
pub mod typer;

pub use ast::{Cmd, CmdKind, DistType, Distance, Expr, Program, Rational, Selector, Span, Version};
pub use constraints::{Obligation, ObligationKind, Solver, SolverConfig, Validity};
pub use interp::{
    estimate_privacy_ratio, replay_source, run_source, run_transformed_consistency, Consistency,
    NoiseTrace, RatioEstimate,
};
pub use machine::{RunError, Value};
pub use parser::{parse_program, parse_target, ParseError};
pub use printer::{print_block, print_program};
pub use synth::{synthesize_annotations, SynthFailure, SynthOptions, Synthesized};
pub use target::{
    apply_rewrites, bounded_verify, emit_verifier_source, parse_rewrite_rules, parse_target_file,
    render_target, to_target, GridConfig, HarnessConfig, TargetProgram, VerifyReport,
};
pub use typer::{
    check_program, check_program_with, CheckOptions, Checked, Env, LoopRecord, TypeError,
};

/// Version recorded in every report and generated file.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex sha256 of raw input bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
