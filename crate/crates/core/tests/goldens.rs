//! Transformed programs compared against hand-written transcriptions.

use sdp_core::simplify::normalize_block;
use sdp_core::{
    check_program, corpus, parse_program, parse_target, print_block, to_target, Solver,
};

fn transformed(name: &str) -> String {
    let p = parse_program(corpus::get(name).unwrap().source).unwrap();
    let c = check_program(&p, &Solver::default()).unwrap();
    print_block(&normalize_block(&to_target(&c).program.body), 0)
}

fn golden(text: &str) -> String {
    print_block(&normalize_block(&parse_target(text).unwrap().body), 0)
}

#[test]
fn noisymax_matches_golden() {
    assert_eq!(
        transformed("noisymax"),
        golden(include_str!("golden/noisymax.target"))
    );
}

#[test]
fn svt_matches_golden() {
    assert_eq!(
        transformed("svt"),
        golden(include_str!("golden/svt.target"))
    );
}
