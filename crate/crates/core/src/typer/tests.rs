use super::*;
use crate::corpus::{self, Expect};
use crate::parser::parse_program;
use crate::printer::print_block;

fn check(src: &str) -> Result<Checked, TypeError> {
    let p = parse_program(src).expect("parse");
    check_program(&p, &Solver::default())
}

#[test]
fn corpus_verdicts() {
    for entry in corpus::ENTRIES {
        let r = check(entry.source);
        match entry.expect {
            Expect::Pass => {
                let c = r.unwrap_or_else(|e| panic!("{} rejected: {e}", entry.name));
                assert_eq!(c.summary().open, 0, "{}", entry.name);
            }
            Expect::Reject => assert!(r.is_err(), "{} accepted", entry.name),
        }
    }
}

#[test]
fn noisymax_instrumentation() {
    let c = check(corpus::get("noisymax").unwrap().source).unwrap();
    let text = print_block(&c.program.body, 0);
    println!("{text}");
    assert!(text.contains("^bq := 0;"));
    assert!(text.contains("~bq := bq + ~bq - (q[i] + eta);"));
    assert!(text.contains("~max := i - max;"));
    assert!(!c.shadow_free);
}

#[test]
fn gapsvt_wrong_fails_at_return() {
    let e = check(corpus::get("gapsvt_wrong").unwrap().source).unwrap_err();
    assert_eq!(e.rule, "T-Return");
}

#[test]
fn missing_annotation_is_rejected() {
    let e = check(
        "function F(eps: real<0, 0>) returns (x: real<0, 0>) precondition true { x := lap(1 / eps); return x; }",
    )
    .unwrap_err();
    assert_eq!(e.rule, "T-Laplace");
}

#[test]
fn nonlinear_with_distance_is_rejected() {
    let e = check(
        "function F(eps: real<0, 0>, q: list real<*, *>) returns (x: real<0, ->) precondition ALL_DIFFER(q) { x := q[0] * q[1]; return 0; }",
    )
    .unwrap_err();
    assert_eq!(e.rule, "T-OTimes");
}

#[test]
fn forced_mode_waives_return() {
    let p = parse_program(corpus::get("gapsvt_wrong").unwrap().source).unwrap();
    let c = check_program_with(&p, &Solver::default(), &CheckOptions { force: true }).unwrap();
    assert!(!c.waived.is_empty());
}
