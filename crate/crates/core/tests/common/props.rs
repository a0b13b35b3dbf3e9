//! Strategies and property bodies for the distance lattice and loop
//! fixed points.

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use sdp_core::ast::{DistType, Distance};
use sdp_core::parser::parse_expr;
use sdp_core::typer::{distance_leq, join_type, type_leq};
use sdp_core::{check_program, parse_program, print_program, Checked, Env, Solver};

pub const CASES: u32 = 10_000;

pub type Triple = (DistType, DistType, DistType);

pub fn distance() -> impl Strategy<Value = Distance> {
    prop_oneof![
        3 => prop::sample::select(vec!["0", "1", "-1", "^x", "^x + 1", "2 * eps", "q[i] - x"])
            .prop_map(|s| Distance::Num(parse_expr(s).unwrap())),
        2 => Just(Distance::Star),
        1 => Just(Distance::Any),
    ]
}

pub fn scalar() -> impl Strategy<Value = DistType> {
    (distance(), distance()).prop_map(|(a, s)| DistType::real(a, s))
}

pub fn dist_type() -> impl Strategy<Value = DistType> {
    prop_oneof![
        4 => scalar(),
        1 => Just(DistType::bool()),
        2 => scalar().prop_map(DistType::list),
    ]
}

/// Three types sharing one base, so every join is defined.
pub fn same_base_triple() -> impl Strategy<Value = Triple> {
    prop_oneof![
        (scalar(), scalar(), scalar()),
        (scalar(), scalar(), scalar()).prop_map(|(a, b, c)| (
            DistType::list(a),
            DistType::list(b),
            DistType::list(c)
        )),
    ]
}

pub fn env() -> impl Strategy<Value = Env> {
    prop::collection::btree_map(
        prop::sample::select(vec!["a", "b", "c", "d"]),
        scalar(),
        0..4,
    )
    .prop_map(|m| m.into_iter().map(|(k, t)| (k.to_string(), t)).collect())
}

fn join(a: &DistType, b: &DistType) -> DistType {
    join_type(a, b).expect("same base")
}

pub fn join_idempotent(a: &DistType) -> Result<(), TestCaseError> {
    prop_assert_eq!(&join(a, a), a);
    Ok(())
}

pub fn join_commutative((a, b, _): &Triple) -> Result<(), TestCaseError> {
    prop_assert_eq!(join(a, b), join(b, a));
    Ok(())
}

pub fn join_associative((a, b, c): &Triple) -> Result<(), TestCaseError> {
    prop_assert_eq!(join(&join(a, b), c), join(a, &join(b, c)));
    Ok(())
}

pub fn join_upper_bound((a, b, _): &Triple) -> Result<(), TestCaseError> {
    let j = join(a, b);
    prop_assert!(type_leq(a, &j) && type_leq(b, &j));
    Ok(())
}

/// Raising one argument never lowers the join.
pub fn join_monotone((a, b, c): &Triple) -> Result<(), TestCaseError> {
    let raised = join(a, c);
    prop_assert!(type_leq(a, &raised));
    prop_assert!(type_leq(&join(a, b), &join(&raised, b)));
    Ok(())
}

pub fn order_agrees_with_join((a, b, _): &Triple) -> Result<(), TestCaseError> {
    prop_assert_eq!(type_leq(a, b), join(a, b) == *b);
    Ok(())
}

pub fn distance_partial_order(
    a: &Distance,
    b: &Distance,
    c: &Distance,
) -> Result<(), TestCaseError> {
    prop_assert!(distance_leq(a, a));
    if distance_leq(a, b) && distance_leq(b, a) {
        prop_assert_eq!(a, b);
    }
    if distance_leq(a, b) && distance_leq(b, c) {
        prop_assert!(distance_leq(a, c));
    }
    Ok(())
}

pub fn env_join_laws(a: &Env, b: &Env, c: &Env) -> Result<(), TestCaseError> {
    let ab = a.join(b).unwrap();
    prop_assert_eq!(&ab, &b.join(a).unwrap());
    prop_assert_eq!(&a.join(a).unwrap(), a);
    prop_assert_eq!(ab.join(c).unwrap(), a.join(&b.join(c).unwrap()).unwrap());
    prop_assert!(a.leq(&ab) && b.leq(&ab));
    Ok(())
}

/// Statements a generated loop body is assembled from.
const STATEMENTS: &[&str] = &[
    "x := q[i];",
    "x := x + 1;",
    "y := x;",
    "z := 0;",
    "y := y + q[i];",
    "if (q[i] > x) { x := q[i]; } else { z := z + 1; }",
    "if (y > 0) { y := 0; }",
    "eta := lap(2 / eps) { select: aligned; dist: 1 };",
    "eta := lap(2 / eps) { select: shadow; dist: 0 };",
    "x := x + eta;",
    "while (z < 2) { z := z + 1; y := y + x; }",
];

pub fn loop_program() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(STATEMENTS.to_vec()), 1..6).prop_map(|body| {
        format!(
            "function F(eps: real<0, 0>, size: real<0, 0>, q: list real<*, *>)\n\
             returns (r: real<-, ->)\n\
             precondition ALL_DIFFER(q)\n\
             {{\n  i := 0; x := 0; y := 0; z := 0; eta := 0;\n\
             \x20 while (i < size) {{\n    {}\n    i := i + 1;\n  }}\n\
             \x20 r := x + y + z;\n  return r;\n}}\n",
            body.join("\n    ")
        )
    })
}

/// Each loop invariant is the join of the entry environment and the
/// environment after one more pass over the body, and checking again
/// reproduces the same invariants.
pub fn loop_fixpoint_stable(src: &str) -> Result<(), TestCaseError> {
    let p = parse_program(src).unwrap();
    let Ok(c) = check_program(&p, &Solver::default()) else {
        return Ok(());
    };
    prop_assert!(!c.loops.is_empty());
    for l in &c.loops {
        prop_assert!(l.entry.leq(&l.invariant), "{}", src);
        prop_assert!(l.body_exit.leq(&l.invariant), "{}", src);
        prop_assert_eq!(
            &l.entry.join(&l.body_exit).unwrap(),
            &l.invariant,
            "{}",
            src
        );
    }
    let invariants = |c: &Checked| {
        c.loops
            .iter()
            .map(|l| l.invariant.clone())
            .collect::<Vec<_>>()
    };
    let again = check_program(&p, &Solver::default()).unwrap();
    prop_assert_eq!(invariants(&c), invariants(&again));
    Ok(())
}

pub fn print_round_trip(src: &str) -> Result<(), TestCaseError> {
    let printed = print_program(&parse_program(src).unwrap());
    prop_assert_eq!(print_program(&parse_program(&printed).unwrap()), printed);
    Ok(())
}
