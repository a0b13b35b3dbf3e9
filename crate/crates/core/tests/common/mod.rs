//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod props;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdp_core::ast::{num, BinOp, Cmd, CmdKind, Expr, LValue};
use sdp_core::interp::QuantizedLaplace;
use sdp_core::target::grid_inputs;
use sdp_core::{
    check_program, corpus, parse_program, run_source, run_transformed_consistency, Checked,
    GridConfig, NoiseTrace, Rational, Solver, Value,
};
use std::collections::BTreeMap;

pub type Inputs = BTreeMap<String, Value<Rational>>;

pub fn checked(name: &str) -> Checked {
    let p = parse_program(corpus::get(name).unwrap().source).unwrap();
    check_program(&p, &Solver::default()).unwrap()
}

pub fn pairs(c: &Checked, count: usize, seed: u64) -> Vec<(Inputs, NoiseTrace)> {
    let inputs = grid_inputs(&sdp_core::to_target(c), &GridConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let input = inputs[rng.gen_range(0..inputs.len())].clone();
            let noise = &mut QuantizedLaplace::new(seed.wrapping_mul(7919) ^ k as u64, 4);
            let run = run_source(&c.source, &input, noise).unwrap();
            (input, NoiseTrace { entries: run.trace })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Mutation {
    Drop,
    PlusOne,
}

/// Applies `m` to the `target`-th instrumentation write of `block`.
pub fn mutate(block: &[Cmd], target: usize, m: Mutation, seen: &mut usize) -> Vec<Cmd> {
    let mut out = Vec::new();
    for c in block {
        let kind = match &c.kind {
            CmdKind::Assign(lv @ LValue::Dist(..), e) => {
                *seen += 1;
                if *seen - 1 != target {
                    c.kind.clone()
                } else {
                    match m {
                        Mutation::Drop => continue,
                        Mutation::PlusOne => {
                            CmdKind::Assign(lv.clone(), Expr::bin(BinOp::Add, e.clone(), num(1)))
                        }
                    }
                }
            }
            CmdKind::If(g, a, b) => CmdKind::If(
                g.clone(),
                mutate(a, target, m, seen),
                mutate(b, target, m, seen),
            ),
            CmdKind::While(g, b) => CmdKind::While(g.clone(), mutate(b, target, m, seen)),
            k => k.clone(),
        };
        out.push(Cmd::at(kind, c.span));
    }
    out
}

pub fn write_count(c: &Checked) -> usize {
    let mut n = 0;
    mutate(&c.program.body, usize::MAX, Mutation::Drop, &mut n);
    n
}

pub fn killed(c: &Checked, samples: &[(Inputs, NoiseTrace)], target: usize, m: Mutation) -> bool {
    let mut mutant = c.clone();
    mutant.program.body = mutate(&c.program.body, target, m, &mut 0);
    samples.iter().any(|(input, trace)| {
        !run_transformed_consistency(&mutant, input, trace)
            .unwrap()
            .consistent()
    })
}

/// `count` distinct (benchmark, write, mutation) triples drawn with `seed`
/// from every instrumentation write of every benchmark.
pub fn seeded_mutants(seed: u64, count: usize) -> Vec<(&'static str, usize, Mutation)> {
    let mut pool = Vec::new();
    for entry in corpus::benchmarks() {
        let c = checked(entry.name);
        for t in 0..write_count(&c) {
            pool.push((entry.name, t, Mutation::Drop));
            pool.push((entry.name, t, Mutation::PlusOne));
        }
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(count);
    pool
}

/// Compiles a C file to an object next to it with `cc` (or `$CC`).
pub fn compile_c(path: &std::path::Path) -> std::io::Result<std::process::Output> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-c", "-o"])
        .arg(path.with_extension("o"))
        .arg(path)
        .output()
}

/// Floating-point inputs for the SVT family: scalars plus the list `q`.
pub fn svt_inputs(
    eps: f64,
    size: usize,
    t: f64,
    n: f64,
    q: &[f64],
) -> BTreeMap<String, Value<f64>> {
    assert_eq!(q.len(), size);
    let mut m = BTreeMap::new();
    m.insert("eps".to_string(), Value::Num(eps));
    m.insert("size".to_string(), Value::Num(size as f64));
    m.insert("T".to_string(), Value::Num(t));
    m.insert("N".to_string(), Value::Num(n));
    m.insert(
        "q".to_string(),
        Value::list(q.iter().map(|x| Value::Num(*x)).collect()),
    );
    m
}

/// Output is exactly `expected` (a list of booleans, most recent first).
pub fn bools_are(v: &Value<f64>, expected: &[bool]) -> bool {
    match v {
        Value::List(items) => {
            items.len() == expected.len()
                && items
                    .iter()
                    .zip(expected)
                    .all(|(x, e)| *x == Value::Bool(*e))
        }
        _ => false,
    }
}

/// Output holds two equal, nonzero released values.
pub fn two_equal_nonzero(v: &Value<f64>) -> bool {
    match v {
        Value::List(items) => match items.as_slice() {
            [Value::Num(a), Value::Num(b)] => a == b && *a != 0.0,
            _ => false,
        },
        _ => false,
    }
}
