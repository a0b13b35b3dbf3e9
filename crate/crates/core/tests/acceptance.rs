//! Acceptance run: one PASS or FAIL line per criterion, nonzero exit on
//! any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::props::*;
use common::*;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use sdp_core::interp::estimate_privacy_ratio;
use sdp_core::simplify::normalize_block;
use sdp_core::synth::{describe_annotations, strip_annotations};
use sdp_core::{
    bounded_verify, check_program, check_program_with, corpus, emit_verifier_source, parse_program,
    parse_target, print_block, run_transformed_consistency, synthesize_annotations, to_target,
    CheckOptions, GridConfig, HarnessConfig, Rational, Solver, SynthOptions, Value,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn checks_are_clean() -> Outcome {
    let mut slowest = Duration::ZERO;
    let mut count = 0;
    for entry in corpus::benchmarks() {
        let start = Instant::now();
        let p = parse_program(entry.source).map_err(|e| format!("{}: {e}", entry.name))?;
        let c =
            check_program(&p, &Solver::default()).map_err(|e| format!("{}: {e}", entry.name))?;
        let took = start.elapsed();
        let open = c.summary().open;
        ensure(
            open == 0,
            format!("{}: {open} open obligations", entry.name),
        )?;
        ensure(
            took < Duration::from_secs(1),
            format!("{}: took {}", entry.name, secs(took)),
        )?;
        slowest = slowest.max(took);
        count += 1;
    }
    ensure(count == 9, format!("{count} benchmarks, expected 9"))?;
    Ok(format!(
        "9 benchmarks, 0 open obligations, slowest {}",
        secs(slowest)
    ))
}

fn goldens_match() -> Outcome {
    for (name, golden) in [
        ("noisymax", include_str!("golden/noisymax.target")),
        ("svt", include_str!("golden/svt.target")),
    ] {
        let ours = to_target(&checked(name));
        let ours = print_block(&normalize_block(&ours.program.body), 0);
        let theirs = parse_target(golden).map_err(|e| format!("{name} golden: {e}"))?;
        let theirs = print_block(&normalize_block(&theirs.body), 0);
        ensure(
            ours == theirs,
            format!("{name} differs:\n{ours}\n--- golden ---\n{theirs}"),
        )?;
    }
    Ok("noisymax and svt match".into())
}

fn grid_verification() -> Outcome {
    let start = Instant::now();
    let cfg = GridConfig::default();
    let eps = cfg.eps;
    let mut notes = Vec::new();
    for entry in corpus::benchmarks() {
        let r = bounded_verify(&to_target(&checked(entry.name)), &cfg)
            .map_err(|e| format!("{}: {e}", entry.name))?;
        ensure(
            r.pass(),
            format!(
                "{}: {} failures, complete={}",
                entry.name, r.failure_count, r.complete
            ),
        )?;
        let max = r.max_cost.as_ref().map(|(c, _)| *c);
        match entry.name {
            "noisymax" => ensure(max == Some(eps), format!("noisymax max cost {max:?}"))?,
            "smartsum" => ensure(
                max.is_some_and(|m| m <= Rational::from_integer(2) * eps),
                format!("smartsum max cost {max:?}"),
            )?,
            _ => {}
        }
        if let Some(m) = max {
            notes.push(format!("{}={m}", entry.name));
        }
    }
    let took = start.elapsed();
    ensure(
        took < Duration::from_secs(120),
        format!("took {}", secs(took)),
    )?;
    Ok(format!(
        "all pass in {} (max cost at eps=1: {})",
        secs(took),
        notes.join(" ")
    ))
}

fn negatives() -> Outcome {
    let p = parse_program(corpus::get("gapsvt_wrong").unwrap().source).unwrap();
    match check_program(&p, &Solver::default()) {
        Err(e) if e.rule == "T-Return" => {}
        Err(e) => {
            return Err(format!(
                "gapsvt_wrong failed at {} instead of T-Return",
                e.rule
            ))
        }
        Ok(_) => return Err("gapsvt_wrong was accepted".into()),
    }
    let p = parse_program(corpus::get("svt_unsafe").unwrap().source).unwrap();
    let synth = synthesize_annotations(
        &strip_annotations(&p),
        200,
        &Solver::default(),
        &SynthOptions::default(),
    );
    let exhausted = match &synth {
        Err(f) => format!("no annotation in {} of {} candidates", f.explored, f.space),
        Ok(s) => {
            return Err(format!(
                "svt_unsafe synthesized: {:?}",
                describe_annotations(&s.program)
            ))
        }
    };
    let forced = check_program_with(&p, &Solver::default(), &CheckOptions { force: true })
        .map_err(|e| format!("forced check of svt_unsafe: {e}"))?;
    let r =
        bounded_verify(&to_target(&forced), &GridConfig::default()).map_err(|e| e.to_string())?;
    ensure(!r.pass(), "forced svt_unsafe passed bounded verification")?;
    Ok(format!(
        "gapsvt_wrong rejected at T-Return; svt_unsafe: {exhausted}, forced run has {} verifier failures",
        r.failure_count
    ))
}

fn consistency() -> Outcome {
    for entry in corpus::benchmarks() {
        let c = checked(entry.name);
        for (input, trace) in pairs(&c, 1000, 1) {
            let r = run_transformed_consistency(&c, &input, &trace).map_err(|e| e.to_string())?;
            ensure(
                r.consistent(),
                format!("{}: {:?}", entry.name, r.mismatches),
            )?;
        }
    }
    let mutants = seeded_mutants(0, 5);
    ensure(mutants.len() == 5, "fewer than 5 mutants available")?;
    for (name, target, m) in &mutants {
        let c = checked(name);
        ensure(
            killed(&c, &pairs(&c, 300, 2), *target, *m),
            format!("{name}: {m:?} of write {target} survived"),
        )?;
    }
    Ok("9000 pairs agree, 5/5 seeded mutants killed".into())
}

fn run_prop<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(CASES)
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn properties() -> Outcome {
    run_prop("idempotence", dist_type(), |a| join_idempotent(&a))?;
    run_prop("commutativity", same_base_triple(), |t| {
        join_commutative(&t)
    })?;
    run_prop("associativity", same_base_triple(), |t| {
        join_associative(&t)
    })?;
    run_prop("monotonicity", same_base_triple(), |t| join_monotone(&t))?;
    run_prop("environment join", (env(), env(), env()), |(a, b, c)| {
        env_join_laws(&a, &b, &c)
    })?;
    run_prop("while fixpoint", loop_program(), |s| {
        loop_fixpoint_stable(&s)
    })?;
    Ok(format!(
        "{CASES} cases each: join laws, monotonicity, loop fixpoints"
    ))
}

fn monte_carlo() -> Outcome {
    let svt = parse_program(corpus::get("svt").unwrap().source).unwrap();
    let in1 = svt_inputs(1.0, 2, 0.0, 1.0, &[0.0, 0.0]);
    let in2 = svt_inputs(1.0, 2, 0.0, 1.0, &[1.0, 1.0]);
    for expected in [&[true][..], &[true, false], &[false, false]] {
        let event = |v: &Value<f64>| bools_are(v, expected);
        let r = estimate_privacy_ratio(&svt, &in1, &in2, &event, 100_000, 1.0, 7, 0.99)
            .map_err(|e| e.to_string())?;
        ensure(
            !r.violation,
            format!("svt flagged on {expected:?}: {:?}", r.ratio_bounds),
        )?;
    }
    let bad = parse_program(corpus::get("svt_unsafe").unwrap().source).unwrap();
    let in1 = svt_inputs(0.1, 2, 0.0, 2.0, &[0.0, 0.0]);
    let in2 = svt_inputs(0.1, 2, 0.0, 2.0, &[1.0, 0.0]);
    let mut trials = 10_000;
    while trials <= 1_000_000 {
        let r = estimate_privacy_ratio(&bad, &in1, &in2, &two_equal_nonzero, trials, 0.1, 7, 0.99)
            .map_err(|e| e.to_string())?;
        if r.violation {
            return Ok(format!(
                "svt clean at 1e5 trials; svt_unsafe flagged at {trials} trials (ratio >= {:.1})",
                r.ratio_bounds[0].0.max(r.ratio_bounds[1].0)
            ));
        }
        trials *= 10;
    }
    Err("svt_unsafe not flagged within 1e6 trials".into())
}

fn synthesis() -> Outcome {
    let mut notes = Vec::new();
    for (name, expected) in [
        (
            "noisymax",
            "site 0 (eta): (q[i] + eta > bq || i = 0) ? shadow : aligned; q[i] + eta > bq || i = 0 ? 2 : 0",
        ),
        ("partialsum", "site 0 (eta): aligned; 0 - ^sum"),
    ] {
        let skeleton = strip_annotations(&parse_program(corpus::get(name).unwrap().source).unwrap());
        let start = Instant::now();
        let found = synthesize_annotations(&skeleton, 200, &Solver::default(), &SynthOptions::default())
            .map_err(|e| format!("{name}: {e}"))?;
        let took = start.elapsed();
        let got = describe_annotations(&found.program);
        ensure(got == [expected], format!("{name}: got {got:?}"))?;
        ensure(found.explored <= 200, format!("{name}: {} candidates", found.explored))?;
        ensure(took < Duration::from_secs(60), format!("{name}: took {}", secs(took)))?;
        notes.push(format!("{name} at candidate {} in {}", found.explored, secs(took)));
    }
    Ok(notes.join(", "))
}

fn harnesses_compile() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for entry in corpus::benchmarks() {
        let src = emit_verifier_source(
            &to_target(&checked(entry.name)),
            "c-harness",
            &HarnessConfig::default(),
        )
        .map_err(|e| format!("{}: {e}", entry.name))?;
        let path = dir.path().join(format!("{}.c", entry.name));
        std::fs::write(&path, src).map_err(|e| e.to_string())?;
        let out = compile_c(&path).map_err(|e| format!("cannot run cc: {e}"))?;
        ensure(
            out.status.success(),
            format!("{}: {}", entry.name, String::from_utf8_lossy(&out.stderr)),
        )?;
    }
    Ok("9 harnesses compile with -Wall -Werror".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("type checking", checks_are_clean),
        ("golden transforms", goldens_match),
        ("bounded verification", grid_verification),
        ("negative suite", negatives),
        ("consistency", consistency),
        ("property tests", properties),
        ("monte carlo", monte_carlo),
        ("synthesis", synthesis),
        ("harness compilation", harnesses_compile),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of 9 criteria pass", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
