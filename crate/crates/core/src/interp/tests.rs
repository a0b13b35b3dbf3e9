use super::*;
use crate::constraints::Solver;
use crate::corpus;
use crate::parser::parse_program;
use crate::target::{grid_inputs, to_target, GridConfig};
use crate::typer::check_program;

fn checked(name: &str) -> Checked {
    let p = parse_program(corpus::get(name).unwrap().source).unwrap();
    check_program(&p, &Solver::default()).unwrap()
}

/// `count` (inputs, trace) pairs drawn from the small grid.
fn pairs(c: &Checked, count: usize, seed: u64) -> Vec<(Named, NoiseTrace)> {
    pairs_on(c, &GridConfig::small(), count, seed)
}

fn pairs_on(c: &Checked, grid: &GridConfig, count: usize, seed: u64) -> Vec<(Named, NoiseTrace)> {
    let inputs = grid_inputs(&to_target(c), grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let input = inputs[rng.gen_range(0..inputs.len())].clone();
            let run = run_source(
                &c.source,
                &input,
                &mut QuantizedLaplace::new(seed ^ k as u64, 4),
            )
            .unwrap();
            (input, NoiseTrace { entries: run.trace })
        })
        .collect()
}

#[test]
fn trace_text_round_trips() {
    let t = NoiseTrace {
        entries: vec![(0, Rational::new(-3, 4)), (2, Rational::from_integer(5))],
    };
    assert_eq!(t.to_text(), "0 -3/4\n2 5/1\n");
    assert_eq!(NoiseTrace::parse(&t.to_text()).unwrap(), t);
    assert_eq!(
        NoiseTrace::parse("# c\n\n1 7\n").unwrap().entries,
        vec![(1, Rational::from_integer(7))]
    );
    assert_eq!(NoiseTrace::parse("1 2/0").unwrap_err().line, 1);
    assert!(NoiseTrace::parse("x 1").is_err());
}

#[test]
fn replay_rejects_wrong_traces() {
    let c = checked("svt_n1");
    let (input, trace) = pairs(&c, 1, 3).remove(0);
    assert!(replay_source(&c.source, &input, &trace).is_ok());
    let mut short = trace.clone();
    short.entries.pop();
    assert!(matches!(
        replay_source(&c.source, &input, &short),
        Err(RunError::TraceUnderflow(_))
    ));
    let mut long = trace.clone();
    long.entries.push((1, Rational::from_integer(0)));
    assert_eq!(
        replay_source(&c.source, &input, &long),
        Err(RunError::TraceOverflow(1))
    );
    let mut wrong = trace;
    wrong.entries[0].0 = 7;
    assert!(matches!(
        replay_source(&c.source, &input, &wrong),
        Err(RunError::TraceMismatch { .. })
    ));
}

#[test]
fn benchmarks_are_consistent() {
    for entry in corpus::benchmarks() {
        let c = checked(entry.name);
        for (input, trace) in pairs(&c, 200, 11) {
            let r = run_transformed_consistency(&c, &input, &trace).unwrap();
            assert!(
                r.consistent(),
                "{}: {:?}\ninputs {input:?}\ntrace {}",
                entry.name,
                r.mismatches,
                trace.to_text()
            );
        }
    }
}

fn drop_dist_write(block: &[Cmd], target: usize, seen: &mut usize) -> Vec<Cmd> {
    let mut out = Vec::new();
    for c in block {
        let kind = match &c.kind {
            CmdKind::Assign(LValue::Dist(..), _) => {
                *seen += 1;
                if *seen - 1 == target {
                    continue;
                }
                c.kind.clone()
            }
            CmdKind::If(g, a, b) => CmdKind::If(
                g.clone(),
                drop_dist_write(a, target, seen),
                drop_dist_write(b, target, seen),
            ),
            CmdKind::While(g, b) => CmdKind::While(g.clone(), drop_dist_write(b, target, seen)),
            k => k.clone(),
        };
        out.push(Cmd::at(kind, c.span));
    }
    out
}

#[test]
fn dropped_instrumentation_writes_are_detected() {
    for name in ["noisymax", "partialsum", "smartsum"] {
        let c = checked(name);
        // A reset in SmartSum only shows at a later draw, so lists of
        // length three are needed.
        let samples = pairs_on(&c, &GridConfig::default(), 300, 5);
        let mut writes = 0;
        drop_dist_write(&c.program.body, usize::MAX, &mut writes);
        assert!(writes > 0, "{name}");
        for target in 0..writes {
            let mut mutant = c.clone();
            mutant.program.body = drop_dist_write(&c.program.body, target, &mut 0);
            let caught = samples.iter().any(|(input, trace)| {
                !run_transformed_consistency(&mutant, input, trace)
                    .unwrap()
                    .consistent()
            });
            assert!(caught, "{name}: dropping write {target} went unnoticed");
        }
    }
}

#[test]
fn laplace_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let scale = 2.0;
    let xs: Vec<f64> = (0..n).map(|_| sample_laplace(&mut rng, scale)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let mad = xs.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
    // Var = 2 r^2 for the mean; Var |X| = r^2 for the mean absolute deviation.
    let sd_mean = (2.0 * scale * scale / n as f64).sqrt();
    let sd_mad = (scale * scale / n as f64).sqrt();
    assert!(mean.abs() < 3.0 * sd_mean, "mean {mean}");
    assert!((mad - scale).abs() < 3.0 * sd_mad, "mad {mad}");
}

#[test]
fn clopper_pearson_brackets_the_estimate() {
    let (lo, hi) = clopper_pearson(30, 100, 0.05);
    assert!(lo < 0.3 && 0.3 < hi && lo > 0.2 && hi < 0.41, "{lo} {hi}");
    assert_eq!(clopper_pearson(0, 10, 0.05).0, 0.0);
    assert_eq!(clopper_pearson(10, 10, 0.05).1, 1.0);
}
