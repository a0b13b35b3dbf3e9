use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use sdp_bench::{checked, names, source};
use sdp_core::interp::QuantizedLaplace;
use sdp_core::synth::strip_annotations;
use sdp_core::target::grid_inputs;
use sdp_core::{
    bounded_verify, check_program, corpus, parse_program, run_source, run_transformed_consistency,
    synthesize_annotations, to_target, GridConfig, NoiseTrace, Solver, SynthOptions,
};

fn parse_and_check(c: &mut Criterion) {
    let mut g = c.benchmark_group("check");
    for name in names() {
        let text = corpus::get(name).unwrap().source;
        g.bench_with_input(BenchmarkId::from_parameter(name), text, |b, text| {
            b.iter(|| {
                let p = parse_program(black_box(text)).unwrap();
                check_program(&p, &Solver::default()).unwrap()
            })
        });
    }
    g.finish();
}

fn transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("to_target");
    for name in names() {
        let checked = checked(name);
        g.bench_function(name, |b| b.iter(|| to_target(black_box(&checked))));
    }
    g.finish();
}

fn verify_small_grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("verify_small");
    g.sample_size(10);
    let cfg = GridConfig {
        threads: 1,
        ..GridConfig::small()
    };
    for name in ["noisymax", "svt", "partialsum", "smartsum"] {
        let tp = to_target(&checked(name));
        g.bench_function(name, |b| b.iter(|| bounded_verify(&tp, &cfg).unwrap()));
    }
    g.finish();
}

fn consistency_pair(c: &mut Criterion) {
    let checked = checked("noisymax");
    let inputs = grid_inputs(&to_target(&checked), &GridConfig::default()).unwrap();
    let input = inputs.last().unwrap().clone();
    let run = run_source(&checked.source, &input, &mut QuantizedLaplace::new(1, 4)).unwrap();
    let trace = NoiseTrace { entries: run.trace };
    c.bench_function("consistency/noisymax", |b| {
        b.iter(|| run_transformed_consistency(&checked, &input, black_box(&trace)).unwrap())
    });
}

fn synth(c: &mut Criterion) {
    let mut g = c.benchmark_group("synth");
    g.sample_size(10);
    for name in ["partialsum", "noisymax"] {
        let skeleton = strip_annotations(&source(name));
        g.bench_function(name, |b| {
            b.iter(|| {
                synthesize_annotations(&skeleton, 200, &Solver::default(), &SynthOptions::default())
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    parse_and_check,
    transform,
    verify_small_grid,
    consistency_pair,
    synth
);
criterion_main!(benches);
