//! Simulated output probability ratios on adjacent inputs.

mod common;

use common::*;
use sdp_core::interp::estimate_privacy_ratio;
use sdp_core::{corpus, parse_program, Value};

#[test]
fn svt_shows_no_violation() {
    let p = parse_program(corpus::get("svt").unwrap().source).unwrap();
    let events: [&[bool]; 3] = [&[true], &[true, false], &[false, false]];
    let pairs = [
        ([0.0, 0.0], [1.0, 1.0]),
        ([0.0, 0.0], [1.0, -1.0]),
        ([1.0, 0.0], [0.0, 1.0]),
    ];
    for (q1, q2) in pairs {
        let in1 = svt_inputs(1.0, 2, 0.0, 1.0, &q1);
        let in2 = svt_inputs(1.0, 2, 0.0, 1.0, &q2);
        for expected in events {
            let event = |v: &Value<f64>| bools_are(v, expected);
            let r = estimate_privacy_ratio(&p, &in1, &in2, &event, 100_000, 1.0, 7, 0.99).unwrap();
            assert!(!r.violation, "{q1:?} vs {q2:?}, output {expected:?}: {r:?}");
            assert!(r.hits[0] > 0 && r.hits[1] > 0, "{expected:?} never seen");
        }
    }
}

#[test]
fn unsafe_svt_violation_is_found() {
    let p = parse_program(corpus::get("svt_unsafe").unwrap().source).unwrap();
    let in1 = svt_inputs(0.1, 2, 0.0, 2.0, &[0.0, 0.0]);
    let in2 = svt_inputs(0.1, 2, 0.0, 2.0, &[1.0, 0.0]);
    let r =
        estimate_privacy_ratio(&p, &in1, &in2, &two_equal_nonzero, 100_000, 0.1, 7, 0.99).unwrap();
    assert!(r.violation, "{r:?}");
}
