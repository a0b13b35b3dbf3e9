//! Emitted C harnesses must compile with the system C compiler.

mod common;

use sdp_core::{corpus, emit_verifier_source, to_target, HarnessConfig};

#[test]
fn benchmark_harnesses_compile() {
    let dir = tempfile::tempdir().unwrap();
    for entry in corpus::benchmarks() {
        let tp = to_target(&common::checked(entry.name));
        let src = emit_verifier_source(&tp, "c-harness", &HarnessConfig::default()).unwrap();
        let path = dir.path().join(format!("{}.c", entry.name));
        std::fs::write(&path, &src).unwrap();
        let out = common::compile_c(&path).expect("running cc");
        assert!(
            out.status.success(),
            "{}:\n{}",
            entry.name,
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
