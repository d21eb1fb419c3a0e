//! One test per acceptance criterion. Each prints a PASS/FAIL line per check
//! (shown with `--nocapture`) and fails if any check fails.
//!
//! The model-ordering criterion needs eleven full-size trainings and is
//! `#[ignore]`d; run it with `cargo test --release --test acceptance -- --ignored`.

use symflow::harness::checks::{self, CheckOutcome};
use symflow::harness::ordering::{self, OrderingConfig};

fn report(criterion: &str, outcomes: Vec<CheckOutcome>) {
    let passed = outcomes.iter().all(|c| c.passed);
    println!("{} {criterion}", if passed { "PASS" } else { "FAIL" });
    for c in &outcomes {
        println!("    {c}");
    }
    let failed: Vec<String> = outcomes.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
    assert!(failed.is_empty(), "{criterion}:\n{}", failed.join("\n"));
}

#[test]
fn criterion_1_assignment_matches_brute_force() {
    report(
        "assignment solver matches brute force",
        vec![checks::assignment_oracle(1000)],
    );
}

#[test]
fn criterion_2_dtw_matches_exhaustive_paths() {
    report("DTW matches exhaustive path enumeration", vec![checks::dtw_oracle(200)]);
}

#[test]
fn criterion_3_spectral_transport_matches_lp() {
    report(
        "spectral transport matches the LP solution",
        vec![checks::sot_oracle(200)],
    );
}

#[test]
fn criterion_4_gradients_match_finite_differences() {
    report("analytic gradients match finite differences", checks::grad_suite());
}

#[test]
fn criterion_5_symmetries_hold() {
    report(
        "equivariance of the token field and sampler, invariance of the renderer",
        vec![
            checks::dit_equivariance(100),
            checks::sampler_equivariance(10),
            checks::render_invariance(100),
        ],
    );
}

#[test]
fn criterion_6_conditional_symmetry_fixture() {
    report("conditional symmetry fixture", vec![checks::fixture()]);
}

#[test]
fn criterion_7_metric_identities() {
    report("metric identities", vec![checks::metric_identities(50)]);
}

#[test]
#[ignore = "trains eleven full-size models; days of CPU time"]
fn criterion_8_model_ordering() {
    let outcomes = ordering::run(&OrderingConfig::standard()).expect("ordering experiment failed to run");
    report("model ordering on the symmetric and asymmetric tasks", outcomes);
}

#[test]
fn criterion_9_determinism() {
    report(
        "byte-identical datasets, checkpoints and reports",
        vec![checks::determinism()],
    );
}
