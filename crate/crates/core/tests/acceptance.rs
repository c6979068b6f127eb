//! Acceptance criteria, one test each. Every test prints a single
//! `[PASS]` / `[FAIL]` line; run with `--nocapture` to see them.

use action_baselines::harness::verify::{self, CriterionOutcome};
use action_baselines::harness::table1_markdown;

fn check(outcome: CriterionOutcome) {
    println!("{outcome}");
    assert!(outcome.passed, "{outcome}");
}

#[test]
fn criterion_1_unbiasedness() {
    check(verify::unbiasedness());
}

#[test]
fn criterion_2_variance_ordering() {
    check(verify::variance_ordering());
}

#[test]
fn criterion_3_gap_identities() {
    check(verify::gap_identities());
}

#[test]
fn criterion_4_target_matching_solve_times() {
    let dir = tempfile::tempdir().unwrap();
    let opts = verify::VerifyOptions::new(dir.path());
    let (outcome, rows) = verify::solve_times(dir.path(), opts.table1_budgets);
    print!("{}", table1_markdown(&rows));
    check(outcome);
}

#[test]
fn criterion_5_gae_telescoping() {
    check(verify::gae_telescoping());
}

#[test]
fn criterion_6_gradient_correctness() {
    check(verify::gradient_correctness());
}

#[test]
fn criterion_7_bias_free_identity() {
    check(verify::bias_free_identity());
}

#[test]
fn criterion_8_marginalization_consistency() {
    check(verify::marginalization_consistency());
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    check(verify::determinism(dir.path()));
}
