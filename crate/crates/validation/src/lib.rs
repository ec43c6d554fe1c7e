//! Pinned tolerances for the acceptance checks and the verdict line they print.

use std::io::Write;

/// Max gap between the entropic transport cost and the LP optimum.
pub const OT_COST_GAP: f64 = 1e-3;
/// Max marginal violation of a converged plan.
pub const OT_MARGINAL: f64 = 1e-9;
pub const OT_SECONDS: f64 = 5.0;
/// Entrywise tolerance of `d·T` against the true permutation.
pub const PERMUTATION_ENTRY: f64 = 1e-2;
pub const KME_TRACE_FORM: f64 = 1e-12;
pub const KDE_QUADRATURE: f64 = 1e-6;
pub const LS_CLOSED_FORM: f64 = 1e-4;
pub const CEL_GRADIENT_REL: f64 = 1e-4;
pub const MEDIAN_ITERATIONS: f64 = 50.0;
/// Required accuracy lead of the full method over each ablation.
pub const ABLATION_MARGIN: f64 = 0.02;
pub const ABLATION_SECONDS: f64 = 120.0;
pub const DELTA_LIMIT_REL: f64 = 1e-4;
pub const TRAJECTORY_EXACT: f64 = 1e-12;

/// Print `PASS`/`FAIL` for a criterion on the process stderr, past the test
/// harness capture, then fail the test if it did not pass.
pub fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] {word} criterion {n} ({name}): {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}
