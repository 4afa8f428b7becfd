//! Tape gradients against central finite differences, in `f64`.

mod common;

use common::{grad_cases, run_grad_case};

const TOLERANCE: f64 = 1e-4;
const SEEDS: std::ops::Range<u64> = 0..20;

#[test]
fn every_operator_matches_finite_differences() {
    let mut failures = Vec::new();
    for case in grad_cases() {
        let worst = run_grad_case(&case, SEEDS);
        if worst.is_nan() || worst >= TOLERANCE {
            failures.push(format!("{}: {worst:.3e}", case.name));
        }
    }
    assert!(failures.is_empty(), "relative error above {TOLERANCE}: {failures:?}");
}

#[test]
fn harness_flags_a_straddled_kink() {
    use filmrestore::{Shape, Tensor};
    let x = Tensor::full(Shape::new(1, 1, 1, 2), 1e-6);
    let worst = common::max_grad_error(&[x], &|t, v| t.relu(v[0]), 0);
    assert!(worst > 0.1, "{worst}");
}
