mod common;

use common::*;

const TOL: f64 = 1e-4;

#[test]
fn every_primitive_matches_finite_differences() {
    let mut failures = Vec::new();
    for (i, (name, build)) in primitive_cases().into_iter().enumerate() {
        let r = first_order(build, 100, 100 + i as u64);
        if !(r.max_rel_error < TOL) {
            failures.push(format!("{name}: {:.3e}", r.max_rel_error));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn backward_rules_differentiate_correctly() {
    let mut failures = Vec::new();
    for (i, (name, build)) in primitive_cases().into_iter().enumerate() {
        let r = second_order(build, 20, 500 + i as u64);
        if !(r.max_rel_error < TOL) {
            failures.push(format!("{name}: {:.3e}", r.max_rel_error));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn composed_networks_match_finite_differences() {
    for (i, kind) in ["generator", "critic", "classifier"].into_iter().enumerate() {
        let r = network(kind, 10, 900 + i as u64);
        assert!(r.max_rel_error < TOL, "{kind}: {:.3e}", r.max_rel_error);
    }
}

#[test]
fn penalty_gradient_with_respect_to_weights() {
    let small = penalty(50, 7, false);
    assert!(small.max_rel_error < 1e-3, "{:.3e}", small.max_rel_error);
    let full = penalty(5, 8, true);
    assert!(full.max_rel_error < 1e-3, "{:.3e}", full.max_rel_error);
}
