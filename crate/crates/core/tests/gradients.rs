mod common;

use common::grad_cases::gradient_cases;

#[test]
fn every_op_matches_finite_differences() {
    for case in gradient_cases() {
        println!("{:28} max_rel={:.2e} n={}", case.name, case.report.max_rel_error, case.report.checked);
        assert!(case.report.passed(), "{}: {:?}", case.name, case.report);
    }
}
