//! End-to-end run of every convergence check on pinned settings.

use plastlab_core::theory;

#[test]
fn full_convergence_suite_is_green() {
    let report = theory::full_suite(7).expect("suite runs");

    assert!(
        report.constants.passed,
        "curvature-constant inequalities violated: {:?}",
        report.constants
    );
    assert_eq!(report.spectrum.len(), 100);
    for (i, r) in report.spectrum.iter().enumerate() {
        assert!(r.passed, "curvature envelope failed on instance {i}: {r:?}");
    }
    assert!(
        report.basin.passed,
        "shrunk-ball mapping violated: {:?}",
        report.basin
    );
    assert!(
        report.sampler.passed,
        "conforming sampler out of bounds: {:?}",
        report.sampler
    );
    assert!(
        report.shift.passed,
        "single-change tracking failed: {:?}",
        report.shift
    );
    assert_eq!(report.sequence.len(), 20);
    for r in &report.sequence {
        assert!(r.passed, "chained task {} failed: {r:?}", r.task);
        assert!(r.final_dist < 1e-6);
    }
    assert!(
        !report.control.hypothesis_ok,
        "oversized-change control was not flagged: {:?}",
        report.control
    );
    assert!(!report.control.passed);
    assert!(report.passed);
}
