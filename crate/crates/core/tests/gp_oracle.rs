mod common;

use zonegp::emulator::correlation;

#[test]
fn correlation_example() {
    assert!((correlation(&[0.0], &[1.0], &[1.0]) - (-1.0f64).exp()).abs() < 1e-15);
    assert_eq!(correlation(&[0.3, 0.2], &[0.3, 0.2], &[4.0, 9.0]), 1.0);
}

#[test]
fn fifty_small_instances_match_dense_oracle() {
    let (err, secs) = common::gp_oracle_max_error();
    assert!(err <= 1e-10, "max error {err:.3e}");
    assert!(secs <= 10.0);
}
