mod common;

#[test]
fn correlation_lengths_are_recovered() {
    let (factor, wins) = common::lambda_recovery(5);
    assert!(factor <= 3.0, "worst factor {factor}");
    assert_eq!(wins, 1.0);
}
