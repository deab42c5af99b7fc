mod common;

#[test]
fn five_state_target_and_flat_acceptance() {
    let (tv, acc) = common::mh_five_state(100_000);
    assert!(tv <= 0.02, "TV {tv}");
    assert_eq!(acc, 1.0);
}
